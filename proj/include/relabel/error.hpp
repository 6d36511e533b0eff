#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace relabel {

enum class ErrorCode {
  invalid_argument,
  malformed_record,
  hash_mismatch,
  duplicate_id,
  invariant_violation,
  unknown_item,
  missing_prediction,
  duplicate_prediction,
  duplicate_decision,
  task_mismatch,
  unsupported_task,
  unrelated_versions,
  no_open_round,
  closed_round,
  round_still_open,
  unknown_round,
  stale_round,
  lease_conflict,
  store_locked,
  io,
};

std::string_view to_string(ErrorCode code);

// Every failure surfaced by the library carries a code so callers (the CLI,
// the HTTP layer) can map it without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// 1 = validation error, 2 = I/O or format error.
int exit_code(ErrorCode code) noexcept;

}  // namespace relabel
