#include "relabel/error.hpp"

namespace relabel {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::malformed_record: return "malformed-record";
    case ErrorCode::hash_mismatch: return "hash-mismatch";
    case ErrorCode::duplicate_id: return "duplicate-id";
    case ErrorCode::invariant_violation: return "invariant-violation";
    case ErrorCode::unknown_item: return "unknown-item";
    case ErrorCode::missing_prediction: return "missing-prediction";
    case ErrorCode::duplicate_prediction: return "duplicate-prediction";
    case ErrorCode::duplicate_decision: return "duplicate-decision";
    case ErrorCode::task_mismatch: return "task-mismatch";
    case ErrorCode::unsupported_task: return "unsupported-task";
    case ErrorCode::unrelated_versions: return "unrelated-versions";
    case ErrorCode::no_open_round: return "no-open-round";
    case ErrorCode::closed_round: return "closed-round";
    case ErrorCode::round_still_open: return "round-still-open";
    case ErrorCode::unknown_round: return "unknown-round";
    case ErrorCode::stale_round: return "stale-round";
    case ErrorCode::lease_conflict: return "lease-conflict";
    case ErrorCode::store_locked: return "store-locked";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

int exit_code(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::malformed_record:
    case ErrorCode::hash_mismatch:
    case ErrorCode::store_locked:
    case ErrorCode::io:
      return 2;
    default:
      return 1;
  }
}

}  // namespace relabel
