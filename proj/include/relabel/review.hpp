#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "relabel/types.hpp"

namespace relabel {

// The concrete label a decision stands for, given the task it answers.
// keep_previous -> previous human label, accept_model -> model reference,
// new_label -> the submitted label (open mode only).
Label resolve_label(const ReviewDecision& decision, const ReviewTask& task);

// One decision per decided item: latest submitted_at wins, ties go to the
// lexicographically greatest annotator_id. Output follows queue order and
// carries resolved labels. Pure function of the log.
std::vector<ReviewDecision> resolve_decisions(std::span<const ReviewDecision> log,
                                              std::span<const ReviewTask> queue);

// Structural check of a decision against its task: choice allowed by the
// mode, new_label present exactly when chosen, label invariants hold.
void validate_decision(const ReviewDecision& decision, const ReviewTask& task, TaskKind kind);

struct RoundStats {
  int round = 0;
  int queued = 0;
  int leased = 0;
  int decided = 0;
  int remaining = 0;
  bool open = false;
  std::map<std::string, int> by_reason;
};

enum class SubmitStatus { recorded, duplicate };

using Clock = std::function<std::chrono::system_clock::time_point()>;

// Serves the open round's review queue out of a loop store. Leases live in
// memory; decisions are appended to round-N/decision-log.jsonl. All public
// operations are serialized by one mutex, so leasing and submission are
// linearizable.
class ReviewService {
 public:
  explicit ReviewService(std::filesystem::path store_root, Clock clock = {},
                         std::chrono::milliseconds lease_window = std::chrono::minutes(10));

  std::optional<ReviewTask> lease_next(const std::string& annotator_id);
  SubmitStatus submit_decision(ReviewDecision decision);
  std::vector<ReviewDecision> resolve_decisions(int round);
  RoundStats round_stats(int round);
  void close_round(int round);

  TaskKind task() const { return task_; }

 private:
  struct Lease {
    std::string annotator_id;
    std::chrono::system_clock::time_point expires;
  };
  struct RoundData {
    std::vector<ReviewTask> queue;
    std::unordered_map<std::string, std::size_t> position;
    std::vector<ReviewDecision> log;
    std::unordered_map<std::string, Lease> leases;
    bool closed = false;
  };

  std::optional<int> open_round() const;
  RoundData& round_data(int round);
  bool lease_active(const RoundData& data, const std::string& item_id) const;
  std::chrono::system_clock::time_point now() const;

  std::filesystem::path root_;
  Clock clock_;
  std::chrono::milliseconds lease_window_;
  TaskKind task_;
  std::mutex mutex_;
  std::map<int, RoundData> rounds_;
};

}  // namespace relabel
