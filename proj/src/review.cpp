#include "relabel/review.hpp"

#include <algorithm>
#include <fstream>

#include "relabel/dataset.hpp"
#include "relabel/error.hpp"
#include "relabel/loop.hpp"
#include "relabel/serialize.hpp"

namespace fs = std::filesystem;

namespace relabel {

Label resolve_label(const ReviewDecision& decision, const ReviewTask& task) {
  switch (decision.choice) {
    case Choice::keep_previous:
      return task.previous_human_label;
    case Choice::accept_model:
      return task.model_reference;
    case Choice::new_label:
      if (!decision.new_label) {
        throw Error(ErrorCode::invalid_argument, "new_label choice without a label");
      }
      return *decision.new_label;
  }
  throw Error(ErrorCode::invalid_argument, "unknown choice");
}

void validate_decision(const ReviewDecision& decision, const ReviewTask& task, TaskKind kind) {
  if (decision.annotator_id.empty()) {
    throw Error(ErrorCode::invalid_argument, "decision without annotator_id");
  }
  if (decision.choice == Choice::new_label) {
    if (task.mode != ReviewMode::open) {
      throw Error(ErrorCode::invalid_argument,
                  "item '" + decision.item_id + "' is a choice question; new_label is not allowed");
    }
    if (!decision.new_label) {
      throw Error(ErrorCode::invalid_argument, "new_label choice without a label");
    }
    validate_label(*decision.new_label, kind, task.payload);
  } else if (decision.new_label) {
    throw Error(ErrorCode::invalid_argument, "new_label given with choice " +
                                                 std::string(to_string(decision.choice)));
  }
}

std::vector<ReviewDecision> resolve_decisions(std::span<const ReviewDecision> log,
                                              std::span<const ReviewTask> queue) {
  std::unordered_map<std::string_view, const ReviewDecision*> winner;
  for (const auto& d : log) {
    auto [it, inserted] = winner.try_emplace(d.item_id, &d);
    if (inserted) continue;
    const ReviewDecision* cur = it->second;
    if (d.submitted_at_ms > cur->submitted_at_ms ||
        (d.submitted_at_ms == cur->submitted_at_ms && d.annotator_id > cur->annotator_id)) {
      it->second = &d;
    }
  }
  std::vector<ReviewDecision> out;
  for (const auto& task : queue) {
    auto it = winner.find(task.item_id);
    if (it == winner.end()) continue;
    ReviewDecision d = *it->second;
    d.resolved_label = resolve_label(d, task);
    out.push_back(std::move(d));
  }
  return out;
}

// ---- service ----

ReviewService::ReviewService(fs::path store_root, Clock clock, std::chrono::milliseconds lease_window)
    : root_(std::move(store_root)),
      clock_(clock ? std::move(clock) : Clock([] { return std::chrono::system_clock::now(); })),
      lease_window_(lease_window) {
  const LoopState state = read_state(root_);
  const Json manifest = Json::parse(read_file(root_ / "versions" / state.current_version / "manifest.json"));
  task_ = parse_task_kind(manifest.at("task").get<std::string>());
}

std::chrono::system_clock::time_point ReviewService::now() const { return clock_(); }

std::optional<int> ReviewService::open_round() const {
  const LoopState state = read_state(root_);
  if (!state.open_round) return std::nullopt;
  const int round = *state.open_round;
  if (fs::exists(root_ / ("round-" + std::to_string(round)) / "CLOSED")) return std::nullopt;
  return round;
}

ReviewService::RoundData& ReviewService::round_data(int round) {
  auto it = rounds_.find(round);
  const fs::path dir = root_ / ("round-" + std::to_string(round));
  if (it == rounds_.end()) {
    if (round < 1 || !fs::exists(dir / "queue.jsonl")) {
      throw Error(ErrorCode::unknown_round, "unknown round " + std::to_string(round));
    }
    RoundData data;
    data.queue = read_review_tasks(dir / "queue.jsonl", task_);
    for (std::size_t i = 0; i < data.queue.size(); ++i) data.position.emplace(data.queue[i].item_id, i);
    if (fs::exists(dir / "decision-log.jsonl")) data.log = read_decisions(dir / "decision-log.jsonl", task_);
    it = rounds_.emplace(round, std::move(data)).first;
  }
  // Closure can happen out of band (merge from the CLI).
  it->second.closed = fs::exists(dir / "CLOSED");
  return it->second;
}

bool ReviewService::lease_active(const RoundData& data, const std::string& item_id) const {
  auto it = data.leases.find(item_id);
  return it != data.leases.end() && it->second.expires > now();
}

std::optional<ReviewTask> ReviewService::lease_next(const std::string& annotator_id) {
  if (annotator_id.empty()) throw Error(ErrorCode::invalid_argument, "annotator id is required");
  std::lock_guard lock(mutex_);
  const auto round = open_round();
  if (!round) throw Error(ErrorCode::no_open_round, "no open review round");
  RoundData& data = round_data(*round);
  if (data.closed) throw Error(ErrorCode::no_open_round, "no open review round");

  std::unordered_map<std::string_view, bool> decided;
  for (const auto& d : data.log) decided[d.item_id] = true;
  for (const auto& task : data.queue) {
    if (decided.count(task.item_id) || lease_active(data, task.item_id)) continue;
    data.leases[task.item_id] = Lease{annotator_id, now() + lease_window_};
    return task;
  }
  return std::nullopt;
}

SubmitStatus ReviewService::submit_decision(ReviewDecision decision) {
  std::lock_guard lock(mutex_);
  RoundData& data = round_data(decision.round);
  if (data.closed) {
    throw Error(ErrorCode::closed_round, "round " + std::to_string(decision.round) + " is closed");
  }
  auto pos = data.position.find(decision.item_id);
  if (pos == data.position.end()) {
    throw Error(ErrorCode::unknown_item, "item '" + decision.item_id + "' is not queued in round " +
                                             std::to_string(decision.round));
  }
  const ReviewTask& task = data.queue[pos->second];
  validate_decision(decision, task, task_);
  decision.resolved_label.reset();

  for (const auto& d : data.log) {
    if (d.item_id == decision.item_id && d.annotator_id == decision.annotator_id &&
        d.choice == decision.choice && d.new_label == decision.new_label) {
      return SubmitStatus::duplicate;
    }
  }
  auto lease = data.leases.find(decision.item_id);
  if (lease != data.leases.end() && lease->second.expires > now() &&
      lease->second.annotator_id != decision.annotator_id) {
    throw Error(ErrorCode::lease_conflict,
                "item '" + decision.item_id + "' is leased to another annotator");
  }
  if (decision.submitted_at_ms < 0) {
    decision.submitted_at_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                   now().time_since_epoch())
                                   .count();
  }

  const fs::path log_path = root_ / ("round-" + std::to_string(decision.round)) / "decision-log.jsonl";
  {
    std::ofstream out(log_path, std::ios::app | std::ios::binary);
    if (!out) throw Error(ErrorCode::io, "cannot append to " + log_path.string());
    out << dump(to_json(decision)) << '\n';
    out.flush();
    if (!out) throw Error(ErrorCode::io, "short write to " + log_path.string());
  }
  data.log.push_back(std::move(decision));
  data.leases.erase(data.log.back().item_id);
  return SubmitStatus::recorded;
}

std::vector<ReviewDecision> ReviewService::resolve_decisions(int round) {
  std::lock_guard lock(mutex_);
  RoundData& data = round_data(round);
  if (!data.closed) {
    throw Error(ErrorCode::round_still_open, "round " + std::to_string(round) + " is still open");
  }
  return relabel::resolve_decisions(data.log, data.queue);
}

RoundStats ReviewService::round_stats(int round) {
  std::lock_guard lock(mutex_);
  RoundData& data = round_data(round);
  RoundStats stats;
  stats.round = round;
  stats.open = !data.closed && open_round() == round;
  stats.queued = static_cast<int>(data.queue.size());
  std::unordered_map<std::string_view, bool> decided;
  for (const auto& d : data.log) decided[d.item_id] = true;
  for (const auto& task : data.queue) {
    ++stats.by_reason[std::string(reason_kind(task.reason))];
    if (decided.count(task.item_id)) {
      ++stats.decided;
    } else if (stats.open && lease_active(data, task.item_id)) {
      ++stats.leased;
    }
  }
  stats.remaining = stats.queued - stats.decided - stats.leased;
  return stats;
}

void ReviewService::close_round(int round) {
  std::lock_guard lock(mutex_);
  RoundData& data = round_data(round);
  if (data.closed) return;
  write_file_atomic(root_ / ("round-" + std::to_string(round)) / "CLOSED", "");
  data.closed = true;
  data.leases.clear();
}

}  // namespace relabel
