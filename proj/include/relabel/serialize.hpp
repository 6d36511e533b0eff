#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "relabel/types.hpp"

namespace relabel {

// Insertion-ordered so every record is emitted in its documented key order.
using Json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

// Compact single-line rendering (no insignificant whitespace).
std::string dump(const Json& j);

Json to_json(const Span& span);
Json to_json(const Box& box);
Json to_json(const Label& label);
Json to_json(const Payload& payload);
Json to_json(const FlagReason& reason);

Label label_from_json(const Json& j, TaskKind task);
Payload payload_from_json(const Json& j, TaskKind task);
FlagReason reason_from_json(const Json& j);

// items.jsonl record: format, id, split, payload, label, label_history.
Json to_json(const Item& item);
Item item_from_json(const Json& j, TaskKind task);

// preds.jsonl record: format, item_id, prediction, score, model_id, round.
Json to_json(const Prediction& pred);
Prediction prediction_from_json(const Json& j, TaskKind task);

// flags-round-N.jsonl record: format, item_id, round, action, severity, reason.
Json to_json(const NoiseFlag& flag);
NoiseFlag flag_from_json(const Json& j);

Json to_json(const ReviewTask& task);
ReviewTask review_task_from_json(const Json& j, TaskKind task);

// decisions.jsonl record: format, item_id, round, annotator_id, choice,
// new_label, submitted_at, label (resolved, when known).
Json to_json(const ReviewDecision& decision);
ReviewDecision decision_from_json(const Json& j, TaskKind task);

// ISO-8601 UTC with millisecond precision, e.g. 2026-01-02T03:04:05.678Z.
std::string format_timestamp(std::int64_t unix_ms);
std::int64_t parse_timestamp(std::string_view text);

// ---- files ----

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temporary file and renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// Calls parse(json, line_number) for every non-blank line. Parse failures are
// reported as malformed_record with the 1-based line number.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const Json&, int)>& parse);

template <class T>
std::string to_jsonl(const std::vector<T>& records) {
  std::string out;
  for (const auto& r : records) {
    out += dump(to_json(r));
    out += '\n';
  }
  return out;
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path, TaskKind task);
std::vector<NoiseFlag> read_flags(const std::filesystem::path& path);
std::vector<ReviewTask> read_review_tasks(const std::filesystem::path& path, TaskKind task);
std::vector<ReviewDecision> read_decisions(const std::filesystem::path& path, TaskKind task);

}  // namespace relabel
