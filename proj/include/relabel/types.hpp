#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace relabel {

// Alternative order matches the Label variant below.
enum class TaskKind { classification = 0, tagging = 1, detection = 2, generation = 3, ctr = 4 };

std::string_view to_string(TaskKind task);
TaskKind parse_task_kind(std::string_view text);

struct Span {
  int start = 0;  // inclusive token index
  int end = 0;    // exclusive token index
  std::string entity_class;

  auto operator<=>(const Span&) const = default;
};

struct Box {
  double x_min = 0;
  double y_min = 0;
  double x_max = 0;
  double y_max = 0;
  std::string object_class;

  double area() const { return (x_max - x_min) * (y_max - y_min); }
  auto operator<=>(const Box&) const = default;
};

struct ClassLabel {
  std::string name;
  auto operator<=>(const ClassLabel&) const = default;
};

struct SpanSet {
  std::vector<Span> spans;
  auto operator<=>(const SpanSet&) const = default;
};

struct BoxSet {
  std::vector<Box> boxes;
  auto operator<=>(const BoxSet&) const = default;
};

struct TextLabel {
  std::string text;
  auto operator<=>(const TextLabel&) const = default;
};

struct ClickLabel {
  int value = 0;  // exactly 0 or 1
  auto operator<=>(const ClickLabel&) const = default;
};

using Label = std::variant<ClassLabel, SpanSet, BoxSet, TextLabel, ClickLabel>;

inline TaskKind task_of(const Label& label) { return static_cast<TaskKind>(label.index()); }

// Text for classification/tagging/generation, an opaque image path for
// detection, named real features for ctr.
using FeatureMap = std::map<std::string, double>;
using Payload = std::variant<std::string, FeatureMap>;

enum class LabelSource { human, human_relabel, import };
enum class Split { train, dev };

std::string_view to_string(LabelSource source);
LabelSource parse_label_source(std::string_view text);
std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct LabelEvent {
  int round = 0;
  LabelSource source = LabelSource::human;
  Label label;

  bool operator==(const LabelEvent&) const = default;
};

struct Item {
  std::string id;
  Payload payload;
  std::vector<LabelEvent> label_history;  // non-empty, ordered by round
  Split split = Split::train;

  const Label& label() const { return label_history.back().label; }
  bool operator==(const Item&) const = default;
};

struct Digest {
  std::array<std::uint8_t, 32> bytes{};

  std::string hex() const;
  static Digest from_hex(std::string_view hex);
  auto operator<=>(const Digest&) const = default;
};

struct DatasetVersion {
  std::string version_id;
  std::optional<std::string> parent_version;
  TaskKind task = TaskKind::classification;
  int round = 0;
  std::vector<Item> items;
  Digest content_hash;
  std::string tokenizer;

  const Item* find(std::string_view id) const;
};

struct Prediction {
  std::string item_id;
  Label value;
  std::optional<double> score;
  std::string model_id;
  int round = 0;

  bool operator==(const Prediction&) const = default;
};

// ---- noise flags ----

struct LabelMismatch {
  std::string predicted;
  std::string human;
  bool operator==(const LabelMismatch&) const = default;
};

struct SpanMismatch {
  std::string entity_class;
  std::vector<Span> missing;   // gold only
  std::vector<Span> spurious;  // model only
  bool operator==(const SpanMismatch&) const = default;
};

struct LowIouPair {
  int human_index = 0;
  int model_index = 0;
  double iou = 0;
  bool operator==(const LowIouPair&) const = default;
};

struct BoxMismatch {
  std::vector<Box> unmatched_human;
  std::vector<Box> unmatched_model;
  std::vector<LowIouPair> low_iou_pairs;
  bool operator==(const BoxMismatch&) const = default;
};

struct GenerationMismatch {
  std::string metric;  // "common-token" or "bleu"
  double value = 0;
  bool operator==(const GenerationMismatch&) const = default;
};

struct CtrDisagreement {
  double score = 0;
  int label = 0;
  double gap = 0;
  bool operator==(const CtrDisagreement&) const = default;
};

using FlagReason =
    std::variant<LabelMismatch, SpanMismatch, BoxMismatch, GenerationMismatch, CtrDisagreement>;

std::string_view reason_kind(const FlagReason& reason);

enum class FlagAction { relabel, drop };
std::string_view to_string(FlagAction action);

struct NoiseFlag {
  std::string item_id;
  int round = 0;
  FlagReason reason;
  double severity = 1.0;
  FlagAction action = FlagAction::relabel;

  bool operator==(const NoiseFlag&) const = default;
};

// ---- review ----

enum class ReviewMode { choice, open };
std::string_view to_string(ReviewMode mode);
ReviewMode parse_review_mode(std::string_view text);
ReviewMode default_review_mode(TaskKind task);

struct ReviewTask {
  std::string item_id;
  int round = 0;
  Payload payload;
  Label previous_human_label;
  Label model_reference;
  FlagReason reason;
  double severity = 1.0;
  ReviewMode mode = ReviewMode::open;
  int queue_position = 0;

  bool operator==(const ReviewTask&) const = default;
};

enum class Choice { keep_previous, accept_model, new_label };
std::string_view to_string(Choice choice);
Choice parse_choice(std::string_view text);

struct ReviewDecision {
  std::string item_id;
  int round = 0;
  std::string annotator_id;
  Choice choice = Choice::keep_previous;
  std::optional<Label> new_label;       // only with Choice::new_label
  std::int64_t submitted_at_ms = 0;     // unix epoch milliseconds
  // The concrete label the decision resolves to. Filled in by resolution
  // from the queued references; derive_version requires it.
  std::optional<Label> resolved_label;

  bool operator==(const ReviewDecision&) const = default;
};

}  // namespace relabel
