#include "relabel/types.hpp"

#include <algorithm>

#include "relabel/error.hpp"

namespace relabel {

namespace {

template <class Enum, std::size_t N>
Enum parse_enum(std::string_view text, const std::array<std::string_view, N>& names,
                std::string_view what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == text) return static_cast<Enum>(i);
  }
  throw Error(ErrorCode::invalid_argument,
              "unknown " + std::string(what) + " '" + std::string(text) + "'");
}

constexpr std::array<std::string_view, 5> kTaskNames = {"classification", "tagging", "detection",
                                                        "generation", "ctr"};
constexpr std::array<std::string_view, 3> kSourceNames = {"human", "human-relabel", "import"};
constexpr std::array<std::string_view, 2> kSplitNames = {"train", "dev"};
constexpr std::array<std::string_view, 2> kModeNames = {"choice", "open"};
constexpr std::array<std::string_view, 3> kChoiceNames = {"keep_previous", "accept_model",
                                                          "new_label"};

}  // namespace

std::string_view to_string(TaskKind task) { return kTaskNames.at(static_cast<std::size_t>(task)); }
TaskKind parse_task_kind(std::string_view text) {
  return parse_enum<TaskKind>(text, kTaskNames, "task");
}

std::string_view to_string(LabelSource source) {
  return kSourceNames.at(static_cast<std::size_t>(source));
}
LabelSource parse_label_source(std::string_view text) {
  return parse_enum<LabelSource>(text, kSourceNames, "label source");
}

std::string_view to_string(Split split) { return kSplitNames.at(static_cast<std::size_t>(split)); }
Split parse_split(std::string_view text) { return parse_enum<Split>(text, kSplitNames, "split"); }

std::string_view to_string(ReviewMode mode) { return kModeNames.at(static_cast<std::size_t>(mode)); }
ReviewMode parse_review_mode(std::string_view text) {
  return parse_enum<ReviewMode>(text, kModeNames, "review mode");
}

ReviewMode default_review_mode(TaskKind task) {
  switch (task) {
    case TaskKind::generation:
    case TaskKind::tagging:
      return ReviewMode::choice;
    default:
      return ReviewMode::open;
  }
}

std::string_view to_string(Choice choice) {
  return kChoiceNames.at(static_cast<std::size_t>(choice));
}
Choice parse_choice(std::string_view text) { return parse_enum<Choice>(text, kChoiceNames, "choice"); }

std::string_view to_string(FlagAction action) {
  return action == FlagAction::relabel ? "relabel" : "drop";
}

std::string_view reason_kind(const FlagReason& reason) {
  constexpr std::array<std::string_view, 5> kinds = {"label-mismatch", "span-mismatch",
                                                     "box-mismatch", "generation-mismatch",
                                                     "ctr-disagreement"};
  return kinds.at(reason.index());
}

std::string Digest::hex() const {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(64);
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xf]);
  }
  return out;
}

Digest Digest::from_hex(std::string_view hex) {
  auto nibble = [&](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw Error(ErrorCode::malformed_record, "invalid hex digit in digest");
  };
  if (hex.size() != 64) throw Error(ErrorCode::malformed_record, "digest must be 64 hex digits");
  Digest d;
  for (std::size_t i = 0; i < 32; ++i) {
    d.bytes[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
  }
  return d;
}

const Item* DatasetVersion::find(std::string_view id) const {
  auto it = std::find_if(items.begin(), items.end(), [&](const Item& i) { return i.id == id; });
  return it == items.end() ? nullptr : &*it;
}

}  // namespace relabel
