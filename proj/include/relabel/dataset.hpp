#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relabel/types.hpp"

namespace relabel {

// Checks the per-task label invariants against the item payload: spans lie
// within the token bounds and do not overlap within a class, boxes have
// positive area, ctr values are 0 or 1. Throws invariant_violation.
void validate_label(const Label& label, TaskKind task, const Payload& payload);

// Item-level invariants: non-empty history ordered by round, payload shape
// matching the task, every historical label valid.
void validate_item(const Item& item, TaskKind task);

// One items.jsonl line (without the trailing newline).
std::string item_record(const Item& item);

// Items sorted by id, one record per line, each terminated by '\n'.
std::string canonical_stream(std::span<const Item> items);

Digest content_hash(std::span<const Item> items);
Digest content_hash(const DatasetVersion& version);

// Validates the items, computes the content hash and assigns a
// content-addressed version id ("v<round>-<12 hex digits>").
DatasetVersion make_version(TaskKind task, int round, std::optional<std::string> parent,
                            std::vector<Item> items,
                            std::string tokenizer = "nfc-lower-whitespace/1");

// Storage: <dir>/manifest.json and <dir>/items.jsonl.
DatasetVersion load_dataset(const std::filesystem::path& dir);
void save_dataset(const DatasetVersion& version, const std::filesystem::path& dir);
std::string manifest_json(const DatasetVersion& version);

// Child version with decisions applied (history entry appended with source
// human-relabel) and drops removed. Decisions must carry a resolved label or a
// new_label. Only train items may be changed; drops only on ctr.
DatasetVersion derive_version(const DatasetVersion& parent, std::span<const ReviewDecision> decisions,
                              std::span<const std::string> drops);

struct DiffEntry {
  std::string item_id;
  std::optional<Label> old_label;  // absent: item only exists in the newer version
  std::optional<Label> new_label;  // absent: dropped

  bool dropped() const { return !new_label.has_value(); }
  bool operator==(const DiffEntry&) const = default;
};

// Versions are related when they share the task and every common item has the
// same origin (first history entry), and one item set contains the other.
std::vector<DiffEntry> diff_versions(const DatasetVersion& a, const DatasetVersion& b);

// Entity classes seen in any tagging label of the version, sorted.
std::vector<std::string> entity_classes(const DatasetVersion& version);

std::vector<std::string> payload_tokens(const Payload& payload);

}  // namespace relabel
