#include "relabel/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "relabel/error.hpp"
#include "relabel/hash.hpp"
#include "relabel/serialize.hpp"
#include "relabel/tokenize.hpp"

namespace relabel {

namespace {

[[noreturn]] void violation(const std::string& what) {
  throw Error(ErrorCode::invariant_violation, what);
}

}  // namespace

std::vector<std::string> payload_tokens(const Payload& payload) {
  if (const auto* text = std::get_if<std::string>(&payload)) return tokenize(*text);
  return {};
}

void validate_label(const Label& label, TaskKind task, const Payload& payload) {
  if (task_of(label) != task) violation("label kind does not match task " + std::string(to_string(task)));
  switch (task) {
    case TaskKind::classification:
      if (std::get<ClassLabel>(label).name.empty()) violation("empty class name");
      break;
    case TaskKind::tagging: {
      const auto& spans = std::get<SpanSet>(label).spans;
      const int n_tokens = static_cast<int>(payload_tokens(payload).size());
      std::map<std::string, std::vector<std::pair<int, int>>> by_class;
      for (const auto& s : spans) {
        if (s.entity_class.empty()) violation("span with empty entity class");
        if (s.start < 0 || s.start >= s.end || s.end > n_tokens) {
          violation("span [" + std::to_string(s.start) + "," + std::to_string(s.end) +
                    ") outside token bounds 0.." + std::to_string(n_tokens));
        }
        by_class[s.entity_class].emplace_back(s.start, s.end);
      }
      for (auto& [cls, ranges] : by_class) {
        std::sort(ranges.begin(), ranges.end());
        for (std::size_t i = 1; i < ranges.size(); ++i) {
          if (ranges[i].first < ranges[i - 1].second) violation("overlapping " + cls + " spans");
        }
      }
      break;
    }
    case TaskKind::detection:
      for (const auto& b : std::get<BoxSet>(label).boxes) {
        if (!(b.x_min < b.x_max && b.y_min < b.y_max) || !std::isfinite(b.area())) {
          violation("box without positive area");
        }
        if (b.object_class.empty()) violation("box with empty object class");
      }
      break;
    case TaskKind::generation:
      break;
    case TaskKind::ctr: {
      const int v = std::get<ClickLabel>(label).value;
      if (v != 0 && v != 1) violation("ctr label must be exactly 0 or 1");
      break;
    }
  }
}

void validate_item(const Item& item, TaskKind task) {
  if (item.id.empty()) violation("item with empty id");
  const bool wants_features = task == TaskKind::ctr;
  if (wants_features != std::holds_alternative<FeatureMap>(item.payload)) {
    violation("item '" + item.id + "' payload does not match task " + std::string(to_string(task)));
  }
  if (item.label_history.empty()) violation("item '" + item.id + "' has empty label_history");
  int last_round = -1;
  for (const auto& e : item.label_history) {
    if (e.round < last_round) violation("item '" + item.id + "' label_history out of round order");
    last_round = e.round;
    try {
      validate_label(e.label, task, item.payload);
    } catch (const Error& err) {
      violation("item '" + item.id + "': " + err.what());
    }
  }
}

std::string item_record(const Item& item) { return dump(to_json(item)); }

std::string canonical_stream(std::span<const Item> items) {
  std::vector<const Item*> sorted;
  sorted.reserve(items.size());
  for (const auto& i : items) sorted.push_back(&i);
  std::sort(sorted.begin(), sorted.end(), [](const Item* a, const Item* b) { return a->id < b->id; });
  std::string out;
  for (const Item* i : sorted) {
    out += item_record(*i);
    out += '\n';
  }
  return out;
}

Digest content_hash(std::span<const Item> items) { return sha256(canonical_stream(items)); }

Digest content_hash(const DatasetVersion& version) { return content_hash(version.items); }

DatasetVersion make_version(TaskKind task, int round, std::optional<std::string> parent,
                            std::vector<Item> items, std::string tokenizer) {
  if (round < 0) violation("negative round");
  if ((round == 0) != !parent.has_value()) {
    violation("parent_version must be absent exactly for round 0");
  }
  std::unordered_set<std::string_view> seen;
  for (const auto& item : items) {
    if (!seen.insert(item.id).second) {
      throw Error(ErrorCode::duplicate_id, "duplicate item id '" + item.id + "'");
    }
    validate_item(item, task);
  }
  DatasetVersion v;
  v.task = task;
  v.round = round;
  v.parent_version = std::move(parent);
  v.items = std::move(items);
  v.tokenizer = std::move(tokenizer);
  v.content_hash = content_hash(v.items);
  v.version_id = "v" + std::to_string(round) + "-" + v.content_hash.hex().substr(0, 12);
  return v;
}

std::string manifest_json(const DatasetVersion& version) {
  Json m;
  m["format"] = kFormatVersion;
  m["version_id"] = version.version_id;
  m["parent_version"] = version.parent_version ? Json(*version.parent_version) : Json(nullptr);
  m["task"] = to_string(version.task);
  m["round"] = version.round;
  m["item_count"] = version.items.size();
  m["content_hash"] = version.content_hash.hex();
  m["tokenizer"] = version.tokenizer;
  return m.dump(2) + "\n";
}

void save_dataset(const DatasetVersion& version, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::path staging = dir;
  staging += ".staging";
  fs::remove_all(staging);
  fs::create_directories(staging);
  std::string items;
  for (const auto& item : version.items) {
    items += item_record(item);
    items += '\n';
  }
  write_file_atomic(staging / "items.jsonl", items);
  write_file_atomic(staging / "manifest.json", manifest_json(version));
  if (dir.has_parent_path()) fs::create_directories(dir.parent_path());
  fs::remove_all(dir);
  std::error_code ec;
  fs::rename(staging, dir, ec);
  if (ec) throw Error(ErrorCode::io, "cannot publish " + dir.string() + ": " + ec.message());
}

DatasetVersion load_dataset(const std::filesystem::path& dir) {
  Json manifest;
  try {
    manifest = Json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_record, "manifest.json: " + std::string(e.what()));
  }
  TaskKind task;
  int round = 0;
  std::optional<std::string> parent;
  std::string expected_hash;
  std::string tokenizer;
  std::size_t item_count = 0;
  try {
    if (manifest.value("format", 0) != kFormatVersion) {
      throw Error(ErrorCode::malformed_record, "manifest.json: unsupported format version");
    }
    task = parse_task_kind(manifest.at("task").get<std::string>());
    round = manifest.at("round").get<int>();
    if (!manifest.at("parent_version").is_null()) parent = manifest.at("parent_version").get<std::string>();
    expected_hash = manifest.at("content_hash").get<std::string>();
    tokenizer = manifest.at("tokenizer").get<std::string>();
    item_count = manifest.at("item_count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_record, "manifest.json: " + std::string(e.what()));
  } catch (const Error& e) {
    throw Error(ErrorCode::malformed_record, "manifest.json: " + std::string(e.what()));
  }

  std::vector<Item> items;
  std::unordered_set<std::string> seen;
  for_each_jsonl(dir / "items.jsonl", [&](const Json& j, int) {
    Item item = item_from_json(j, task);
    if (!seen.insert(item.id).second) {
      throw Error(ErrorCode::duplicate_id, "duplicate item id '" + item.id + "'");
    }
    validate_item(item, task);
    items.push_back(std::move(item));
  });
  if (items.size() != item_count) {
    throw Error(ErrorCode::malformed_record, "manifest item_count " + std::to_string(item_count) +
                                                 " but items.jsonl has " + std::to_string(items.size()));
  }
  DatasetVersion v = make_version(task, round, std::move(parent), std::move(items), tokenizer);
  if (v.content_hash.hex() != expected_hash) {
    throw Error(ErrorCode::hash_mismatch, "content hash mismatch: manifest " + expected_hash +
                                              ", recomputed " + v.content_hash.hex());
  }
  const std::string stored_id = manifest.value("version_id", std::string());
  if (!stored_id.empty()) v.version_id = stored_id;
  return v;
}

DatasetVersion derive_version(const DatasetVersion& parent, std::span<const ReviewDecision> decisions,
                              std::span<const std::string> drops) {
  std::unordered_map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < parent.items.size(); ++i) index.emplace(parent.items[i].id, i);

  auto lookup = [&](const std::string& id) -> std::size_t {
    auto it = index.find(id);
    if (it == index.end()) throw Error(ErrorCode::unknown_item, "unknown item id '" + id + "'");
    if (parent.items[it->second].split == Split::dev) {
      violation("item '" + id + "' is in the frozen dev split");
    }
    return it->second;
  };

  if (!drops.empty() && parent.task != TaskKind::ctr) {
    throw Error(ErrorCode::invalid_argument, "drops are only permitted for the ctr task");
  }

  const int child_round = parent.round + 1;
  std::vector<std::optional<Label>> new_labels(parent.items.size());
  std::vector<bool> dropped(parent.items.size(), false);
  for (const auto& d : decisions) {
    const std::size_t i = lookup(d.item_id);
    if (new_labels[i]) {
      throw Error(ErrorCode::duplicate_decision, "two decisions for item '" + d.item_id + "'");
    }
    if (d.resolved_label) {
      new_labels[i] = *d.resolved_label;
    } else if (d.choice == Choice::new_label && d.new_label) {
      new_labels[i] = *d.new_label;
    } else if (d.choice == Choice::keep_previous) {
      new_labels[i] = parent.items[i].label();
    } else {
      throw Error(ErrorCode::invalid_argument,
                  "decision for '" + d.item_id + "' has no resolved label");
    }
    validate_label(*new_labels[i], parent.task, parent.items[i].payload);
  }
  for (const auto& id : drops) {
    const std::size_t i = lookup(id);
    if (dropped[i]) throw Error(ErrorCode::duplicate_decision, "item '" + id + "' dropped twice");
    if (new_labels[i]) {
      throw Error(ErrorCode::duplicate_decision, "item '" + id + "' both relabeled and dropped");
    }
    dropped[i] = true;
  }

  std::vector<Item> items;
  items.reserve(parent.items.size() - drops.size());
  for (std::size_t i = 0; i < parent.items.size(); ++i) {
    if (dropped[i]) continue;
    Item item = parent.items[i];
    if (new_labels[i]) {
      item.label_history.push_back(
          LabelEvent{child_round, LabelSource::human_relabel, std::move(*new_labels[i])});
    }
    items.push_back(std::move(item));
  }
  return make_version(parent.task, child_round, parent.version_id, std::move(items), parent.tokenizer);
}

std::vector<DiffEntry> diff_versions(const DatasetVersion& a, const DatasetVersion& b) {
  if (a.task != b.task) {
    throw Error(ErrorCode::unrelated_versions, "versions have different tasks");
  }
  std::unordered_map<std::string_view, const Item*> in_b;
  for (const auto& item : b.items) in_b.emplace(item.id, &item);
  std::unordered_set<std::string_view> in_a;

  bool a_has_extra = false;
  std::size_t common = 0;
  for (const auto& item : a.items) {
    in_a.insert(item.id);
    auto it = in_b.find(item.id);
    if (it == in_b.end()) {
      a_has_extra = true;
      continue;
    }
    ++common;
    if (item.label_history.front() != it->second->label_history.front()) {
      throw Error(ErrorCode::unrelated_versions, "item '" + item.id + "' has a different origin");
    }
  }
  const bool b_has_extra = common < b.items.size();
  if ((a_has_extra && b_has_extra) || (common == 0 && !a.items.empty() && !b.items.empty())) {
    throw Error(ErrorCode::unrelated_versions, "versions do not share lineage");
  }

  std::vector<DiffEntry> out;
  for (const auto& item : a.items) {
    auto it = in_b.find(item.id);
    if (it == in_b.end()) {
      out.push_back(DiffEntry{item.id, item.label(), std::nullopt});
    } else if (item.label() != it->second->label()) {
      out.push_back(DiffEntry{item.id, item.label(), it->second->label()});
    }
  }
  for (const auto& item : b.items) {
    if (!in_a.count(item.id)) out.push_back(DiffEntry{item.id, std::nullopt, item.label()});
  }
  return out;
}

std::vector<std::string> entity_classes(const DatasetVersion& version) {
  std::set<std::string> classes;
  if (version.task == TaskKind::tagging) {
    for (const auto& item : version.items) {
      for (const auto& e : item.label_history) {
        for (const auto& s : std::get<SpanSet>(e.label).spans) classes.insert(s.entity_class);
      }
    }
  }
  return {classes.begin(), classes.end()};
}

}  // namespace relabel
