#include "relabel/loop.hpp"

#include <algorithm>
#include <cstdlib>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include "relabel/dataset.hpp"
#include "relabel/error.hpp"
#include "relabel/metrics.hpp"
#include "relabel/review.hpp"
#include "relabel/serialize.hpp"
#include "relabel/tokenize.hpp"

namespace fs = std::filesystem;

namespace relabel {

namespace {

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::optional<double> number_or_null(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<double>();
}

Json config_json(const DetectorConfig& c) {
  Json j;
  j["task"] = to_string(c.task);
  j["iou_threshold"] = c.iou_threshold;
  j["generation_mode"] = to_string(c.generation_mode);
  j["bleu_threshold"] = c.bleu_threshold;
  j["ctr_threshold"] = c.ctr_threshold;
  j["entity_class_filter"] = c.entity_class_filter ? Json(*c.entity_class_filter) : Json(nullptr);
  return j;
}

DetectorConfig config_from_json(const Json& j) {
  DetectorConfig c;
  c.task = parse_task_kind(j.at("task").get<std::string>());
  c.iou_threshold = j.at("iou_threshold").get<double>();
  c.generation_mode = parse_generation_mode(j.at("generation_mode").get<std::string>());
  c.bleu_threshold = j.at("bleu_threshold").get<double>();
  c.ctr_threshold = j.at("ctr_threshold").get<double>();
  if (!j.at("entity_class_filter").is_null()) {
    c.entity_class_filter = j.at("entity_class_filter").get<std::string>();
  }
  return c;
}

Json train_config_json(const TrainConfig& c) {
  Json j;
  j["epochs"] = c.epochs;
  j["learning_rate"] = c.learning_rate;
  j["seed"] = c.seed;
  j["l2"] = c.l2;
  return j;
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.l2 = j.at("l2").get<double>();
  return c;
}

Json record_json(const RoundRecord& r) {
  Json j;
  j["round"] = r.round;
  j["train_items"] = r.train_items;
  j["flags_emitted"] = r.flags_emitted;
  j["decisions_applied"] = r.decisions_applied;
  j["items_dropped"] = r.items_dropped;
  j["dev_metric"] = optional_number(r.dev_metric);
  j["dev_metric_after"] = optional_number(r.dev_metric_after);
  j["detector_config"] = config_json(r.detector_config);
  return j;
}

RoundRecord record_from_json(const Json& j) {
  RoundRecord r;
  r.round = j.at("round").get<int>();
  r.train_items = j.at("train_items").get<int>();
  r.flags_emitted = j.at("flags_emitted").get<int>();
  r.decisions_applied = j.at("decisions_applied").get<int>();
  r.items_dropped = j.at("items_dropped").get<int>();
  r.dev_metric = number_or_null(j, "dev_metric");
  r.dev_metric_after = number_or_null(j, "dev_metric_after");
  r.detector_config = config_from_json(j.at("detector_config"));
  return r;
}

Json parse_json_file(const fs::path& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_record, path.filename().string() + ": " + e.what());
  }
}

int train_count(const DatasetVersion& v) {
  return static_cast<int>(std::count_if(v.items.begin(), v.items.end(),
                                        [](const Item& i) { return i.split == Split::train; }));
}

std::string flags_file_name(int round) { return "flags-round-" + std::to_string(round) + ".jsonl"; }

}  // namespace

std::string state_json(const LoopState& s) {
  Json j;
  j["format"] = kFormatVersion;
  j["round"] = s.round;
  j["current_version"] = s.current_version;
  j["model_ref"] = s.model_ref ? Json(*s.model_ref) : Json(nullptr);
  j["open_round"] = s.open_round ? Json(*s.open_round) : Json(nullptr);
  Json history = Json::array();
  for (const auto& r : s.history) history.push_back(record_json(r));
  j["history"] = std::move(history);
  return j.dump(2) + "\n";
}

LoopState parse_state(const std::string& text) {
  try {
    const Json j = Json::parse(text);
    if (j.value("format", 0) != kFormatVersion) {
      throw Error(ErrorCode::malformed_record, "state.json: unsupported format version");
    }
    LoopState s;
    s.round = j.at("round").get<int>();
    s.current_version = j.at("current_version").get<std::string>();
    if (!j.at("model_ref").is_null()) s.model_ref = j.at("model_ref").get<std::string>();
    if (!j.at("open_round").is_null()) s.open_round = j.at("open_round").get<int>();
    for (const auto& r : j.at("history")) s.history.push_back(record_from_json(r));
    if (static_cast<int>(s.history.size()) != s.round) {
      throw Error(ErrorCode::invariant_violation, "state.json: history length differs from round");
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_record, std::string("state.json: ") + e.what());
  }
}

LoopState read_state(const fs::path& store_root) { return parse_state(read_file(store_root / "state.json")); }

fs::path store_from_env(const std::optional<std::string>& explicit_store) {
  if (explicit_store && !explicit_store->empty()) return *explicit_store;
  if (const char* env = std::getenv("RELABEL_STORE"); env && *env) return env;
  throw Error(ErrorCode::invalid_argument, "no store given: pass --store or set RELABEL_STORE");
}

// ---- metrics and queue ----

std::optional<double> dev_metric(const DatasetVersion& version, std::span<const Prediction> preds,
                                 const DetectorConfig& cfg) {
  std::unordered_map<std::string_view, const Prediction*> by_id;
  for (const auto& p : preds) by_id.emplace(p.item_id, &p);

  std::vector<std::pair<const Item*, const Prediction*>> dev;
  for (const auto& item : version.items) {
    if (item.split != Split::dev) continue;
    auto it = by_id.find(item.id);
    if (it != by_id.end()) dev.emplace_back(&item, it->second);
  }
  if (dev.empty()) return std::nullopt;

  switch (version.task) {
    case TaskKind::classification: {
      std::vector<std::string> gold, predicted;
      for (auto [item, p] : dev) {
        gold.push_back(std::get<ClassLabel>(item->label()).name);
        predicted.push_back(std::get<ClassLabel>(p->value).name);
      }
      return accuracy(gold, predicted);
    }
    case TaskKind::tagging: {
      std::size_t tp = 0, fp = 0, fn = 0;
      for (auto [item, p] : dev) {
        const PRF1 m = span_prf1(std::get<SpanSet>(item->label()).spans, std::get<SpanSet>(p->value).spans);
        tp += m.tp;
        fp += m.fp;
        fn += m.fn;
      }
      return prf1_from_counts(tp, fp, fn).f1;
    }
    case TaskKind::ctr: {
      std::vector<int> labels;
      std::vector<double> scores;
      for (auto [item, p] : dev) {
        if (!p->score) return std::nullopt;
        labels.push_back(std::get<ClickLabel>(item->label()).value);
        scores.push_back(*p->score);
      }
      const auto positives = std::count(labels.begin(), labels.end(), 1);
      if (positives == 0 || positives == static_cast<long>(labels.size())) return std::nullopt;
      return auc(labels, scores);
    }
    case TaskKind::detection: {
      std::size_t agree = 0;
      for (auto [item, p] : dev) {
        const auto& human = std::get<BoxSet>(item->label()).boxes;
        const auto& model = std::get<BoxSet>(p->value).boxes;
        bool ok = human.size() == model.size();
        if (ok) {
          std::map<std::string, std::pair<std::vector<Box>, std::vector<Box>>> by_class;
          for (const auto& b : human) by_class[b.object_class].first.push_back(b);
          for (const auto& b : model) by_class[b.object_class].second.push_back(b);
          for (const auto& [cls, sets] : by_class) {
            const auto matches = greedy_match(sets.first, sets.second);
            if (matches.size() != sets.first.size() || matches.size() != sets.second.size()) ok = false;
            for (const auto& m : matches) ok = ok && m.iou >= cfg.iou_threshold;
          }
        }
        agree += ok;
      }
      return static_cast<double>(agree) / static_cast<double>(dev.size());
    }
    case TaskKind::generation: {
      double total = 0;
      for (auto [item, p] : dev) {
        const auto ref = tokenize(std::get<TextLabel>(item->label()).text);
        const auto cand = tokenize(std::get<TextLabel>(p->value).text);
        total += ref.empty() ? 0.0 : sentence_bleu(cand, ref);
      }
      return total / static_cast<double>(dev.size());
    }
  }
  return std::nullopt;
}

std::vector<ReviewTask> build_queue(const DatasetVersion& version, std::span<const NoiseFlag> flags,
                                    std::span<const Prediction> preds, const QueueOptions& options) {
  std::unordered_map<std::string_view, const Item*> items;
  for (const auto& item : version.items) items.emplace(item.id, &item);
  std::unordered_map<std::string_view, const Prediction*> by_id;
  for (const auto& p : preds) by_id.emplace(p.item_id, &p);

  struct Entry {
    ReviewTask task;
    SimilarityKey key;
  };
  std::vector<Entry> entries;
  std::unordered_set<std::string_view> seen;
  for (const auto& f : flags) {
    if (f.action != FlagAction::relabel) continue;
    if (!seen.insert(f.item_id).second) continue;
    auto it = items.find(f.item_id);
    if (it == items.end()) throw Error(ErrorCode::unknown_item, "flag for unknown item '" + f.item_id + "'");
    const Item& item = *it->second;
    if (item.split != Split::train) {
      throw Error(ErrorCode::invariant_violation, "flag for dev item '" + f.item_id + "'");
    }
    auto p = by_id.find(f.item_id);
    if (p == by_id.end()) throw Error(ErrorCode::missing_prediction, "no prediction for flagged item '" + f.item_id + "'");

    ReviewTask task;
    task.item_id = item.id;
    task.round = f.round;
    task.payload = item.payload;
    task.previous_human_label = item.label();
    task.model_reference = p->second->value;
    task.reason = f.reason;
    task.severity = f.severity;
    task.mode = options.mode.value_or(default_review_mode(version.task));
    const std::string text = std::holds_alternative<std::string>(item.payload)
                                 ? std::get<std::string>(item.payload)
                                 : dump(to_json(item.payload));
    entries.push_back(Entry{std::move(task), similarity_sort_key(text, options.bands, options.seed)});
  }

  // Group by first band; rank groups by their top severity, then by key.
  std::map<std::uint64_t, std::vector<Entry*>> groups;
  for (auto& e : entries) groups[e.key.bands.front()].push_back(&e);
  std::vector<std::vector<Entry*>*> ordered;
  for (auto& [band, members] : groups) {
    std::sort(members.begin(), members.end(), [](const Entry* a, const Entry* b) {
      if (a->task.severity != b->task.severity) return a->task.severity > b->task.severity;
      if (a->key != b->key) return a->key < b->key;
      return a->task.item_id < b->task.item_id;
    });
    ordered.push_back(&members);
  }
  std::sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) {
    const Entry* ha = a->front();
    const Entry* hb = b->front();
    if (ha->task.severity != hb->task.severity) return ha->task.severity > hb->task.severity;
    if (ha->key != hb->key) return ha->key < hb->key;
    return ha->task.item_id < hb->task.item_id;
  });

  std::vector<ReviewTask> queue;
  queue.reserve(entries.size());
  for (const auto* group : ordered) {
    for (const Entry* e : *group) {
      queue.push_back(e->task);
      queue.back().queue_position = static_cast<int>(queue.size()) - 1;
    }
  }
  return queue;
}

bool should_stop(const LoopState& state, double epsilon, int max_rounds) {
  if (state.history.empty()) {
    throw Error(ErrorCode::invalid_argument, "should_stop needs at least one completed round");
  }
  if (state.round >= max_rounds) return true;
  const RoundRecord& last = state.history.back();
  if (last.train_items == 0) return true;
  const double fraction = static_cast<double>(last.flags_emitted) / static_cast<double>(last.train_items);
  return fraction < epsilon;
}

// ---- engine ----

namespace {

int acquire_lock(const fs::path& root) {
  const fs::path lock_path = root / ".lock";
  const int fd = ::open(lock_path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(ErrorCode::io, "cannot open " + lock_path.string());
  if (::flock(fd, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd);
    throw Error(ErrorCode::store_locked, "store " + root.string() + " is locked by another loop");
  }
  return fd;
}

}  // namespace

LoopEngine::LoopEngine(fs::path root, int lock_fd, LoopState state)
    : root_(std::move(root)), lock_fd_(lock_fd), state_(std::move(state)) {}

LoopEngine::LoopEngine(LoopEngine&& other) noexcept
    : root_(std::move(other.root_)), lock_fd_(std::exchange(other.lock_fd_, -1)),
      state_(std::move(other.state_)) {}

LoopEngine& LoopEngine::operator=(LoopEngine&& other) noexcept {
  if (this != &other) {
    if (lock_fd_ >= 0) ::close(lock_fd_);
    root_ = std::move(other.root_);
    lock_fd_ = std::exchange(other.lock_fd_, -1);
    state_ = std::move(other.state_);
  }
  return *this;
}

LoopEngine::~LoopEngine() {
  if (lock_fd_ >= 0) ::close(lock_fd_);
}

LoopEngine LoopEngine::create(const fs::path& root, const DatasetVersion& initial) {
  if (initial.round != 0 || initial.parent_version) {
    throw Error(ErrorCode::invalid_argument, "a store starts from a round-0 version");
  }
  fs::create_directories(root);
  if (fs::exists(root / "state.json")) {
    throw Error(ErrorCode::invalid_argument, "store " + root.string() + " already initialized");
  }
  const int fd = acquire_lock(root);
  LoopState state;
  state.current_version = initial.version_id;
  LoopEngine engine(root, fd, state);
  save_dataset(initial, root / "versions" / initial.version_id);
  engine.save_state();
  return engine;
}

LoopEngine LoopEngine::open(const fs::path& root) {
  if (!fs::exists(root / "state.json")) {
    throw Error(ErrorCode::io, "no loop store at " + root.string());
  }
  const int fd = acquire_lock(root);
  try {
    return LoopEngine(root, fd, read_state(root));
  } catch (...) {
    ::close(fd);
    throw;
  }
}

fs::path LoopEngine::round_dir(int round) const { return root_ / ("round-" + std::to_string(round)); }

DatasetVersion LoopEngine::load_version(const std::string& version_id) const {
  return load_dataset(root_ / "versions" / version_id);
}

DatasetVersion LoopEngine::current_version() const { return load_version(state_.current_version); }

void LoopEngine::save_state() const { write_file_atomic(root_ / "state.json", state_json(state_)); }

RoundOutput LoopEngine::run_round(const PredictionSource& source, const DetectorConfig& cfg,
                                  const QueueOptions& options) {
  cfg.validate();
  const DatasetVersion version = current_version();
  if (cfg.task != version.task) {
    throw Error(ErrorCode::task_mismatch, "detector configured for " + std::string(to_string(cfg.task)) +
                                              " but the store holds a " +
                                              std::string(to_string(version.task)) + " dataset");
  }
  const int round = state_.round + 1;
  const fs::path dir = round_dir(round);
  if (fs::exists(dir / "decision-log.jsonl") && fs::file_size(dir / "decision-log.jsonl") > 0) {
    throw Error(ErrorCode::closed_round,
                "round " + std::to_string(round) + " already has review decisions");
  }

  RoundOutput out;
  out.round = round;
  Json pending;
  pending["format"] = kFormatVersion;
  pending["round"] = round;
  pending["version"] = version.version_id;
  std::optional<std::string> model_ref;
  if (const auto* baseline = std::get_if<TrainBaseline>(&source)) {
    const LinearModel model = train(version, baseline->config);
    fs::create_directories(dir);
    save_model(model, dir / "model.bin");
    out.predictions = out_of_fold_predict(model, version, baseline->config, baseline->folds);
    pending["baseline"] = train_config_json(baseline->config);
    pending["baseline"]["folds"] = baseline->folds;
    model_ref = "round-" + std::to_string(round) + "/model.bin";
  } else {
    out.predictions = std::get<std::vector<Prediction>>(source);
    pending["baseline"] = nullptr;
    for (const auto& p : out.predictions) {
      if (!p.model_id.empty()) {
        model_ref = p.model_id;
        break;
      }
    }
  }
  for (auto& p : out.predictions) p.round = round;

  out.flags = detect(version, out.predictions, cfg);
  out.queue = build_queue(version, out.flags, out.predictions, options);
  const auto metric = dev_metric(version, out.predictions, cfg);

  fs::create_directories(dir);
  fs::remove(dir / "CLOSED");
  write_file_atomic(dir / "predictions.jsonl", to_jsonl(out.predictions));
  out.flags_path = dir / flags_file_name(round);
  write_file_atomic(out.flags_path, to_jsonl(out.flags));
  write_file_atomic(dir / "queue.jsonl", to_jsonl(out.queue));
  pending["train_items"] = train_count(version);
  pending["flags_emitted"] = out.flags.size();
  pending["dev_metric"] = optional_number(metric);
  pending["detector_config"] = config_json(cfg);
  write_file_atomic(dir / "pending.json", pending.dump(2) + "\n");

  state_.open_round = round;
  state_.model_ref = model_ref;
  save_state();
  return out;
}

const LoopState& LoopEngine::apply_round(std::span<const ReviewDecision> decisions) {
  const int round = state_.round + 1;
  if (state_.open_round != round) {
    throw Error(ErrorCode::no_open_round, "no open round to apply (run detection first)");
  }
  const fs::path dir = round_dir(round);
  const DatasetVersion parent = current_version();
  const Json pending = parse_json_file(dir / "pending.json");
  if (pending.at("version").get<std::string>() != parent.version_id) {
    throw Error(ErrorCode::stale_round, "round " + std::to_string(round) + " was detected on another version");
  }
  const auto queue = read_review_tasks(dir / "queue.jsonl", parent.task);
  const auto flags = read_flags(dir / flags_file_name(round));

  std::unordered_map<std::string_view, const ReviewTask*> queued;
  for (const auto& t : queue) queued.emplace(t.item_id, &t);
  std::vector<ReviewDecision> resolved;
  std::unordered_set<std::string> decided;
  for (const auto& d : decisions) {
    if (d.round != round) {
      throw Error(ErrorCode::stale_round, "decision for '" + d.item_id + "' targets round " +
                                              std::to_string(d.round) + ", open round is " +
                                              std::to_string(round));
    }
    auto it = queued.find(d.item_id);
    if (it == queued.end()) {
      throw Error(ErrorCode::unknown_item, "decision for unqueued item '" + d.item_id + "'");
    }
    if (!decided.insert(d.item_id).second) {
      throw Error(ErrorCode::duplicate_decision, "two decisions for item '" + d.item_id + "'");
    }
    validate_decision(d, *it->second, parent.task);
    ReviewDecision r = d;
    r.resolved_label = resolve_label(d, *it->second);
    resolved.push_back(std::move(r));
  }

  std::vector<std::string> drops;
  for (const auto& f : flags) {
    if (f.action == FlagAction::drop) drops.push_back(f.item_id);
  }
  const DatasetVersion child = derive_version(parent, resolved, drops);
  save_dataset(child, root_ / "versions" / child.version_id);

  RoundRecord record;
  record.round = round;
  record.train_items = pending.at("train_items").get<int>();
  record.flags_emitted = pending.at("flags_emitted").get<int>();
  record.decisions_applied = static_cast<int>(resolved.size());
  record.items_dropped = static_cast<int>(drops.size());
  record.dev_metric = number_or_null(pending, "dev_metric");
  record.detector_config = config_from_json(pending.at("detector_config"));
  if (!pending.at("baseline").is_null()) {
    const LinearModel model = train(child, train_config_from_json(pending.at("baseline")));
    record.dev_metric_after = dev_metric(child, predict(model, child), record.detector_config);
  }

  write_file_atomic(dir / "decisions.jsonl", to_jsonl(resolved));
  write_file_atomic(dir / "drops.json", Json(drops).dump() + "\n");
  write_file_atomic(dir / "metrics.json", record_json(record).dump(2) + "\n");
  write_file_atomic(dir / "CLOSED", "");

  state_.round = round;
  state_.current_version = child.version_id;
  state_.open_round.reset();
  state_.history.push_back(record);
  save_state();
  return state_;
}

bool LoopEngine::should_stop(double epsilon, int max_rounds) const {
  return relabel::should_stop(state_, epsilon, max_rounds);
}

DatasetVersion replay_lineage(const fs::path& store_root) {
  const LoopState state = read_state(store_root);
  fs::path versions = store_root / "versions";
  std::optional<DatasetVersion> current;
  for (const auto& entry : fs::directory_iterator(versions)) {
    if (entry.path().filename().string().rfind("v0-", 0) == 0) {
      current = load_dataset(entry.path());
      break;
    }
  }
  if (!current) throw Error(ErrorCode::io, "store has no round-0 version");
  for (int round = 1; round <= state.round; ++round) {
    const fs::path dir = store_root / ("round-" + std::to_string(round));
    const auto decisions = read_decisions(dir / "decisions.jsonl", current->task);
    const auto drops = parse_json_file(dir / "drops.json").get<std::vector<std::string>>();
    current = derive_version(*current, decisions, drops);
  }
  return *current;
}

}  // namespace relabel
