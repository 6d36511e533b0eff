#include "relabel/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "relabel/dataset.hpp"
#include "relabel/error.hpp"
#include "relabel/hash.hpp"
#include "relabel/loop.hpp"
#include "relabel/serialize.hpp"
#include "relabel/tokenize.hpp"

namespace relabel {

namespace {

// Thin deterministic wrapper; avoids the implementation-defined standard
// distributions so generated data is identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform() { return unit_interval(engine_()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int below(int n) { return static_cast<int>(engine_() % static_cast<std::uint64_t>(n)); }
  int between(int lo, int hi) { return lo + below(hi - lo + 1); }
  double normal() {
    const double u1 = std::max(uniform(), 1e-300);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(engine_() % i)]);
  }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix64(seed ^ mix64(stream + 0x51ed270b27ULL));
}

std::string item_id(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "item-%05d", i);
  return buf;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

std::string entity_class_name(int c) {
  static const char* kNames[] = {"per", "loc", "org", "misc", "date", "time"};
  if (c < 6) return kNames[c];
  return "ent" + std::to_string(c);
}

Item make_item(int index, Payload payload, Label label, Split split) {
  Item item;
  item.id = item_id(index);
  item.payload = std::move(payload);
  item.split = split;
  item.label_history.push_back(LabelEvent{0, LabelSource::human, std::move(label)});
  return item;
}

Box random_box(Rng& rng, const std::string& cls) {
  const double w = rng.between(40, 200);
  const double h = rng.between(40, 200);
  const double x = rng.between(0, 640 - static_cast<int>(w));
  const double y = rng.between(0, 480 - static_cast<int>(h));
  return Box{x, y, x + w, y + h, cls};
}

// Similarity of a candidate label to the truth, used by the choice-mode
// annotator to pick the closer of its two options.
double label_similarity(const Label& candidate, const Label& truth) {
  if (candidate == truth) return 1.0;
  switch (task_of(truth)) {
    case TaskKind::tagging:
      return span_prf1(std::get<SpanSet>(truth).spans, std::get<SpanSet>(candidate).spans).f1;
    case TaskKind::detection: {
      const auto& a = std::get<BoxSet>(truth).boxes;
      const auto& b = std::get<BoxSet>(candidate).boxes;
      if (a.empty() && b.empty()) return 1.0;
      double matched = 0;
      for (const auto& m : greedy_match(a, b)) matched += m.iou;
      return 2.0 * matched / static_cast<double>(a.size() + b.size());
    }
    case TaskKind::generation: {
      const auto ref = tokenize(std::get<TextLabel>(truth).text);
      const auto cand = tokenize(std::get<TextLabel>(candidate).text);
      return ref.empty() ? 0.0 : sentence_bleu(cand, ref);
    }
    default:
      return 0.0;
  }
}

bool has_baseline(TaskKind task) {
  return task == TaskKind::classification || task == TaskKind::tagging || task == TaskKind::ctr;
}

}  // namespace

std::string_view to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::uniform_class_flip: return "uniform-class-flip";
    case NoiseKind::span_drop: return "span-drop";
    case NoiseKind::box_jitter: return "box-jitter";
    case NoiseKind::generation_replace: return "generation-replace";
    case NoiseKind::ctr_flip: return "ctr-flip";
  }
  return "unknown";
}

NoiseKind parse_noise_kind(std::string_view text) {
  for (auto k : {NoiseKind::uniform_class_flip, NoiseKind::span_drop, NoiseKind::box_jitter,
                 NoiseKind::generation_replace, NoiseKind::ctr_flip}) {
    if (to_string(k) == text) return k;
  }
  throw Error(ErrorCode::invalid_argument, "unknown noise kind '" + std::string(text) + "'");
}

NoiseKind default_noise_kind(TaskKind task) {
  switch (task) {
    case TaskKind::classification: return NoiseKind::uniform_class_flip;
    case TaskKind::tagging: return NoiseKind::span_drop;
    case TaskKind::detection: return NoiseKind::box_jitter;
    case TaskKind::generation: return NoiseKind::generation_replace;
    case TaskKind::ctr: return NoiseKind::ctr_flip;
  }
  return NoiseKind::uniform_class_flip;
}

GeneratedDataset generate_dataset(TaskKind task, int n, int classes, std::uint64_t seed) {
  if (n < 10) throw Error(ErrorCode::invalid_argument, "generate_dataset needs n >= 10");
  if (classes < 2) throw Error(ErrorCode::invalid_argument, "generate_dataset needs classes >= 2");

  Rng rng(seed);
  GeneratedDataset out;
  std::vector<Item> items;
  items.reserve(static_cast<std::size_t>(n));
  int train_seen = 0;
  // Every fifth item is dev: exactly 20% when n is a multiple of 5.
  auto split_of = [](int i) { return i % 5 == 4 ? Split::dev : Split::train; };

  constexpr int kCoreVocab = 40;
  constexpr double kCoreRate = 0.2;
  constexpr int kFiller = 400;
  constexpr int kEntityVocab = 60;
  constexpr int kTriggers = 5;
  constexpr int kAmbiguous = 50;
  constexpr int kSourceVocab = 300;
  constexpr int kCtrFeatures = 8;

  std::vector<double> planted(kCtrFeatures);
  for (auto& w : planted) w = rng.normal();

  for (int i = 0; i < n; ++i) {
    const Split split = split_of(i);
    // The first `classes` train items cover every class once.
    int cls = rng.below(classes);
    if (split == Split::train && train_seen < classes) cls = train_seen;
    if (split == Split::train) ++train_seen;

    Payload payload;
    Label label;
    switch (task) {
      case TaskKind::classification: {
        std::vector<std::string> tokens;
        const int len = rng.between(6, 12);
        // Two guaranteed core tokens keep the classes separable.
        const int first_core = rng.below(len);
        const int second_core = (first_core + 1 + rng.below(len - 1)) % len;
        for (int t = 0; t < len; ++t) {
          if (t == first_core || t == second_core || rng.uniform() < kCoreRate) {
            tokens.push_back("c" + std::to_string(cls) + "k" + std::to_string(rng.below(kCoreVocab)));
          } else {
            tokens.push_back("w" + std::to_string(rng.below(kFiller)));
          }
        }
        payload = join(tokens);
        label = ClassLabel{"class-" + std::to_string(cls)};
        break;
      }
      case TaskKind::tagging: {
        std::vector<std::string> tokens;
        std::vector<Span> spans;
        const int fillers = rng.between(6, 12);
        const int entities = rng.between(1, 3);
        std::vector<int> slots;
        for (int e = 0; e < entities; ++e) slots.push_back(rng.below(fillers + 1));
        std::sort(slots.begin(), slots.end());
        std::size_t next_slot = 0;
        for (int f = 0; f <= fillers; ++f) {
          while (next_slot < slots.size() && slots[next_slot] == f) {
            const int ec = rng.below(classes);
            if (rng.uniform() < 0.7) {
              tokens.push_back("t" + std::to_string(ec) + "x" + std::to_string(rng.below(kTriggers)));
            }
            const int start = static_cast<int>(tokens.size());
            const int len = rng.between(1, 2);
            for (int k = 0; k < len; ++k) {
              // Some entity words come from a pool that also occurs as filler.
              if (rng.uniform() < 0.25) {
                tokens.push_back("a" + std::to_string(rng.below(kAmbiguous)));
              } else {
                tokens.push_back("e" + std::to_string(ec) + "w" + std::to_string(rng.below(kEntityVocab)));
              }
            }
            spans.push_back(Span{start, start + len, entity_class_name(ec)});
            // Keep adjacent entities apart with a filler token.
            tokens.push_back("w" + std::to_string(rng.below(kFiller)));
            ++next_slot;
          }
          if (f < fillers) {
            tokens.push_back(rng.uniform() < 0.1 ? "a" + std::to_string(rng.below(kAmbiguous))
                                                 : "w" + std::to_string(rng.below(kFiller)));
          }
        }
        payload = join(tokens);
        label = SpanSet{std::move(spans)};
        break;
      }
      case TaskKind::detection: {
        std::vector<Box> boxes;
        const int count = rng.between(1, 3);
        for (int b = 0; b < count; ++b) {
          boxes.push_back(random_box(rng, "obj" + std::to_string(b == 0 ? cls : rng.below(classes))));
        }
        payload = "images/" + item_id(i) + ".png";
        label = BoxSet{std::move(boxes)};
        break;
      }
      case TaskKind::generation: {
        std::vector<std::string> source, target;
        const int len = rng.between(4, 10);
        for (int t = 0; t < len; ++t) {
          const int w = rng.below(kSourceVocab);
          source.push_back("s" + std::to_string(w));
          target.push_back("t" + std::to_string(w));
        }
        payload = join(source);
        label = TextLabel{join(target)};
        break;
      }
      case TaskKind::ctr: {
        FeatureMap features;
        double logit = 0;
        for (int f = 0; f < kCtrFeatures; ++f) {
          const double x = round3(rng.uniform(-1.0, 1.0));
          features.emplace("f" + std::to_string(f), x);
          logit += 3.0 * planted[static_cast<std::size_t>(f)] * x;
        }
        const double p = 1.0 / (1.0 + std::exp(-logit));
        payload = std::move(features);
        label = ClickLabel{rng.uniform() < p ? 1 : 0};
        break;
      }
    }
    out.truth.emplace(item_id(i), label);
    items.push_back(make_item(i, std::move(payload), std::move(label), split));
  }
  out.version = make_version(task, 0, std::nullopt, std::move(items));
  return out;
}

NoisyDataset inject_noise(const DatasetVersion& version, const Truth& truth, const NoiseSpec& spec) {
  if (!(spec.rate >= 0.0 && spec.rate < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "noise rate must lie in [0, 1)");
  }
  const auto compatible = [&] {
    switch (spec.kind) {
      case NoiseKind::uniform_class_flip: return version.task == TaskKind::classification;
      case NoiseKind::span_drop: return version.task == TaskKind::tagging;
      case NoiseKind::box_jitter: return version.task == TaskKind::detection;
      case NoiseKind::generation_replace: return version.task == TaskKind::generation;
      case NoiseKind::ctr_flip: return version.task == TaskKind::ctr;
    }
    return false;
  }();
  if (!compatible) {
    throw Error(ErrorCode::invalid_argument, "noise kind " + std::string(to_string(spec.kind)) +
                                                 " is incompatible with task " +
                                                 std::string(to_string(version.task)));
  }

  std::vector<std::string> class_names;
  if (spec.kind == NoiseKind::uniform_class_flip) {
    std::set<std::string> names;
    for (const auto& [id, label] : truth) names.insert(std::get<ClassLabel>(label).name);
    for (const auto& item : version.items) names.insert(std::get<ClassLabel>(item.label()).name);
    class_names.assign(names.begin(), names.end());
  }

  std::vector<std::size_t> eligible;
  std::size_t train_total = 0;
  for (std::size_t i = 0; i < version.items.size(); ++i) {
    const Item& item = version.items[i];
    if (item.split != Split::train) continue;
    ++train_total;
    if (spec.kind == NoiseKind::span_drop && std::get<SpanSet>(item.label()).spans.empty()) continue;
    if (spec.kind == NoiseKind::box_jitter && std::get<BoxSet>(item.label()).boxes.empty()) continue;
    eligible.push_back(i);
  }
  const auto k = static_cast<std::size_t>(std::llround(spec.rate * static_cast<double>(train_total)));
  if (k > eligible.size()) {
    throw Error(ErrorCode::invalid_argument, "not enough eligible train items for the requested noise");
  }

  Rng rng(spec.seed);
  rng.shuffle(eligible);
  eligible.resize(k);
  std::sort(eligible.begin(), eligible.end());

  NoisyDataset out;
  std::vector<Item> items = version.items;
  for (std::size_t idx : eligible) {
    Item& item = items[idx];
    auto t = truth.find(item.id);
    if (t == truth.end()) throw Error(ErrorCode::unknown_item, "no truth for item '" + item.id + "'");
    const Label& true_label = t->second;
    Label corrupted = true_label;
    switch (spec.kind) {
      case NoiseKind::uniform_class_flip: {
        const auto& name = std::get<ClassLabel>(true_label).name;
        const auto c = static_cast<std::size_t>(
            std::find(class_names.begin(), class_names.end(), name) - class_names.begin());
        const std::size_t offset = 1 + static_cast<std::size_t>(rng.below(static_cast<int>(class_names.size()) - 1));
        corrupted = ClassLabel{class_names[(c + offset) % class_names.size()]};
        break;
      }
      case NoiseKind::span_drop: {
        auto spans = std::get<SpanSet>(true_label).spans;
        spans.erase(spans.begin() + rng.below(static_cast<int>(spans.size())));
        corrupted = SpanSet{std::move(spans)};
        break;
      }
      case NoiseKind::box_jitter: {
        auto boxes = std::get<BoxSet>(true_label).boxes;
        Box& b = boxes[static_cast<std::size_t>(rng.below(static_cast<int>(boxes.size())))];
        const int max_shift = std::max(1, static_cast<int>(spec.max_shift));
        int dx = 0, dy = 0;
        while (dx == 0 && dy == 0) {
          dx = rng.between(-max_shift, max_shift);
          dy = rng.between(-max_shift, max_shift);
        }
        b.x_min += dx;
        b.x_max += dx;
        b.y_min += dy;
        b.y_max += dy;
        corrupted = BoxSet{std::move(boxes)};
        break;
      }
      case NoiseKind::generation_replace: {
        std::vector<std::string> tokens;
        const int len = rng.between(4, 8);
        for (int i = 0; i < len; ++i) tokens.push_back("n" + std::to_string(rng.below(300)));
        corrupted = TextLabel{join(tokens)};
        break;
      }
      case NoiseKind::ctr_flip:
        corrupted = ClickLabel{1 - std::get<ClickLabel>(true_label).value};
        break;
    }
    item.label_history = {LabelEvent{0, LabelSource::human, std::move(corrupted)}};
    out.noise_mask.insert(item.id);
  }
  out.version = make_version(version.task, version.round, version.parent_version, std::move(items),
                             version.tokenizer);
  return out;
}

std::vector<ReviewDecision> simulate_annotation(std::span<const ReviewTask> queue, const Truth& truth,
                                                const SimAnnotator& annotator) {
  // 2026-01-01T00:00:00Z; timestamps are synthetic so runs replay exactly.
  constexpr std::int64_t kEpochMs = 1767225600000;
  std::vector<ReviewDecision> out;
  out.reserve(queue.size());
  for (const auto& task : queue) {
    auto t = truth.find(task.item_id);
    if (t == truth.end()) throw Error(ErrorCode::unknown_item, "no truth for item '" + task.item_id + "'");
    const Label& true_label = t->second;

    ReviewDecision d;
    d.item_id = task.item_id;
    d.round = task.round;
    d.annotator_id = annotator.annotator_id;
    d.submitted_at_ms = kEpochMs + static_cast<std::int64_t>(task.round) * 1'000'000'000 +
                        static_cast<std::int64_t>(task.queue_position) * 1000;

    const double u = unit_interval(hash64(task.item_id + "#" + std::to_string(task.round), annotator.seed));
    if (u < annotator.accuracy) {
      if (task.model_reference == true_label) {
        d.choice = Choice::accept_model;
      } else if (task.previous_human_label == true_label) {
        d.choice = Choice::keep_previous;
      } else if (task.mode == ReviewMode::open) {
        d.choice = Choice::new_label;
        d.new_label = true_label;
      } else {
        d.choice = label_similarity(task.model_reference, true_label) >
                           label_similarity(task.previous_human_label, true_label)
                       ? Choice::accept_model
                       : Choice::keep_previous;
      }
    } else {
      d.choice = Choice::keep_previous;
    }
    out.push_back(std::move(d));
  }
  return out;
}

PRF1 score_detection(std::span<const NoiseFlag> flags, const std::set<std::string>& noise_mask) {
  std::set<std::string> flagged;
  for (const auto& f : flags) flagged.insert(f.item_id);
  std::size_t tp = 0;
  for (const auto& id : flagged) tp += noise_mask.count(id);
  return prf1_from_counts(tp, flagged.size() - tp, noise_mask.size() - tp);
}

std::vector<Prediction> scripted_predictions(const DatasetVersion& version, const Truth& truth,
                                             double error_rate, std::uint64_t seed) {
  std::vector<Prediction> out;
  out.reserve(version.items.size());
  for (const auto& item : version.items) {
    auto t = truth.find(item.id);
    if (t == truth.end()) throw Error(ErrorCode::unknown_item, "no truth for item '" + item.id + "'");
    Prediction p;
    p.item_id = item.id;
    p.model_id = "scripted";
    p.round = version.round + 1;
    p.value = t->second;
    const std::uint64_t h = hash64(item.id, seed);
    const bool wrong = unit_interval(h) < error_rate;
    Rng rng(mix64(h));
    switch (version.task) {
      case TaskKind::classification:
        if (wrong) p.value = ClassLabel{std::get<ClassLabel>(t->second).name + "-confused"};
        break;
      case TaskKind::tagging:
        if (wrong) p.value = SpanSet{};
        break;
      case TaskKind::detection:
        if (wrong) {
          auto boxes = std::get<BoxSet>(t->second).boxes;
          boxes.push_back(random_box(rng, boxes.empty() ? "obj0" : boxes.front().object_class));
          p.value = BoxSet{std::move(boxes)};
        }
        break;
      case TaskKind::generation:
        if (wrong) {
          // A partially wrong generation that still shares tokens with the origin.
          auto tokens = tokenize(std::get<TextLabel>(t->second).text);
          if (!tokens.empty()) tokens.back() = "m" + std::to_string(rng.below(300));
          p.value = TextLabel{join(tokens)};
        }
        break;
      case TaskKind::ctr: {
        const int y = std::get<ClickLabel>(t->second).value;
        const double confidence = wrong ? rng.uniform(0.0, 0.5) : rng.uniform(0.6, 0.95);
        p.score = y == 1 ? confidence : 1.0 - confidence;
        p.value = ClickLabel{*p.score >= 0.5 ? 1 : 0};
        break;
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::set<std::string> current_noise(const DatasetVersion& version, const Truth& truth) {
  std::set<std::string> out;
  for (const auto& item : version.items) {
    if (item.split != Split::train) continue;
    auto t = truth.find(item.id);
    if (t != truth.end() && t->second != item.label()) out.insert(item.id);
  }
  return out;
}

std::string SimulationReport::csv() const {
  std::ostringstream out;
  out << "round,flags,detection_precision,detection_recall,dev_metric,decisions_applied,"
         "items_dropped,noisy_before,noisy_after,dev_metric_after\n";
  auto num = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    out << r.round << ',' << r.flags << ',' << num(r.detection_precision) << ','
        << num(r.detection_recall) << ',' << num(r.dev_metric) << ',' << r.decisions << ','
        << r.dropped << ',' << r.noisy_before << ',' << r.noisy_after << ','
        << num(r.dev_metric_after) << '\n';
  }
  return out.str();
}

std::string SimulationReport::json() const {
  Json j;
  j["initial_version"] = initial_version;
  j["final_version"] = final_version;
  j["injected_noise"] = initial_mask.size();
  Json rows_json = Json::array();
  for (const auto& r : rows) {
    Json e;
    e["round"] = r.round;
    e["flags"] = r.flags;
    e["detection_precision"] = r.detection_precision;
    e["detection_recall"] = r.detection_recall;
    e["dev_metric"] = r.dev_metric ? Json(*r.dev_metric) : Json(nullptr);
    e["decisions_applied"] = r.decisions;
    e["items_dropped"] = r.dropped;
    e["noisy_before"] = r.noisy_before;
    e["noisy_after"] = r.noisy_after;
    e["dev_metric_after"] = r.dev_metric_after ? Json(*r.dev_metric_after) : Json(nullptr);
    e["version_id"] = r.version_id;
    rows_json.push_back(std::move(e));
  }
  j["rounds"] = std::move(rows_json);
  return j.dump(2) + "\n";
}

SimulationReport run_simulation(const SimulationOptions& options, const std::filesystem::path& store) {
  if (options.rounds < 1) throw Error(ErrorCode::invalid_argument, "simulation needs at least one round");
  const auto generated = generate_dataset(options.task, options.n, options.classes, options.seed);
  NoiseSpec noise;
  noise.rate = options.noise_rate;
  noise.kind = options.noise_kind.value_or(default_noise_kind(options.task));
  noise.seed = derive_seed(options.seed, 1);
  const NoisyDataset noisy = inject_noise(generated.version, generated.truth, noise);

  TrainConfig train_cfg = options.train;
  train_cfg.seed = derive_seed(options.seed, 2);
  SimAnnotator annotator;
  annotator.accuracy = options.annotator_accuracy;
  annotator.seed = derive_seed(options.seed, 3);
  DetectorConfig detector = options.detector;
  detector.task = options.task;
  QueueOptions queue_options;
  queue_options.mode = options.review_mode;

  LoopEngine engine = LoopEngine::create(store, noisy.version);
  SimulationReport report;
  report.initial_mask = noisy.noise_mask;
  report.initial_version = noisy.version.version_id;

  for (int r = 1; r <= options.rounds; ++r) {
    const DatasetVersion version = engine.current_version();
    const auto mask = current_noise(version, generated.truth);
    PredictionSource source;
    if (has_baseline(options.task)) {
      source = TrainBaseline{train_cfg};
    } else {
      source = scripted_predictions(version, generated.truth, options.scripted_error_rate,
                                    derive_seed(options.seed, 4 + static_cast<std::uint64_t>(r)));
    }
    const RoundOutput out = engine.run_round(source, detector, queue_options);
    const PRF1 quality = score_detection(out.flags, mask);
    const auto decisions = simulate_annotation(out.queue, generated.truth, annotator);
    const LoopState& state = engine.apply_round(decisions);
    const RoundRecord& record = state.history.back();

    SimulationRow row;
    row.round = r;
    row.flags = record.flags_emitted;
    row.detection_precision = quality.precision;
    row.detection_recall = quality.recall;
    row.dev_metric = record.dev_metric;
    row.decisions = record.decisions_applied;
    row.dropped = record.items_dropped;
    row.noisy_before = static_cast<int>(mask.size());
    row.noisy_after = static_cast<int>(current_noise(engine.current_version(), generated.truth).size());
    row.dev_metric_after = record.dev_metric_after;
    row.version_id = state.current_version;
    report.rows.push_back(std::move(row));
  }
  report.final_version = engine.state().current_version;
  return report;
}

}  // namespace relabel
