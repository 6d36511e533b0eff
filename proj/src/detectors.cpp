#include "relabel/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>

#include "relabel/dataset.hpp"
#include "relabel/error.hpp"
#include "relabel/tokenize.hpp"

namespace relabel {

std::string_view to_string(GenerationMode mode) {
  return mode == GenerationMode::common_token ? "common-token" : "bleu";
}

GenerationMode parse_generation_mode(std::string_view text) {
  if (text == "common-token") return GenerationMode::common_token;
  if (text == "bleu") return GenerationMode::bleu;
  throw Error(ErrorCode::invalid_argument, "unknown generation mode '" + std::string(text) + "'");
}

void DetectorConfig::validate() const {
  auto open_unit = [](double v, const char* name) {
    if (!(v > 0.0 && v < 1.0)) {
      throw Error(ErrorCode::invalid_argument, std::string(name) + " must lie in (0, 1)");
    }
  };
  open_unit(iou_threshold, "iou_threshold");
  open_unit(bleu_threshold, "bleu_threshold");
  open_unit(ctr_threshold, "ctr_threshold");
  if (entity_class_filter && task != TaskKind::tagging) {
    throw Error(ErrorCode::invalid_argument, "entity_class_filter only applies to tagging");
  }
}

PredictionIndex::PredictionIndex(const DatasetVersion& version, std::span<const Prediction> preds) {
  std::unordered_map<std::string_view, const Item*> items;
  for (const auto& item : version.items) items.emplace(item.id, &item);
  for (const auto& p : preds) {
    if (!items.count(p.item_id)) {
      throw Error(ErrorCode::unknown_item, "prediction for unknown item '" + p.item_id + "'");
    }
    if (task_of(p.value) != version.task) {
      throw Error(ErrorCode::task_mismatch, "prediction for '" + p.item_id + "' is not a " +
                                                std::string(to_string(version.task)) + " label");
    }
    if (!by_id_.emplace(p.item_id, &p).second) {
      throw Error(ErrorCode::duplicate_prediction, "duplicate prediction for item '" + p.item_id + "'");
    }
  }
  for (const auto& item : version.items) {
    if (item.split == Split::train && !by_id_.count(item.id)) {
      throw Error(ErrorCode::missing_prediction, "missing prediction for item '" + item.id + "'");
    }
  }
}

const Prediction& PredictionIndex::at(const std::string& item_id) const {
  const Prediction* p = find(item_id);
  if (!p) throw Error(ErrorCode::missing_prediction, "missing prediction for item '" + item_id + "'");
  return *p;
}

const Prediction* PredictionIndex::find(const std::string& item_id) const {
  auto it = by_id_.find(item_id);
  return it == by_id_.end() ? nullptr : it->second;
}

namespace {

void require_task(const DatasetVersion& version, TaskKind task) {
  if (version.task != task) {
    throw Error(ErrorCode::task_mismatch, "detector for " + std::string(to_string(task)) +
                                              " applied to a " + std::string(to_string(version.task)) +
                                              " dataset");
  }
}

std::vector<Span> spans_of_class(const Label& label, const std::string& cls) {
  std::vector<Span> out;
  for (const auto& s : std::get<SpanSet>(label).spans) {
    if (s.entity_class == cls) out.push_back(s);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

std::vector<NoiseFlag> detect_classification(const DatasetVersion& version,
                                             std::span<const Prediction> preds) {
  require_task(version, TaskKind::classification);
  const PredictionIndex index(version, preds);
  std::vector<NoiseFlag> flags;
  for (const auto& item : version.items) {
    if (item.split != Split::train) continue;
    const auto& human = std::get<ClassLabel>(item.label()).name;
    const auto& predicted = std::get<ClassLabel>(index.at(item.id).value).name;
    if (predicted != human) {
      flags.push_back(NoiseFlag{item.id, version.round + 1, LabelMismatch{predicted, human}, 1.0,
                                FlagAction::relabel});
    }
  }
  return flags;
}

std::vector<NoiseFlag> detect_tagging(const DatasetVersion& version, std::span<const Prediction> preds,
                                      const std::string& entity_class) {
  require_task(version, TaskKind::tagging);
  const auto schema = entity_classes(version);
  if (!std::binary_search(schema.begin(), schema.end(), entity_class)) {
    throw Error(ErrorCode::invalid_argument, "unknown entity class '" + entity_class + "'");
  }
  const PredictionIndex index(version, preds);
  std::vector<NoiseFlag> flags;
  for (const auto& item : version.items) {
    if (item.split != Split::train) continue;
    const auto gold = spans_of_class(item.label(), entity_class);
    const auto predicted = spans_of_class(index.at(item.id).value, entity_class);
    if (gold == predicted) continue;
    SpanMismatch reason{entity_class, {}, {}};
    std::set_difference(gold.begin(), gold.end(), predicted.begin(), predicted.end(),
                        std::back_inserter(reason.missing));
    std::set_difference(predicted.begin(), predicted.end(), gold.begin(), gold.end(),
                        std::back_inserter(reason.spurious));
    flags.push_back(
        NoiseFlag{item.id, version.round + 1, std::move(reason), 1.0, FlagAction::relabel});
  }
  return flags;
}

std::vector<BoxMatch> greedy_match(std::span<const Box> human, std::span<const Box> model) {
  std::vector<BoxMatch> candidates;
  for (std::size_t h = 0; h < human.size(); ++h) {
    for (std::size_t m = 0; m < model.size(); ++m) {
      const double overlap = iou(human[h], model[m]);
      if (overlap > 0) {
        candidates.push_back(BoxMatch{static_cast<int>(h), static_cast<int>(m), overlap});
      }
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const BoxMatch& a, const BoxMatch& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.human_index != b.human_index) return a.human_index < b.human_index;
    return a.model_index < b.model_index;
  });
  std::vector<bool> human_used(human.size(), false);
  std::vector<bool> model_used(model.size(), false);
  std::vector<BoxMatch> matches;
  for (const auto& c : candidates) {
    if (human_used[c.human_index] || model_used[c.model_index]) continue;
    human_used[c.human_index] = true;
    model_used[c.model_index] = true;
    matches.push_back(c);
  }
  return matches;
}

std::vector<NoiseFlag> detect_boxes(const DatasetVersion& version, std::span<const Prediction> preds,
                                    const DetectorConfig& cfg) {
  require_task(version, TaskKind::detection);
  const PredictionIndex index(version, preds);
  std::vector<NoiseFlag> flags;
  for (const auto& item : version.items) {
    if (item.split != Split::train) continue;
    const auto& human = std::get<BoxSet>(item.label()).boxes;
    const auto& model = std::get<BoxSet>(index.at(item.id).value).boxes;
    for (const auto* boxes : {&human, &model}) {
      for (const auto& b : *boxes) {
        if (!(b.x_min < b.x_max && b.y_min < b.y_max)) {
          throw Error(ErrorCode::invariant_violation, "invalid box geometry in item '" + item.id + "'");
        }
      }
    }

    std::set<std::string> classes;
    for (const auto& b : human) classes.insert(b.object_class);
    for (const auto& b : model) classes.insert(b.object_class);

    BoxMismatch reason;
    double min_iou = 1.0;
    bool any_unmatched = false;
    for (const auto& cls : classes) {
      std::vector<int> hi, mi;
      std::vector<Box> hb, mb;
      for (std::size_t i = 0; i < human.size(); ++i) {
        if (human[i].object_class == cls) {
          hi.push_back(static_cast<int>(i));
          hb.push_back(human[i]);
        }
      }
      for (std::size_t i = 0; i < model.size(); ++i) {
        if (model[i].object_class == cls) {
          mi.push_back(static_cast<int>(i));
          mb.push_back(model[i]);
        }
      }
      const auto matches = greedy_match(hb, mb);
      std::vector<bool> h_matched(hb.size(), false), m_matched(mb.size(), false);
      for (const auto& m : matches) {
        h_matched[m.human_index] = true;
        m_matched[m.model_index] = true;
        min_iou = std::min(min_iou, m.iou);
        if (m.iou < cfg.iou_threshold) {
          reason.low_iou_pairs.push_back(LowIouPair{hi[m.human_index], mi[m.model_index], m.iou});
        }
      }
      for (std::size_t i = 0; i < hb.size(); ++i) {
        if (!h_matched[i]) reason.unmatched_human.push_back(hb[i]);
      }
      for (std::size_t i = 0; i < mb.size(); ++i) {
        if (!m_matched[i]) reason.unmatched_model.push_back(mb[i]);
      }
    }
    any_unmatched = !reason.unmatched_human.empty() || !reason.unmatched_model.empty();
    if (!any_unmatched && reason.low_iou_pairs.empty()) continue;
    std::sort(reason.low_iou_pairs.begin(), reason.low_iou_pairs.end(),
              [](const LowIouPair& a, const LowIouPair& b) {
                return std::tie(a.human_index, a.model_index) < std::tie(b.human_index, b.model_index);
              });
    const double severity = any_unmatched ? 1.0 : 1.0 - min_iou;
    flags.push_back(
        NoiseFlag{item.id, version.round + 1, std::move(reason), severity, FlagAction::relabel});
  }
  return flags;
}

std::vector<NoiseFlag> detect_generation(const DatasetVersion& version,
                                         std::span<const Prediction> preds, const DetectorConfig& cfg) {
  require_task(version, TaskKind::generation);
  const PredictionIndex index(version, preds);
  std::vector<NoiseFlag> flags;
  for (const auto& item : version.items) {
    if (item.split != Split::train) continue;
    const auto origin = tokenize(std::get<TextLabel>(item.label()).text);
    const auto generated = tokenize(std::get<TextLabel>(index.at(item.id).value).text);
    if (cfg.generation_mode == GenerationMode::common_token) {
      const std::size_t shared = common_token_count(generated, origin);
      if (shared == 0) {
        flags.push_back(NoiseFlag{item.id, version.round + 1,
                                  GenerationMismatch{"common-token", 0.0}, 1.0, FlagAction::relabel});
      }
    } else {
      // An empty origin output shares nothing with any candidate.
      const double bleu = origin.empty() ? 0.0 : sentence_bleu(generated, origin);
      if (bleu < cfg.bleu_threshold) {
        flags.push_back(NoiseFlag{item.id, version.round + 1, GenerationMismatch{"bleu", bleu},
                                  1.0 - bleu, FlagAction::relabel});
      }
    }
  }
  return flags;
}

std::vector<NoiseFlag> detect_ctr(const DatasetVersion& version, std::span<const Prediction> preds,
                                  const DetectorConfig& cfg) {
  require_task(version, TaskKind::ctr);
  const PredictionIndex index(version, preds);
  std::vector<NoiseFlag> flags;
  for (const auto& item : version.items) {
    if (item.split != Split::train) continue;
    const Prediction& p = index.at(item.id);
    if (!p.score) throw Error(ErrorCode::invalid_argument, "ctr prediction for '" + item.id + "' has no score");
    const double score = *p.score;
    if (!(score >= 0.0 && score <= 1.0)) {
      throw Error(ErrorCode::invalid_argument, "ctr score for '" + item.id + "' outside [0, 1]");
    }
    const int label = std::get<ClickLabel>(item.label()).value;
    const double gap = std::abs(score - static_cast<double>(label));
    if (gap > cfg.ctr_threshold) {
      flags.push_back(NoiseFlag{item.id, version.round + 1, CtrDisagreement{score, label, gap}, gap,
                                FlagAction::drop});
    }
  }
  return flags;
}

std::vector<NoiseFlag> detect(const DatasetVersion& version, std::span<const Prediction> preds,
                              const DetectorConfig& cfg) {
  cfg.validate();
  require_task(version, cfg.task);
  switch (cfg.task) {
    case TaskKind::classification:
      return detect_classification(version, preds);
    case TaskKind::detection:
      return detect_boxes(version, preds, cfg);
    case TaskKind::generation:
      return detect_generation(version, preds, cfg);
    case TaskKind::ctr:
      return detect_ctr(version, preds, cfg);
    case TaskKind::tagging:
      break;
  }
  if (cfg.entity_class_filter) return detect_tagging(version, preds, *cfg.entity_class_filter);

  // Union over every class, one merged flag per item in dataset order.
  std::map<std::string, NoiseFlag> merged;
  for (const auto& cls : entity_classes(version)) {
    for (auto& f : detect_tagging(version, preds, cls)) {
      auto [it, inserted] = merged.try_emplace(f.item_id, f);
      if (inserted) continue;
      auto& into = std::get<SpanMismatch>(it->second.reason);
      const auto& from = std::get<SpanMismatch>(f.reason);
      into.entity_class += "," + from.entity_class;
      into.missing.insert(into.missing.end(), from.missing.begin(), from.missing.end());
      into.spurious.insert(into.spurious.end(), from.spurious.begin(), from.spurious.end());
    }
  }
  std::vector<NoiseFlag> flags;
  for (const auto& item : version.items) {
    auto it = merged.find(item.id);
    if (it != merged.end()) flags.push_back(std::move(it->second));
  }
  if (merged.empty()) {
    // Still enforce the coverage contract when the dataset has no spans at all.
    [[maybe_unused]] const PredictionIndex index(version, preds);
  }
  return flags;
}

}  // namespace relabel
