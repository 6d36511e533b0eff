#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "relabel/metrics.hpp"
#include "relabel/types.hpp"

namespace relabel {

enum class GenerationMode { common_token, bleu };
std::string_view to_string(GenerationMode mode);
GenerationMode parse_generation_mode(std::string_view text);

struct DetectorConfig {
  TaskKind task = TaskKind::classification;
  double iou_threshold = 0.5;
  GenerationMode generation_mode = GenerationMode::common_token;
  double bleu_threshold = 0.3;
  double ctr_threshold = 0.9;
  std::optional<std::string> entity_class_filter;

  // Thresholds in (0, 1); the class filter only for tagging.
  void validate() const;
  bool operator==(const DetectorConfig&) const = default;
};

// Predictions keyed by item id, checked against a version: no duplicates, no
// unknown ids, value kind matches the task, and every train item covered.
class PredictionIndex {
 public:
  PredictionIndex(const DatasetVersion& version, std::span<const Prediction> preds);

  const Prediction& at(const std::string& item_id) const;
  const Prediction* find(const std::string& item_id) const;

 private:
  std::unordered_map<std::string, const Prediction*> by_id_;
};

// Flags carry round = version.round + 1 (the correction round the detection
// belongs to). Output follows dataset item order; only train items are judged.

std::vector<NoiseFlag> detect_classification(const DatasetVersion& version,
                                             std::span<const Prediction> preds);

std::vector<NoiseFlag> detect_tagging(const DatasetVersion& version, std::span<const Prediction> preds,
                                      const std::string& entity_class);

std::vector<NoiseFlag> detect_boxes(const DatasetVersion& version, std::span<const Prediction> preds,
                                    const DetectorConfig& cfg);

std::vector<NoiseFlag> detect_generation(const DatasetVersion& version,
                                         std::span<const Prediction> preds, const DetectorConfig& cfg);

std::vector<NoiseFlag> detect_ctr(const DatasetVersion& version, std::span<const Prediction> preds,
                                  const DetectorConfig& cfg);

// Dispatches on cfg.task. For tagging without a class filter every entity
// class is scanned and the per-class flags are merged into one flag per item.
std::vector<NoiseFlag> detect(const DatasetVersion& version, std::span<const Prediction> preds,
                              const DetectorConfig& cfg);

// Greedy one-to-one matching of model boxes to human boxes of one class in
// descending IoU order (ties: lower human index, then lower model index).
// Pairs with zero overlap are never matched.
struct BoxMatch {
  int human_index = 0;
  int model_index = 0;
  double iou = 0;
};
std::vector<BoxMatch> greedy_match(std::span<const Box> human, std::span<const Box> model);

}  // namespace relabel
