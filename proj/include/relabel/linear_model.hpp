#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "relabel/types.hpp"

namespace relabel {

struct TrainConfig {
  int epochs = 5;
  double learning_rate = 0.1;
  std::uint64_t seed = 0;
  double l2 = 1e-6;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

inline constexpr int kFeatureHashBits = 18;
inline constexpr std::size_t kFeatureDim = std::size_t{1} << kFeatureHashBits;

// One row per hashed feature, one column per output class, so the update for
// a sparse example touches a contiguous row.
template <class Scalar>
using WeightMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Multinomial logistic regression over signed hashed features.
//   classification: classes are the label names
//   tagging: "O" followed by "B-<c>", "I-<c>" per entity class
//   ctr: a single sigmoid output
struct LinearModel {
  TaskKind task = TaskKind::classification;
  std::vector<std::string> class_names;
  std::uint64_t hash_seed = 0;
  TrainConfig config;
  WeightMatrix<float> weights;
  std::string model_id;
};

struct HashedFeature {
  std::uint32_t index = 0;
  float value = 0;
};

// Feature extractors, exposed for tests.
std::vector<HashedFeature> text_features(std::span<const std::string> tokens, std::uint64_t seed);
std::vector<HashedFeature> token_features(std::span<const std::string> tokens, std::size_t position,
                                          std::uint64_t seed);
std::vector<HashedFeature> ctr_features(const FeatureMap& features, std::uint64_t seed);

// SGD with a seeded per-epoch shuffle; bit-deterministic for a fixed seed.
// When epoch_losses is given it receives the mean training loss after each
// epoch.
LinearModel train(const DatasetVersion& version, const TrainConfig& cfg,
                  std::vector<double>* epoch_losses = nullptr);

// One prediction per item, train and dev alike.
std::vector<Prediction> predict(const LinearModel& model, const DatasetVersion& version);

// Cross-fitted predictions: each train item is predicted by a model trained
// on the other folds (fold chosen by a hash of the item id), dev items by
// `full`. With folds < 2 this is predict(full, version).
std::vector<Prediction> out_of_fold_predict(const LinearModel& full, const DatasetVersion& version,
                                            const TrainConfig& cfg, int folds);

// Raw class scores (logits) for one text payload; classification only.
Eigen::VectorXf class_scores(const LinearModel& model, std::span<const std::string> tokens);

std::vector<std::string> bio_tag_names(std::span<const std::string> entity_classes);

// Total decode: an I-x that does not continue an open x span starts one.
std::vector<Span> decode_bio(std::span<const int> tags, std::span<const std::string> tag_names);

// Binary checkpoint: magic, format version, task, seed, dims, class names,
// training config, then little-endian float32 weights in row-major order.
std::string serialize_model(const LinearModel& model);
LinearModel deserialize_model(std::string_view bytes);
void save_model(const LinearModel& model, const std::filesystem::path& path);
LinearModel load_model(const std::filesystem::path& path);

}  // namespace relabel
