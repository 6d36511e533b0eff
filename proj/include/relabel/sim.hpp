#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "relabel/detectors.hpp"
#include "relabel/linear_model.hpp"
#include "relabel/metrics.hpp"
#include "relabel/types.hpp"

namespace relabel {

using Truth = std::map<std::string, Label>;

struct GeneratedDataset {
  DatasetVersion version;
  Truth truth;
};

// Synthetic round-0 dataset with known labels and an 80/20 train/dev split.
//   classification: per-class core vocabularies plus shared filler tokens
//   tagging: filler sentences with entity phrases from per-class vocabularies
//   detection: 1-3 boxes on a 640x480 canvas; payload is an image path
//   generation: output is a token-by-token mapping of the input
//   ctr: 8 real features; clicks drawn from a planted logistic rule
// For tagging and detection `classes` counts entity/object classes.
GeneratedDataset generate_dataset(TaskKind task, int n, int classes, std::uint64_t seed);

enum class NoiseKind { uniform_class_flip, span_drop, box_jitter, generation_replace, ctr_flip };
std::string_view to_string(NoiseKind kind);
NoiseKind parse_noise_kind(std::string_view text);
NoiseKind default_noise_kind(TaskKind task);

struct NoiseSpec {
  double rate = 0;
  NoiseKind kind = NoiseKind::uniform_class_flip;
  std::uint64_t seed = 0;
  double max_shift = 60;  // box-jitter, pixels
};

struct NoisyDataset {
  DatasetVersion version;
  std::set<std::string> noise_mask;
};

// Corrupts exactly round(rate * train count) train items; dev is untouched
// and every corrupted label differs from the truth.
NoisyDataset inject_noise(const DatasetVersion& version, const Truth& truth, const NoiseSpec& spec);

struct SimAnnotator {
  double accuracy = 1.0;
  std::uint64_t seed = 0;
  std::string annotator_id = "sim-annotator";
};

// Per task, with probability `accuracy` the decision lands on the true label
// (accept_model, keep_previous or new_label as needed; in choice mode the
// option closer to the truth); otherwise keep_previous. The draw is a hash
// of (seed, item, round), so it does not depend on queue order.
std::vector<ReviewDecision> simulate_annotation(std::span<const ReviewTask> queue, const Truth& truth,
                                                const SimAnnotator& annotator);

PRF1 score_detection(std::span<const NoiseFlag> flags, const std::set<std::string>& noise_mask);

// Stand-in model for tasks without a baseline: the truth, corrupted on a
// seeded error_rate fraction of items.
std::vector<Prediction> scripted_predictions(const DatasetVersion& version, const Truth& truth,
                                             double error_rate, std::uint64_t seed);

// Train items whose current label differs from the truth.
std::set<std::string> current_noise(const DatasetVersion& version, const Truth& truth);

struct SimulationOptions {
  TaskKind task = TaskKind::classification;
  int n = 2000;
  int classes = 2;
  double noise_rate = 0.15;
  std::optional<NoiseKind> noise_kind;
  double annotator_accuracy = 0.98;
  int rounds = 2;
  std::uint64_t seed = 42;
  TrainConfig train;
  DetectorConfig detector;
  std::optional<ReviewMode> review_mode = ReviewMode::open;
  double scripted_error_rate = 0.05;
};

struct SimulationRow {
  int round = 0;
  int flags = 0;
  double detection_precision = 0;
  double detection_recall = 0;
  std::optional<double> dev_metric;
  int decisions = 0;
  int dropped = 0;
  int noisy_before = 0;
  int noisy_after = 0;
  std::optional<double> dev_metric_after;
  std::string version_id;
};

struct SimulationReport {
  std::vector<SimulationRow> rows;
  std::set<std::string> initial_mask;
  std::string initial_version;
  std::string final_version;

  std::string csv() const;
  std::string json() const;
};

// Generates, corrupts, initializes a store at `store` and runs the loop for
// options.rounds rounds with a simulated annotator. Seeds for dataset, noise,
// training and annotation are derived from options.seed.
SimulationReport run_simulation(const SimulationOptions& options, const std::filesystem::path& store);

}  // namespace relabel
