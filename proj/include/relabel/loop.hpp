#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "relabel/detectors.hpp"
#include "relabel/linear_model.hpp"
#include "relabel/types.hpp"

namespace relabel {

struct RoundRecord {
  int round = 0;
  int train_items = 0;
  int flags_emitted = 0;
  int decisions_applied = 0;
  int items_dropped = 0;
  // Dev metric of the model whose predictions drove this round's detection.
  std::optional<double> dev_metric;
  // Dev metric after the merge, recomputed by retraining the baseline on the
  // new version (absent when predictions came from an external model).
  std::optional<double> dev_metric_after;
  DetectorConfig detector_config;

  bool operator==(const RoundRecord&) const = default;
};

struct LoopState {
  int round = 0;
  std::string current_version;
  std::optional<std::string> model_ref;
  std::optional<int> open_round;
  std::vector<RoundRecord> history;

  bool operator==(const LoopState&) const = default;
};

// Train items are judged by out-of-fold predictions so the model cannot
// simply echo labels it memorized; folds < 2 predicts in-sample.
struct TrainBaseline {
  TrainConfig config;
  int folds = 5;
};

// Either predictions from any external model or a request to train the
// built-in baseline on the current version.
using PredictionSource = std::variant<std::vector<Prediction>, TrainBaseline>;

struct QueueOptions {
  std::optional<ReviewMode> mode;  // default: per-task default_review_mode
  int bands = 16;
  std::uint64_t seed = 0;
};

struct RoundOutput {
  int round = 0;
  std::vector<NoiseFlag> flags;
  std::vector<ReviewTask> queue;
  std::vector<Prediction> predictions;
  std::filesystem::path flags_path;
};

// Accuracy, micro span-F1, AUC, box agreement rate or mean BLEU, by task, over
// dev items that have a prediction. Absent when undefined.
std::optional<double> dev_metric(const DatasetVersion& version, std::span<const Prediction> preds,
                                 const DetectorConfig& cfg);

// Review tasks for relabel flags. Order: similarity groups (first MinHash band)
// by descending top severity, then severity descending within a group.
std::vector<ReviewTask> build_queue(const DatasetVersion& version, std::span<const NoiseFlag> flags,
                                    std::span<const Prediction> preds, const QueueOptions& options);

// Flagged fraction of train items in the latest round < epsilon, or the round
// limit reached.
bool should_stop(const LoopState& state, double epsilon, int max_rounds);

std::string state_json(const LoopState& state);
LoopState parse_state(const std::string& text);
LoopState read_state(const std::filesystem::path& store_root);

// Store layout:
//   state.json
//   versions/<version_id>/{manifest.json,items.jsonl}
//   round-N/{predictions.jsonl,flags-round-N.jsonl,queue.jsonl,pending.json,
//            decision-log.jsonl,decisions.jsonl,metrics.json,model.bin,CLOSED}
class LoopEngine {
 public:
  static LoopEngine create(const std::filesystem::path& root, const DatasetVersion& initial);
  static LoopEngine open(const std::filesystem::path& root);

  LoopEngine(LoopEngine&&) noexcept;
  LoopEngine& operator=(LoopEngine&&) noexcept;
  ~LoopEngine();

  const LoopState& state() const { return state_; }
  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path round_dir(int round) const;

  DatasetVersion current_version() const;
  DatasetVersion load_version(const std::string& version_id) const;

  // Detection for round state().round + 1. Re-running an open round with no
  // logged decisions overwrites its files.
  RoundOutput run_round(const PredictionSource& source, const DetectorConfig& cfg,
                        const QueueOptions& options = {});

  // Merges decisions (and ctr drops) of the open round into a new version.
  const LoopState& apply_round(std::span<const ReviewDecision> decisions);

  bool should_stop(double epsilon, int max_rounds) const;

 private:
  LoopEngine(std::filesystem::path root, int lock_fd, LoopState state);
  void save_state() const;

  std::filesystem::path root_;
  int lock_fd_ = -1;
  LoopState state_;
};

// Re-derives every version from round 0 using the decisions and drops stored
// in the round directories; returns the last version.
DatasetVersion replay_lineage(const std::filesystem::path& store_root);

std::filesystem::path store_from_env(const std::optional<std::string>& explicit_store);

}  // namespace relabel
