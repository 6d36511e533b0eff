// relabel: command-line front end for the re-label loop.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "relabel/dataset.hpp"
#include "relabel/detectors.hpp"
#include "relabel/error.hpp"
#include "relabel/http_server.hpp"
#include "relabel/linear_model.hpp"
#include "relabel/loop.hpp"
#include "relabel/review.hpp"
#include "relabel/serialize.hpp"
#include "relabel/sim.hpp"

namespace fs = std::filesystem;
using namespace relabel;

namespace {

struct Common {
  std::optional<std::string> store;
  std::string format = "human";
  bool json() const { return format == "json"; }
  fs::path root() const { return store_from_env(store); }
};

void add_format(CLI::App* cmd, Common& common) {
  cmd->add_option("--format", common.format, "Output format")->check(CLI::IsMember({"human", "json"}));
}

void add_store(CLI::App* cmd, Common& common) {
  cmd->add_option("--store", common.store, "Store root (default: $RELABEL_STORE)");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string("-"); }

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

DatasetVersion read_input(const fs::path& input, TaskKind task) {
  if (fs::is_directory(input)) {
    DatasetVersion v = load_dataset(input);
    if (v.task != task) {
      throw Error(ErrorCode::task_mismatch, "dataset task is " + std::string(to_string(v.task)));
    }
    return v;
  }
  std::vector<Item> items;
  for_each_jsonl(input, [&](const Json& j, int) { items.push_back(item_from_json(j, task)); });
  return make_version(task, 0, std::nullopt, std::move(items));
}

// ---- init ----

struct InitArgs {
  std::string task;
  std::string input;
};

int run_init(const Common& common, const InitArgs& args) {
  const TaskKind task = parse_task_kind(args.task);
  const DatasetVersion version = read_input(args.input, task);
  LoopEngine engine = LoopEngine::create(common.root(), version);
  if (common.json()) {
    std::cout << manifest_json(version);
  } else {
    std::cout << "initialized " << common.root().string() << " at " << version.version_id << " ("
              << version.items.size() << " items, " << to_string(task) << ")\n";
  }
  return 0;
}

// ---- detect ----

struct DetectArgs {
  int round = 0;
  std::optional<std::string> predictions;
  bool baseline = false;
  double iou = 0.5;
  double bleu = 0.3;
  double ctr_threshold = 0.9;
  std::string generation_mode = "common-token";
  std::optional<std::string> entity_class;
  std::optional<std::string> review_mode;
  int bands = 16;
  TrainConfig train;
};

int run_detect(const Common& common, const DetectArgs& args) {
  if (args.predictions.has_value() == args.baseline) {
    throw Error(ErrorCode::invalid_argument, "give exactly one of --predictions or --baseline");
  }
  LoopEngine engine = LoopEngine::open(common.root());
  if (args.round != engine.state().round + 1) {
    throw Error(ErrorCode::stale_round, "next round is " + std::to_string(engine.state().round + 1) +
                                            ", not " + std::to_string(args.round));
  }
  const DatasetVersion version = engine.current_version();
  DetectorConfig cfg;
  cfg.task = version.task;
  cfg.iou_threshold = args.iou;
  cfg.bleu_threshold = args.bleu;
  cfg.ctr_threshold = args.ctr_threshold;
  cfg.generation_mode = parse_generation_mode(args.generation_mode);
  cfg.entity_class_filter = args.entity_class;
  QueueOptions qopts;
  if (args.review_mode) qopts.mode = parse_review_mode(*args.review_mode);
  qopts.bands = args.bands;

  PredictionSource source = TrainBaseline{args.train};
  if (args.predictions) source = read_predictions(*args.predictions, version.task);
  const RoundOutput out = engine.run_round(source, cfg, qopts);

  if (common.json()) {
    Json j;
    j["round"] = out.round;
    j["version"] = version.version_id;
    j["flags"] = out.flags.size();
    j["queued"] = out.queue.size();
    j["flags_path"] = out.flags_path.string();
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "round " << out.round << ": " << out.flags.size() << " flags, " << out.queue.size()
              << " queued for review\n"
              << "flags written to " << out.flags_path.string() << "\n";
  }
  return 0;
}

// ---- queue ----

int run_queue(const Common& common, std::optional<int> round) {
  const LoopState state = read_state(common.root());
  const int r = round.value_or(state.open_round.value_or(state.round));
  if (r < 1) throw Error(ErrorCode::unknown_round, "no round has been detected yet");
  const fs::path path = common.root() / ("round-" + std::to_string(r)) / "queue.jsonl";
  if (!fs::exists(path)) throw Error(ErrorCode::unknown_round, "unknown round " + std::to_string(r));
  ReviewService service(common.root());
  const auto queue = read_review_tasks(path, service.task());
  if (common.json()) {
    std::cout << to_jsonl(queue);
    return 0;
  }
  std::cout << "round " << r << ": " << queue.size() << " tasks\n";
  for (const auto& t : queue) {
    std::cout << "  " << t.queue_position << "\t" << t.item_id << "\t" << reason_kind(t.reason) << "\t"
              << fmt(t.severity) << "\t" << to_string(t.mode) << "\n";
  }
  return 0;
}

// ---- serve ----

int run_serve(const Common& common, const std::string& addr, int lease_seconds) {
  const auto [host, port] = parse_addr(addr);
  ReviewService service(common.root(), {}, std::chrono::seconds(lease_seconds));
  ReviewHttpServer server(service);
  const int bound = server.bind(host, port);
  std::cout << "serving " << common.root().string() << " on http://" << host << ":" << bound << "/api/v1\n"
            << std::flush;
  server.serve();
  return 0;
}

// ---- merge ----

int run_merge(const Common& common, int round, const std::optional<std::string>& decisions_path) {
  LoopEngine engine = LoopEngine::open(common.root());
  if (engine.state().open_round != round) {
    throw Error(ErrorCode::no_open_round, "round " + std::to_string(round) + " is not open");
  }
  const TaskKind task = engine.current_version().task;
  std::vector<ReviewDecision> decisions;
  if (decisions_path) {
    const auto queue = read_review_tasks(engine.round_dir(round) / "queue.jsonl", task);
    decisions = resolve_decisions(read_decisions(*decisions_path, task), queue);
  } else {
    ReviewService service(common.root());
    service.close_round(round);
    decisions = service.resolve_decisions(round);
  }
  const LoopState& state = engine.apply_round(decisions);
  const RoundRecord& record = state.history.back();
  if (common.json()) {
    Json j;
    j["round"] = record.round;
    j["version"] = state.current_version;
    j["decisions_applied"] = record.decisions_applied;
    j["items_dropped"] = record.items_dropped;
    j["dev_metric"] = optional_json(record.dev_metric);
    j["dev_metric_after"] = optional_json(record.dev_metric_after);
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "merged round " << record.round << " into " << state.current_version << ": "
              << record.decisions_applied << " decisions, " << record.items_dropped << " dropped\n";
  }
  return 0;
}

// ---- train-baseline / predict ----

DatasetVersion version_or_current(const LoopEngine& engine, const std::optional<std::string>& id) {
  return id ? engine.load_version(*id) : engine.current_version();
}

int run_train(const Common& common, const std::optional<std::string>& version_id, const TrainConfig& cfg) {
  LoopEngine engine = LoopEngine::open(common.root());
  const DatasetVersion version = version_or_current(engine, version_id);
  std::vector<double> losses;
  const LinearModel model = train(version, cfg, &losses);
  const fs::path path = common.root() / "models" / (model.model_id + ".bin");
  fs::create_directories(path.parent_path());
  save_model(model, path);
  DetectorConfig cfg_for_task;
  cfg_for_task.task = version.task;
  const auto dev = dev_metric(version, predict(model, version), cfg_for_task);
  if (common.json()) {
    Json j;
    j["model_id"] = model.model_id;
    j["path"] = path.string();
    j["version"] = version.version_id;
    j["epoch_losses"] = losses;
    j["dev_metric"] = optional_json(dev);
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "trained " << model.model_id << " on " << version.version_id << " -> " << path.string()
              << "\nfinal loss " << (losses.empty() ? std::string("-") : fmt(losses.back()))
              << ", dev metric " << fmt(dev) << "\n";
  }
  return 0;
}

int run_predict(const Common& common, const std::string& model_path,
                const std::optional<std::string>& version_id) {
  LoopEngine engine = LoopEngine::open(common.root());
  const DatasetVersion version = version_or_current(engine, version_id);
  const LinearModel model = load_model(model_path);
  // Predictions are JSONL on stdout regardless of --format.
  std::cout << to_jsonl(predict(model, version));
  return 0;
}

// ---- simulate ----

struct SimArgs {
  std::string task = "classification";
  SimulationOptions options;
  std::optional<std::string> noise_kind;
  std::optional<std::string> review_mode;
};

int run_simulate(const Common& common, SimArgs args) {
  args.options.task = parse_task_kind(args.task);
  if (args.noise_kind) args.options.noise_kind = parse_noise_kind(*args.noise_kind);
  if (args.review_mode) args.options.review_mode = parse_review_mode(*args.review_mode);
  args.options.detector.task = args.options.task;
  args.options.detector.validate();
  args.options.train.validate();

  fs::path root;
  bool scratch = false;
  if (common.store || std::getenv("RELABEL_STORE")) {
    root = common.root();
  } else {
    root = fs::temp_directory_path() /
           ("relabel-sim-" + std::to_string(::getpid()) + "-" + std::to_string(args.options.seed));
    scratch = true;
  }
  SimulationReport report;
  try {
    report = run_simulation(args.options, root);
  } catch (...) {
    if (scratch) fs::remove_all(root);
    throw;
  }
  if (scratch) fs::remove_all(root);
  std::cout << (common.json() ? report.json() : report.csv());
  return 0;
}

// ---- metrics / diff ----

int run_metrics(const Common& common) {
  const LoopState state = read_state(common.root());
  if (common.json()) {
    std::cout << state_json(state);
    return 0;
  }
  std::cout << "version " << state.current_version << ", round " << state.round;
  if (state.open_round) std::cout << " (round " << *state.open_round << " open)";
  std::cout << "\nround\ttrain\tflags\tdecided\tdropped\tdev\tdev_after\n";
  for (const auto& r : state.history) {
    std::cout << r.round << "\t" << r.train_items << "\t" << r.flags_emitted << "\t" << r.decisions_applied
              << "\t" << r.items_dropped << "\t" << fmt(r.dev_metric) << "\t" << fmt(r.dev_metric_after)
              << "\n";
  }
  return 0;
}

int run_diff(const Common& common, const std::string& from, const std::string& to) {
  LoopEngine engine = LoopEngine::open(common.root());
  const auto entries = diff_versions(engine.load_version(from), engine.load_version(to));
  if (common.json()) {
    Json arr = Json::array();
    for (const auto& e : entries) {
      Json j;
      j["item_id"] = e.item_id;
      j["old_label"] = e.old_label ? to_json(*e.old_label) : Json(nullptr);
      j["new_label"] = e.new_label ? to_json(*e.new_label) : Json(nullptr);
      arr.push_back(std::move(j));
    }
    std::cout << arr.dump(2) << "\n";
    return 0;
  }
  std::cout << entries.size() << " changed items\n";
  for (const auto& e : entries) {
    std::cout << "  " << e.item_id << "\t" << (e.old_label ? dump(to_json(*e.old_label)) : "-") << " -> "
              << (e.new_label ? dump(to_json(*e.new_label)) : "(dropped)") << "\n";
  }
  return 0;
}

void add_train_options(CLI::App* cmd, TrainConfig& cfg) {
  cmd->add_option("--epochs", cfg.epochs, "Training epochs");
  cmd->add_option("--lr", cfg.learning_rate, "Learning rate");
  cmd->add_option("--l2", cfg.l2, "L2 penalty");
  cmd->add_option("--seed", cfg.seed, "Shuffle seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"relabel: iterative model-assisted label correction"};
  app.require_subcommand(1);
  Common common;

  InitArgs init_args;
  auto* init = app.add_subcommand("init", "Create a store from a round-0 dataset");
  add_store(init, common);
  add_format(init, common);
  init->add_option("--task", init_args.task, "Task kind")->required();
  init->add_option("--input", init_args.input, "items.jsonl or a dataset directory")->required();

  DetectArgs detect_args;
  auto* detect_cmd = app.add_subcommand("detect", "Flag noisy items for the next round");
  add_store(detect_cmd, common);
  add_format(detect_cmd, common);
  detect_cmd->add_option("--round", detect_args.round, "Round number")->required();
  detect_cmd->add_option("--predictions", detect_args.predictions, "Predictions JSONL");
  detect_cmd->add_flag("--baseline", detect_args.baseline, "Train the built-in baseline");
  detect_cmd->add_option("--iou-threshold", detect_args.iou, "Detection IoU threshold");
  detect_cmd->add_option("--bleu-threshold", detect_args.bleu, "Generation BLEU threshold");
  detect_cmd->add_option("--ctr-threshold", detect_args.ctr_threshold, "CTR gap threshold");
  detect_cmd->add_option("--generation-mode", detect_args.generation_mode, "common-token or bleu");
  detect_cmd->add_option("--entity-class", detect_args.entity_class, "Restrict tagging to one class");
  detect_cmd->add_option("--review-mode", detect_args.review_mode, "choice or open");
  detect_cmd->add_option("--bands", detect_args.bands, "MinHash bands for queue grouping");
  add_train_options(detect_cmd, detect_args.train);

  std::optional<int> queue_round;
  auto* queue = app.add_subcommand("queue", "Show a round's review queue");
  add_store(queue, common);
  add_format(queue, common);
  queue->add_option("--round", queue_round, "Round (default: open round)");

  std::string addr = "127.0.0.1:8080";
  int lease_seconds = 600;
  auto* serve = app.add_subcommand("serve", "Serve the review API");
  add_store(serve, common);
  serve->add_option("--addr", addr, "HOST:PORT");
  serve->add_option("--lease-seconds", lease_seconds, "Lease window");

  int merge_round = 0;
  std::optional<std::string> merge_decisions;
  auto* merge = app.add_subcommand("merge", "Close a round and derive the next version");
  add_store(merge, common);
  add_format(merge, common);
  merge->add_option("--round", merge_round, "Round number")->required();
  merge->add_option("--decisions", merge_decisions, "Decisions JSONL (default: the service log)");

  std::optional<std::string> train_version;
  TrainConfig train_cfg;
  auto* train_cmd = app.add_subcommand("train-baseline", "Train the baseline model on a version");
  add_store(train_cmd, common);
  add_format(train_cmd, common);
  train_cmd->add_option("--version", train_version, "Version id (default: current)");
  add_train_options(train_cmd, train_cfg);

  std::string model_path;
  std::optional<std::string> predict_version;
  auto* predict_cmd = app.add_subcommand("predict", "Write predictions JSONL for a version");
  add_store(predict_cmd, common);
  predict_cmd->add_option("--model", model_path, "Model checkpoint")->required();
  predict_cmd->add_option("--version", predict_version, "Version id (default: current)");

  SimArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run the loop on synthetic data");
  add_store(simulate, common);
  add_format(simulate, common);
  simulate->add_option("--task", sim.task, "Task kind");
  simulate->add_option("--n", sim.options.n, "Dataset size");
  simulate->add_option("--classes", sim.options.classes, "Classes (entity/object classes)");
  simulate->add_option("--noise", sim.options.noise_rate, "Fraction of train items corrupted");
  simulate->add_option("--noise-kind", sim.noise_kind, "Noise model");
  simulate->add_option("--annotator-accuracy", sim.options.annotator_accuracy, "Simulated accuracy");
  simulate->add_option("--rounds", sim.options.rounds, "Correction rounds");
  simulate->add_option("--seed", sim.options.seed, "Master seed");
  simulate->add_option("--review-mode", sim.review_mode, "choice or open");
  simulate->add_option("--epochs", sim.options.train.epochs, "Training epochs");
  simulate->add_option("--lr", sim.options.train.learning_rate, "Learning rate");
  simulate->add_option("--l2", sim.options.train.l2, "L2 penalty");
  simulate->add_option("--ctr-threshold", sim.options.detector.ctr_threshold, "CTR gap threshold");
  simulate->add_option("--iou-threshold", sim.options.detector.iou_threshold, "Detection IoU threshold");

  auto* metrics = app.add_subcommand("metrics", "Show per-round loop metrics");
  add_store(metrics, common);
  add_format(metrics, common);

  std::string diff_from, diff_to;
  auto* diff = app.add_subcommand("diff", "Compare two dataset versions");
  add_store(diff, common);
  add_format(diff, common);
  diff->add_option("from", diff_from, "Older version id")->required();
  diff->add_option("to", diff_to, "Newer version id")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 1;
  }

  try {
    if (*init) return run_init(common, init_args);
    if (*detect_cmd) return run_detect(common, detect_args);
    if (*queue) return run_queue(common, queue_round);
    if (*serve) return run_serve(common, addr, lease_seconds);
    if (*merge) return run_merge(common, merge_round, merge_decisions);
    if (*train_cmd) return run_train(common, train_version, train_cfg);
    if (*predict_cmd) return run_predict(common, model_path, predict_version);
    if (*simulate) return run_simulate(common, sim);
    if (*metrics) return run_metrics(common);
    if (*diff) return run_diff(common, diff_from, diff_to);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
