#include <doctest.h>

#include <set>

#include "relabel/review.hpp"
#include "relabel/sim.hpp"
#include "support.hpp"

using namespace relabel;
using test::error_of;

namespace {

std::vector<ReviewTask> flip_tasks(const Truth& truth, int n) {
  std::vector<ReviewTask> out;
  int i = 0;
  for (const auto& [id, label] : truth) {
    if (i == n) break;
    ReviewTask t;
    t.item_id = id;
    t.round = 1;
    t.payload = std::string("x");
    const auto& name = std::get<ClassLabel>(label).name;
    t.previous_human_label = ClassLabel{name == "class-0" ? "class-1" : "class-0"};
    t.model_reference = (i % 2) ? label : t.previous_human_label;
    t.reason = LabelMismatch{"", ""};
    t.mode = ReviewMode::open;
    t.queue_position = i++;
    out.push_back(t);
  }
  return out;
}

}  // namespace

TEST_CASE("generate_dataset") {
  const auto g = generate_dataset(TaskKind::classification, 100, 2, 7);
  int train = 0, dev = 0;
  for (const auto& it : g.version.items) {
    (it.split == Split::train ? train : dev)++;
    CHECK(it.label() == g.truth.at(it.id));
  }
  CHECK(train == 80);
  CHECK(dev == 20);
  CHECK(generate_dataset(TaskKind::classification, 100, 2, 7).version.version_id == g.version.version_id);
  CHECK(generate_dataset(TaskKind::classification, 100, 2, 8).version.version_id != g.version.version_id);

  const auto five = generate_dataset(TaskKind::classification, 10, 5, 1);
  std::set<std::string> seen;
  for (const auto& it : five.version.items) {
    if (it.split == Split::train) seen.insert(std::get<ClassLabel>(it.label()).name);
  }
  CHECK(seen.size() == 5);

  for (auto task : {TaskKind::tagging, TaskKind::detection, TaskKind::generation, TaskKind::ctr}) {
    const auto d = generate_dataset(task, 50, 3, 2);
    CHECK(d.version.items.size() == 50);
    CHECK(d.version.task == task);
  }
}

TEST_CASE("inject_noise") {
  const auto g = generate_dataset(TaskKind::classification, 250, 3, 3);  // 200 train items

  SUBCASE("rate 0") {
    const auto n = inject_noise(g.version, g.truth, NoiseSpec{0.0, NoiseKind::uniform_class_flip, 1});
    CHECK(n.noise_mask.empty());
    CHECK(n.version.version_id == g.version.version_id);
  }
  SUBCASE("rate 0.15 corrupts exactly 30 train items, each to another class") {
    const auto n = inject_noise(g.version, g.truth, NoiseSpec{0.15, NoiseKind::uniform_class_flip, 1});
    CHECK(n.noise_mask.size() == 30);
    CHECK(current_noise(n.version, g.truth) == n.noise_mask);
    for (const auto& it : n.version.items) {
      if (it.split == Split::dev) CHECK(it.label() == g.truth.at(it.id));
    }
  }
  SUBCASE("incompatible kind") {
    CHECK(error_of([&] { inject_noise(g.version, g.truth, NoiseSpec{0.1, NoiseKind::span_drop, 1}); }) ==
          ErrorCode::invalid_argument);
  }
  SUBCASE("other tasks") {
    for (auto task : {TaskKind::tagging, TaskKind::detection, TaskKind::generation, TaskKind::ctr}) {
      const auto d = generate_dataset(task, 250, 2, 4);
      const auto n = inject_noise(d.version, d.truth, NoiseSpec{0.1, default_noise_kind(task), 5});
      CHECK(n.noise_mask.size() == 20);
      CHECK(current_noise(n.version, d.truth) == n.noise_mask);
    }
  }
}

TEST_CASE("simulate_annotation") {
  const auto g = generate_dataset(TaskKind::classification, 1250, 2, 9);
  const auto tasks = flip_tasks(g.truth, 1000);
  auto correct_fraction = [&](double accuracy) {
    const auto ds = simulate_annotation(tasks, g.truth, SimAnnotator{accuracy, 13, "sim"});
    REQUIRE(ds.size() == tasks.size());
    int correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) correct += resolve_label(ds[i], tasks[i]) == g.truth.at(ds[i].item_id);
    return static_cast<double>(correct) / static_cast<double>(ds.size());
  };
  CHECK(correct_fraction(1.0) == 1.0);
  const auto none = simulate_annotation(tasks, g.truth, SimAnnotator{0.0, 13, "sim"});
  for (const auto& d : none) CHECK(d.choice == Choice::keep_previous);
  const double f = correct_fraction(0.9);
  CHECK(f >= 0.87);
  CHECK(f <= 0.93);

  Truth missing;
  CHECK(error_of([&] { simulate_annotation(tasks, missing, SimAnnotator{}); }) == ErrorCode::unknown_item);
}

TEST_CASE("choice-mode annotator picks the closer reference") {
  Truth truth{{"g", TextLabel{"a b c d"}}};
  ReviewTask t;
  t.item_id = "g";
  t.round = 1;
  t.payload = std::string("src");
  t.previous_human_label = TextLabel{"x y z"};
  t.model_reference = TextLabel{"a b c e"};
  t.reason = GenerationMismatch{"common-token", 0};
  t.mode = ReviewMode::choice;
  const std::vector<ReviewTask> q{t};
  CHECK(simulate_annotation(q, truth, SimAnnotator{1.0, 0, "s"})[0].choice == Choice::accept_model);
}

TEST_CASE("score_detection") {
  const std::set<std::string> mask{"a", "b"};
  auto flag = [](std::string id) { return NoiseFlag{std::move(id), 1, LabelMismatch{}, 1.0, FlagAction::relabel}; };
  const std::vector<NoiseFlag> exact{flag("a"), flag("b")};
  auto r = score_detection(exact, mask);
  CHECK(r.precision == 1.0);
  CHECK(r.recall == 1.0);
  CHECK(score_detection({}, mask).recall == 0.0);
  const std::vector<NoiseFlag> partial{flag("a"), flag("c")};
  r = score_detection(partial, mask);
  CHECK(r.precision == 0.5);
  CHECK(r.recall == 0.5);
  // Renaming ids consistently changes nothing.
  const std::vector<NoiseFlag> renamed{flag("zz-a"), flag("zz-c")};
  const auto r2 = score_detection(renamed, std::set<std::string>{"zz-a", "zz-b"});
  CHECK(r2.precision == r.precision);
  CHECK(r2.recall == r.recall);
}

TEST_CASE("simulation runs are reproducible") {
  test::TempDir dir;
  SimulationOptions o;
  o.n = 300;
  o.rounds = 2;
  o.seed = 5;
  const auto a = run_simulation(o, dir / "a");
  const auto b = run_simulation(o, dir / "b");
  CHECK(a.csv() == b.csv());
  CHECK(a.json() == b.json());
  CHECK(a.final_version == b.final_version);
  REQUIRE(a.rows.size() == 2);
  CHECK(a.csv().rfind("round,flags,detection_precision,detection_recall,dev_metric", 0) == 0);

  o.task = TaskKind::generation;
  const auto gen = run_simulation(o, dir / "g");
  CHECK(gen.rows.size() == 2);
  CHECK_FALSE(gen.rows[0].dev_metric_after.has_value());
}
