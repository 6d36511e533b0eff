#include <doctest.h>

#include <mutex>
#include <set>
#include <thread>

#include "relabel/loop.hpp"
#include "relabel/review.hpp"
#include "relabel/serialize.hpp"
#include "support.hpp"

using namespace relabel;
using test::error_of;
using namespace std::chrono_literals;

namespace {

struct MockClock {
  std::chrono::system_clock::time_point now{std::chrono::milliseconds(1'700'000'000'000)};
  Clock fn() {
    return [this] { return now; };
  }
};

// A store whose round 1 is open with `queued` classification tasks.
void open_round(const std::filesystem::path& root, int queued, int total = 20) {
  std::vector<Item> items;
  std::vector<Prediction> preds;
  for (int i = 0; i < total; ++i) {
    const std::string id = "i" + std::to_string(100 + i);
    items.push_back(test::text_item(id, "text " + std::to_string(i * 7919), "A"));
    preds.push_back(test::pred(id, ClassLabel{i < queued ? "B" : "A"}));
  }
  auto engine = LoopEngine::create(root, test::version_of(TaskKind::classification, items));
  DetectorConfig cfg;
  engine.run_round(preds, cfg);
}

ReviewDecision make(const std::string& id, const std::string& annotator, Choice choice, std::int64_t at = -1) {
  ReviewDecision d;
  d.item_id = id;
  d.round = 1;
  d.annotator_id = annotator;
  d.choice = choice;
  d.submitted_at_ms = at;
  return d;
}

ReviewTask task_for(const std::string& id, Label prev, Label model) {
  ReviewTask t;
  t.item_id = id;
  t.round = 1;
  t.payload = std::string("p");
  t.previous_human_label = std::move(prev);
  t.model_reference = std::move(model);
  t.reason = LabelMismatch{"B", "A"};
  return t;
}

}  // namespace

TEST_CASE("leasing") {
  test::TempDir dir;
  open_round(dir / "s", 3);
  MockClock clock;
  ReviewService svc(dir / "s", clock.fn(), 10min);

  const auto first = svc.lease_next("alice");
  REQUIRE(first);
  CHECK(first->queue_position == 0);
  const auto second = svc.lease_next("bob");
  REQUIRE(second);
  CHECK(second->item_id != first->item_id);
  const auto third = svc.lease_next("carol");
  REQUIRE(third);
  CHECK_FALSE(svc.lease_next("dave").has_value());

  SUBCASE("expired lease is offered again") {
    clock.now += 11min;
    const auto again = svc.lease_next("dave");
    REQUIRE(again);
    CHECK(again->queue_position == 0);
  }
  SUBCASE("lease held by someone else blocks submission") {
    CHECK(error_of([&] { svc.submit_decision(make(first->item_id, "bob", Choice::keep_previous)); }) ==
          ErrorCode::lease_conflict);
    clock.now += 11min;
    CHECK(svc.submit_decision(make(first->item_id, "bob", Choice::keep_previous)) == SubmitStatus::recorded);
  }
  SUBCASE("decided items are not offered again") {
    svc.submit_decision(make(first->item_id, "alice", Choice::accept_model));
    clock.now += 11min;
    std::set<std::string> offered;
    while (auto t = svc.lease_next("eve")) offered.insert(t->item_id);
    CHECK(offered.size() == 2);
    CHECK(offered.count(first->item_id) == 0);
  }
  CHECK(error_of([&] { svc.lease_next(""); }) == ErrorCode::invalid_argument);
}

TEST_CASE("concurrent leasing hands out distinct tasks") {
  test::TempDir dir;
  open_round(dir / "s", 12);
  ReviewService svc(dir / "s");
  std::mutex m;
  std::multiset<std::string> leased;
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      while (auto task = svc.lease_next("ann" + std::to_string(t))) {
        std::lock_guard lock(m);
        leased.insert(task->item_id);
      }
    });
  }
  for (auto& th : threads) th.join();
  CHECK(leased.size() == 12);
  CHECK(std::set<std::string>(leased.begin(), leased.end()).size() == 12);
}

TEST_CASE("submission") {
  test::TempDir dir;
  open_round(dir / "s", 3);
  MockClock clock;
  ReviewService svc(dir / "s", clock.fn());
  const auto task = svc.lease_next("alice");
  REQUIRE(task);
  const auto log = dir / "s" / "round-1" / "decision-log.jsonl";

  SUBCASE("accept_model then merge yields the model class") {
    CHECK(svc.submit_decision(make(task->item_id, "alice", Choice::accept_model)) == SubmitStatus::recorded);
    svc.close_round(1);
    const auto resolved = svc.resolve_decisions(1);
    REQUIRE(resolved.size() == 1);
    CHECK(resolved[0].submitted_at_ms == 1'700'000'000'000);
    auto engine = LoopEngine::open(dir / "s");
    engine.apply_round(resolved);
    CHECK(engine.current_version().find(task->item_id)->label() == Label{ClassLabel{"B"}});
  }
  SUBCASE("identical resubmission is acknowledged once") {
    CHECK(svc.submit_decision(make(task->item_id, "alice", Choice::accept_model)) == SubmitStatus::recorded);
    clock.now += 1s;
    CHECK(svc.submit_decision(make(task->item_id, "alice", Choice::accept_model)) == SubmitStatus::duplicate);
    CHECK(read_decisions(log, TaskKind::classification).size() == 1);
  }
  SUBCASE("new_label needs a label") {
    ReviewDecision d = make(task->item_id, "alice", Choice::new_label);
    CHECK(error_of([&] { svc.submit_decision(d); }) == ErrorCode::invalid_argument);
    d.new_label = ClassLabel{"C"};
    CHECK(svc.submit_decision(d) == SubmitStatus::recorded);
  }
  SUBCASE("unknown item and unknown round") {
    CHECK(error_of([&] { svc.submit_decision(make("i119", "alice", Choice::accept_model)); }) ==
          ErrorCode::unknown_item);
    ReviewDecision d = make(task->item_id, "alice", Choice::accept_model);
    d.round = 7;
    CHECK(error_of([&] { svc.submit_decision(d); }) == ErrorCode::unknown_round);
  }
  SUBCASE("closed round") {
    svc.close_round(1);
    CHECK(error_of([&] { svc.submit_decision(make(task->item_id, "alice", Choice::accept_model)); }) ==
          ErrorCode::closed_round);
    CHECK(error_of([&] { svc.lease_next("alice"); }) == ErrorCode::no_open_round);
  }
  SUBCASE("resolution waits for closure") {
    CHECK(error_of([&] { svc.resolve_decisions(1); }) == ErrorCode::round_still_open);
  }
}

TEST_CASE("open-mode tagging labels are validated") {
  test::TempDir dir;
  std::vector<Item> items{test::item("t1", "a b c d", SpanSet{{{0, 1, "per"}}})};
  auto engine = LoopEngine::create(dir / "s", test::version_of(TaskKind::tagging, items));
  DetectorConfig cfg;
  cfg.task = TaskKind::tagging;
  QueueOptions q;
  q.mode = ReviewMode::open;
  engine.run_round(std::vector<Prediction>{test::pred("t1", SpanSet{})}, cfg, q);
  ReviewService svc(dir / "s");
  ReviewDecision d = make("t1", "alice", Choice::new_label);
  d.new_label = SpanSet{{{0, 2, "per"}, {1, 3, "per"}}};
  CHECK(error_of([&] { svc.submit_decision(d); }) == ErrorCode::invariant_violation);
  d.new_label = SpanSet{{{0, 2, "per"}}};
  CHECK(svc.submit_decision(d) == SubmitStatus::recorded);
}

TEST_CASE("choice mode rejects new labels") {
  test::TempDir dir;
  std::vector<Item> items{test::item("g1", "src", TextLabel{"a b"})};
  auto engine = LoopEngine::create(dir / "s", test::version_of(TaskKind::generation, items));
  DetectorConfig cfg;
  cfg.task = TaskKind::generation;
  const auto out = engine.run_round(std::vector<Prediction>{test::pred("g1", TextLabel{"x y"})}, cfg);
  REQUIRE(out.queue.size() == 1);
  CHECK(out.queue[0].mode == ReviewMode::choice);
  ReviewService svc(dir / "s");
  ReviewDecision d = make("g1", "alice", Choice::new_label);
  d.new_label = TextLabel{"c d"};
  CHECK(error_of([&] { svc.submit_decision(d); }) == ErrorCode::invalid_argument);
  CHECK(svc.submit_decision(make("g1", "alice", Choice::keep_previous)) == SubmitStatus::recorded);
}

TEST_CASE("resolve_decisions") {
  const std::vector<ReviewTask> queue{task_for("a", ClassLabel{"A"}, ClassLabel{"B"}),
                                      task_for("b", ClassLabel{"A"}, ClassLabel{"C"})};
  CHECK(resolve_decisions({}, queue).empty());

  SUBCASE("one decision per item is kept as is") {
    const std::vector<ReviewDecision> log{make("b", "x", Choice::accept_model, 5),
                                          make("a", "y", Choice::keep_previous, 6)};
    const auto r = resolve_decisions(log, queue);
    REQUIRE(r.size() == 2);
    CHECK(r[0].item_id == "a");  // queue order
    CHECK(r[0].resolved_label == Label{ClassLabel{"A"}});
    CHECK(r[1].resolved_label == Label{ClassLabel{"C"}});
  }
  SUBCASE("latest timestamp wins") {
    const std::vector<ReviewDecision> log{make("a", "x", Choice::keep_previous, 10),
                                          make("a", "y", Choice::accept_model, 20)};
    const auto r = resolve_decisions(log, queue);
    REQUIRE(r.size() == 1);
    CHECK(r[0].annotator_id == "y");
    const std::vector<ReviewDecision> reversed{log[1], log[0]};
    CHECK(resolve_decisions(reversed, queue) == r);
  }
  SUBCASE("timestamp tie goes to the greatest annotator id") {
    const std::vector<ReviewDecision> log{make("a", "zed", Choice::keep_previous, 10),
                                          make("a", "amy", Choice::accept_model, 10)};
    CHECK(resolve_decisions(log, queue)[0].annotator_id == "zed");
  }
}

TEST_CASE("round stats") {
  test::TempDir dir;
  open_round(dir / "s", 10);
  MockClock clock;
  ReviewService svc(dir / "s", clock.fn());
  auto s = svc.round_stats(1);
  CHECK(s.queued == 10);
  CHECK(s.leased == 0);
  CHECK(s.decided == 0);
  CHECK(s.remaining == 10);
  CHECK(s.open);
  CHECK(s.by_reason["label-mismatch"] == 10);

  for (int i = 0; i < 4; ++i) {
    const auto t = svc.lease_next("a");
    svc.submit_decision(make(t->item_id, "a", Choice::keep_previous));
  }
  svc.lease_next("b");
  s = svc.round_stats(1);
  CHECK(s.decided == 4);
  CHECK(s.leased == 1);
  CHECK(s.remaining + s.leased == 6);
  CHECK(error_of([&] { svc.round_stats(9); }) == ErrorCode::unknown_round);
}
