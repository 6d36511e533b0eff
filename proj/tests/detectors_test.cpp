#include <doctest.h>

#include <random>
#include <set>

#include "relabel/detectors.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace relabel;
using test::error_of;

namespace {

std::set<std::string> ids(const std::vector<NoiseFlag>& flags) {
  std::set<std::string> out;
  for (const auto& f : flags) out.insert(f.item_id);
  return out;
}

DatasetVersion box_version(std::vector<Box> human) {
  return test::version_of(TaskKind::detection, {test::item("img", "img.png", BoxSet{std::move(human)})});
}

DetectorConfig cfg_for(TaskKind task) {
  DetectorConfig cfg;
  cfg.task = task;
  return cfg;
}

}  // namespace

TEST_CASE("classification detector") {
  const auto v = test::version_of(TaskKind::classification,
                                  {test::text_item("a", "x", "A"), test::text_item("b", "y", "B"),
                                   test::text_item("c", "z", "B", Split::dev)});
  SUBCASE("agreement gives no flag, disagreement one") {
    const std::vector<Prediction> preds{test::pred("a", ClassLabel{"A"}), test::pred("b", ClassLabel{"A"}),
                                        test::pred("c", ClassLabel{"A"})};
    const auto flags = detect_classification(v, preds);
    REQUIRE(flags.size() == 1);
    CHECK(flags[0].item_id == "b");
    CHECK(flags[0].round == 1);
    CHECK(flags[0].action == FlagAction::relabel);
    CHECK(flags[0].reason == FlagReason{LabelMismatch{"A", "B"}});
  }
  SUBCASE("coverage gap names the first missing train item") {
    const std::vector<Prediction> preds{test::pred("a", ClassLabel{"A"})};
    CHECK(error_of([&] { detect_classification(v, preds); }) == ErrorCode::missing_prediction);
    CHECK(test::message_of([&] { detect_classification(v, preds); }).find("'b'") != std::string::npos);
  }
  SUBCASE("dev items need no prediction") {
    const std::vector<Prediction> preds{test::pred("a", ClassLabel{"A"}), test::pred("b", ClassLabel{"B"})};
    CHECK(detect_classification(v, preds).empty());
  }
  SUBCASE("bad prediction sets") {
    std::vector<Prediction> preds{test::pred("a", ClassLabel{"A"}), test::pred("b", ClassLabel{"B"})};
    auto dup = preds;
    dup.push_back(test::pred("a", ClassLabel{"A"}));
    CHECK(error_of([&] { detect_classification(v, dup); }) == ErrorCode::duplicate_prediction);
    auto unknown = preds;
    unknown.push_back(test::pred("nope", ClassLabel{"A"}));
    CHECK(error_of([&] { detect_classification(v, unknown); }) == ErrorCode::unknown_item);
    auto wrong_kind = preds;
    wrong_kind[0].value = ClickLabel{1};
    CHECK(error_of([&] { detect_classification(v, wrong_kind); }) == ErrorCode::task_mismatch);
  }
}

TEST_CASE("classification detector equals a linear mismatch scan") {
  std::mt19937 rng(23);
  std::vector<Item> items;
  std::vector<Prediction> preds;
  const std::vector<std::string> classes{"a", "b", "c"};
  for (int i = 0; i < 1000; ++i) {
    const std::string id = "i" + std::to_string(i);
    items.push_back(test::text_item(id, "t", classes[rng() % 3], rng() % 5 == 0 ? Split::dev : Split::train));
    preds.push_back(test::pred(id, ClassLabel{classes[rng() % 3]}));
  }
  const auto v = test::version_of(TaskKind::classification, items);
  const auto expected = test::mismatch_scan(v, preds);
  std::vector<std::string> got;
  for (const auto& f : detect_classification(v, preds)) got.push_back(f.item_id);
  CHECK(got == expected);
  CHECK(detect_classification(v, test::echo_predictions(v)).empty());
}

TEST_CASE("tagging detector") {
  const auto v = test::version_of(
      TaskKind::tagging, {test::item("s", "john lives in paris now", SpanSet{{{0, 2, "per"}, {3, 4, "loc"}}})});
  SUBCASE("identical spans") {
    CHECK(detect_tagging(v, test::echo_predictions(v), "per").empty());
  }
  SUBCASE("missing and spurious spans") {
    const std::vector<Prediction> preds{test::pred("s", SpanSet{{{1, 2, "per"}, {3, 4, "loc"}}})};
    const auto flags = detect_tagging(v, preds, "per");
    REQUIRE(flags.size() == 1);
    const auto& r = std::get<SpanMismatch>(flags[0].reason);
    CHECK(r.entity_class == "per");
    CHECK(r.missing == std::vector<Span>{{0, 2, "per"}});
    CHECK(r.spurious == std::vector<Span>{{1, 2, "per"}});
    CHECK(detect_tagging(v, preds, "loc").empty());
  }
  SUBCASE("unknown class") {
    CHECK(error_of([&] { detect_tagging(v, test::echo_predictions(v), "org"); }) == ErrorCode::invalid_argument);
  }
  SUBCASE("dispatcher unions per-class flags") {
    std::vector<Item> items;
    std::vector<Prediction> preds;
    for (int i = 0; i < 10; ++i) {
      const std::string id = "t" + std::to_string(i);
      items.push_back(test::item(id, "a b c d", SpanSet{{{0, 1, "per"}, {2, 3, "loc"}}}));
      SpanSet p{{{0, 1, "per"}, {2, 3, "loc"}}};
      if (i < 3) p.spans[0].end = 2;        // per disagreement
      else if (i < 7) p.spans[1].end = 4;   // loc disagreement
      preds.push_back(test::pred(id, p));
    }
    const auto tv = test::version_of(TaskKind::tagging, items);
    CHECK(detect_tagging(tv, preds, "per").size() == 3);
    CHECK(detect_tagging(tv, preds, "loc").size() == 4);
    CHECK(detect(tv, preds, cfg_for(TaskKind::tagging)).size() == 7);
    auto filtered = cfg_for(TaskKind::tagging);
    filtered.entity_class_filter = "loc";
    CHECK(detect(tv, preds, filtered).size() == 4);
  }
}

TEST_CASE("box detector") {
  const auto cfg = cfg_for(TaskKind::detection);
  SUBCASE("identical boxes") {
    const auto v = box_version({{0, 0, 2, 2, "car"}});
    CHECK(detect_boxes(v, test::echo_predictions(v), cfg).empty());
  }
  SUBCASE("low IoU pair") {
    const auto v = box_version({{0, 0, 2, 2, "car"}});
    const std::vector<Prediction> preds{test::pred("img", BoxSet{{{1, 1, 3, 3, "car"}}})};
    const auto flags = detect_boxes(v, preds, cfg);
    REQUIRE(flags.size() == 1);
    const auto& r = std::get<BoxMismatch>(flags[0].reason);
    REQUIRE(r.low_iou_pairs.size() == 1);
    CHECK(r.low_iou_pairs[0].iou == 1.0 / 7.0);
    CHECK(flags[0].severity == doctest::Approx(6.0 / 7.0));
  }
  SUBCASE("extra human box") {
    const auto v = box_version({{0, 0, 2, 2, "car"}, {10, 10, 12, 12, "car"}});
    const std::vector<Prediction> preds{test::pred("img", BoxSet{{{0, 0, 2, 2, "car"}}})};
    const auto flags = detect_boxes(v, preds, cfg);
    REQUIRE(flags.size() == 1);
    const auto& r = std::get<BoxMismatch>(flags[0].reason);
    CHECK(r.unmatched_human == std::vector<Box>{{10, 10, 12, 12, "car"}});
    CHECK(flags[0].severity == 1.0);
  }
  SUBCASE("boxes of different classes never match") {
    const auto v = box_version({{0, 0, 2, 2, "car"}});
    const std::vector<Prediction> preds{test::pred("img", BoxSet{{{0, 0, 2, 2, "bus"}}})};
    CHECK(detect_boxes(v, preds, cfg).size() == 1);
  }
}

TEST_CASE("box detector flags grow with the threshold") {
  std::mt19937 rng(29);
  std::uniform_real_distribution<double> u(0, 50);
  std::vector<Item> items;
  std::vector<Prediction> preds;
  for (int i = 0; i < 200; ++i) {
    const std::string id = "b" + std::to_string(i);
    const double x = u(rng), y = u(rng);
    items.push_back(test::item(id, id + ".png", BoxSet{{{x, y, x + 20, y + 20, "car"}}}));
    const double dx = u(rng) / 4, dy = u(rng) / 4;
    preds.push_back(test::pred(id, BoxSet{{{x + dx, y + dy, x + dx + 20, y + dy + 20, "car"}}}));
  }
  const auto v = test::version_of(TaskKind::detection, items);
  std::set<std::string> previous;
  for (double tau : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    auto cfg = cfg_for(TaskKind::detection);
    cfg.iou_threshold = tau;
    const auto now = ids(detect_boxes(v, preds, cfg));
    CHECK(std::includes(now.begin(), now.end(), previous.begin(), previous.end()));
    previous = now;
  }
}

TEST_CASE("greedy_match prefers the highest IoU") {
  const std::vector<Box> human{{0, 0, 10, 10, "x"}, {0, 0, 9, 9, "x"}};
  const std::vector<Box> model{{0, 0, 9, 9, "x"}};
  const auto m = greedy_match(human, model);
  REQUIRE(m.size() == 1);
  CHECK(m[0].human_index == 1);
  CHECK(m[0].iou == 1.0);
}

TEST_CASE("generation detector") {
  const auto v = test::version_of(TaskKind::generation,
                                  {test::item("g", "source", TextLabel{"the cat sat down"})});
  auto cfg = cfg_for(TaskKind::generation);
  SUBCASE("identical output") { CHECK(detect_generation(v, test::echo_predictions(v), cfg).empty()); }
  SUBCASE("no common token") {
    const std::vector<Prediction> preds{test::pred("g", TextLabel{"a dog ran"})};
    const auto flags = detect_generation(v, preds, cfg);
    REQUIRE(flags.size() == 1);
    CHECK(std::get<GenerationMismatch>(flags[0].reason).metric == "common-token");
  }
  SUBCASE("bleu mode above threshold") {
    cfg.generation_mode = GenerationMode::bleu;
    const std::vector<Prediction> preds{test::pred("g", TextLabel{"the cat sat"})};
    CHECK(detect_generation(v, preds, cfg).empty());
    cfg.bleu_threshold = 0.8;
    const auto flags = detect_generation(v, preds, cfg);
    REQUIRE(flags.size() == 1);
    CHECK(std::get<GenerationMismatch>(flags[0].reason).value == doctest::Approx(std::exp(-1.0 / 3.0)));
  }
}

TEST_CASE("ctr detector") {
  const auto v = test::version_of(TaskKind::ctr, {test::item("p", FeatureMap{{"f", 1.0}}, ClickLabel{1}),
                                                  test::item("q", FeatureMap{{"f", 0.0}}, ClickLabel{0})});
  const auto cfg = cfg_for(TaskKind::ctr);
  auto run = [&](double sp, double sq) {
    const std::vector<Prediction> preds{test::pred("p", ClickLabel{sp >= 0.5}, sp),
                                        test::pred("q", ClickLabel{sq >= 0.5}, sq)};
    return detect_ctr(v, preds, cfg);
  };
  const auto flags = run(0.05, 0.91);
  REQUIRE(flags.size() == 2);
  CHECK(flags[0].action == FlagAction::drop);
  CHECK(std::get<CtrDisagreement>(flags[0].reason).gap == doctest::Approx(0.95));
  CHECK(std::get<CtrDisagreement>(flags[1].reason).gap == doctest::Approx(0.91));
  CHECK(run(0.95, 0.2).empty());
  SUBCASE("score is required") {
    const std::vector<Prediction> preds{test::pred("p", ClickLabel{1}), test::pred("q", ClickLabel{0})};
    CHECK(error_of([&] { detect_ctr(v, preds, cfg); }).has_value());
  }
}

TEST_CASE("detector config validation") {
  auto cfg = cfg_for(TaskKind::detection);
  cfg.iou_threshold = 0.0;
  CHECK(error_of([&] { cfg.validate(); }) == ErrorCode::invalid_argument);
  cfg = cfg_for(TaskKind::classification);
  cfg.entity_class_filter = "per";
  CHECK(error_of([&] { cfg.validate(); }) == ErrorCode::invalid_argument);
}
