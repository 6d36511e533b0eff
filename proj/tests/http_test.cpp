#include <doctest.h>

#include <thread>

#include "relabel/http_server.hpp"
#include "relabel/loop.hpp"
#include "relabel/serialize.hpp"
#include "support.hpp"

// After Eigen: <resolv.h> defines a _res macro that breaks Eigen headers.
#include <httplib.h>

using namespace relabel;

namespace {

void open_round(const std::filesystem::path& root, int queued) {
  std::vector<Item> items;
  std::vector<Prediction> preds;
  for (int i = 0; i < 10; ++i) {
    const std::string id = "h" + std::to_string(i);
    items.push_back(test::text_item(id, "payload " + std::to_string(i * 131), "A"));
    preds.push_back(test::pred(id, ClassLabel{i < queued ? "B" : "A"}));
  }
  items.push_back(test::text_item("dev1", "held out", "A", Split::dev));
  preds.push_back(test::pred("dev1", ClassLabel{"B"}));
  auto engine = LoopEngine::create(root, test::version_of(TaskKind::classification, items));
  engine.run_round(preds, DetectorConfig{});
}

struct Running {
  explicit Running(const std::filesystem::path& root) : service(root), server(service) {
    port = server.bind("127.0.0.1", 0);
    thread = std::thread([this] { server.serve(); });
    server.wait_until_ready();
  }
  ~Running() {
    server.stop();
    thread.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port); }

  ReviewService service;
  ReviewHttpServer server;
  int port = 0;
  std::thread thread;
};

std::string decision_body(const std::string& id, const std::string& annotator, const std::string& choice,
                          const std::string& extra = "") {
  return R"({"item_id":")" + id + R"(","round":1,"annotator_id":")" + annotator + R"(","choice":")" + choice +
         "\"" + extra + "}";
}

}  // namespace

TEST_CASE("review API") {
  test::TempDir dir;
  open_round(dir / "s", 3);
  Running running(dir / "s");
  auto cli = running.client();

  SUBCASE("lease, decide, stats, close, export") {
    auto next = cli.Get("/api/v1/queue/next?annotator=alice");
    REQUIRE(next);
    CHECK(next->status == 200);
    const Json task = Json::parse(next->body);
    CHECK(task["queue_position"] == 0);
    CHECK(task["task"] == "classification");
    CHECK(task.contains("previous_human_label"));
    CHECK(task.contains("model_reference"));
    const std::string id = task["item_id"];

    auto post = cli.Post("/api/v1/decision", decision_body(id, "alice", "accept_model"), "application/json");
    REQUIRE(post);
    CHECK(post->status == 200);
    CHECK(Json::parse(post->body)["status"] == "recorded");
    post = cli.Post("/api/v1/decision", decision_body(id, "alice", "accept_model"), "application/json");
    CHECK(Json::parse(post->body)["status"] == "duplicate");

    auto stats = cli.Get("/api/v1/rounds/1/stats");
    REQUIRE(stats);
    const Json s = Json::parse(stats->body);
    CHECK(s["queued"] == 3);
    CHECK(s["decided"] == 1);
    CHECK(s["leased"] == 0);
    CHECK(s["remaining"] == 2);

    auto early = cli.Get("/api/v1/rounds/1/export");
    CHECK(early->status == 409);

    auto close = cli.Post("/api/v1/rounds/1/close", "", "application/json");
    CHECK(close->status == 200);
    auto exported = cli.Get("/api/v1/rounds/1/export");
    REQUIRE(exported);
    CHECK(exported->status == 200);
    const Json line = Json::parse(exported->body.substr(0, exported->body.find('\n')));
    CHECK(line["item_id"] == id);
    CHECK(line["label"] == "B");

    auto late = cli.Post("/api/v1/decision", decision_body(id, "bob", "keep_previous"), "application/json");
    CHECK(late->status == 409);
    CHECK(cli.Get("/api/v1/queue/next?annotator=alice")->status == 409);
  }
  SUBCASE("empty queue answers 204") {
    for (int i = 0; i < 3; ++i) CHECK(cli.Get("/api/v1/queue/next?annotator=a")->status == 200);
    CHECK(cli.Get("/api/v1/queue/next?annotator=a")->status == 204);
  }
  SUBCASE("validation errors") {
    CHECK(cli.Get("/api/v1/queue/next")->status == 422);
    CHECK(cli.Post("/api/v1/decision", "{nope", "application/json")->status == 422);
    CHECK(cli.Post("/api/v1/decision", decision_body("h0", "a", "maybe"), "application/json")->status == 422);
    CHECK(cli.Post("/api/v1/decision", decision_body("h9", "a", "keep_previous"), "application/json")->status ==
          422);
    // Dev items are never queued, so decisions on them are rejected.
    CHECK(cli.Post("/api/v1/decision", decision_body("dev1", "a", "accept_model"), "application/json")->status ==
          422);
    CHECK(cli.Get("/api/v1/rounds/5/stats")->status == 404);
  }
  SUBCASE("lease conflict") {
    const Json task = Json::parse(cli.Get("/api/v1/queue/next?annotator=alice")->body);
    auto r = cli.Post("/api/v1/decision", decision_body(task["item_id"], "bob", "keep_previous"),
                      "application/json");
    CHECK(r->status == 409);
    CHECK(Json::parse(r->body)["error"] == "lease-conflict");
  }
  SUBCASE("explicit timestamps are kept") {
    auto r = cli.Post("/api/v1/decision",
                      decision_body("h1", "alice", "keep_previous", R"(,"submitted_at":"2026-01-02T03:04:05.678Z")"),
                      "application/json");
    CHECK(r->status == 200);
    const auto log = read_decisions(dir / "s" / "round-1" / "decision-log.jsonl", TaskKind::classification);
    REQUIRE(log.size() == 1);
    CHECK(format_timestamp(log[0].submitted_at_ms) == "2026-01-02T03:04:05.678Z");
  }
}

TEST_CASE("parse_addr") {
  CHECK(parse_addr("127.0.0.1:8080") == std::pair<std::string, int>{"127.0.0.1", 8080});
  CHECK(test::error_of([] { parse_addr("localhost"); }) == ErrorCode::invalid_argument);
  CHECK(test::error_of([] { parse_addr("h:x"); }) == ErrorCode::invalid_argument);
}
