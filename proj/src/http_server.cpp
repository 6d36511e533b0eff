#include "relabel/http_server.hpp"

#include <httplib.h>

#include "relabel/error.hpp"
#include "relabel/serialize.hpp"

namespace relabel {

namespace {

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::closed_round:
    case ErrorCode::lease_conflict:
    case ErrorCode::no_open_round:
    case ErrorCode::round_still_open:
      return 409;
    case ErrorCode::unknown_round:
      return 404;
    case ErrorCode::io:
      return 500;
    default:
      return 422;
  }
}

void send_error(httplib::Response& res, int status, ErrorCode code, const std::string& message) {
  Json body;
  body["error"] = to_string(code);
  body["message"] = message;
  res.status = status;
  res.set_content(dump(body), "application/json");
}

template <class F>
httplib::Server::Handler guarded(F&& handler) {
  return [handler = std::forward<F>(handler)](const httplib::Request& req, httplib::Response& res) {
    try {
      handler(req, res);
    } catch (const Error& e) {
      send_error(res, http_status(e.code()), e.code(), e.what());
    } catch (const nlohmann::json::exception& e) {
      send_error(res, 422, ErrorCode::malformed_record, e.what());
    }
  };
}

int round_param(const httplib::Request& req) {
  try {
    return std::stoi(req.matches[1].str());
  } catch (const std::exception&) {
    throw Error(ErrorCode::unknown_round, "invalid round '" + req.matches[1].str() + "'");
  }
}

}  // namespace

struct ReviewHttpServer::Impl {
  explicit Impl(ReviewService& s) : service(s) {}
  ReviewService& service;
  httplib::Server server;
};

ReviewHttpServer::ReviewHttpServer(ReviewService& service)
    : impl_(std::make_unique<Impl>(service)) {
  auto& svc = impl_->service;
  auto& srv = impl_->server;

  srv.Get("/api/v1/queue/next", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            const std::string annotator = req.get_param_value("annotator");
            if (annotator.empty()) {
              throw Error(ErrorCode::invalid_argument, "query parameter 'annotator' is required");
            }
            auto task = svc.lease_next(annotator);
            if (!task) {
              res.status = 204;
              return;
            }
            res.set_content(dump(to_json(*task)), "application/json");
          }));

  srv.Post("/api/v1/decision", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             Json body;
             try {
               body = Json::parse(req.body);
             } catch (const nlohmann::json::exception& e) {
               throw Error(ErrorCode::malformed_record, e.what());
             }
             ReviewDecision decision = decision_from_json(body, svc.task());
             const SubmitStatus status = svc.submit_decision(decision);
             Json ack;
             ack["status"] = status == SubmitStatus::recorded ? "recorded" : "duplicate";
             ack["item_id"] = decision.item_id;
             ack["round"] = decision.round;
             res.set_content(dump(ack), "application/json");
           }));

  srv.Get(R"(/api/v1/rounds/(-?\d+)/stats)",
          guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            const RoundStats s = svc.round_stats(round_param(req));
            Json j;
            j["round"] = s.round;
            j["open"] = s.open;
            j["queued"] = s.queued;
            j["leased"] = s.leased;
            j["decided"] = s.decided;
            j["remaining"] = s.remaining;
            Json reasons = Json::object();
            for (const auto& [k, v] : s.by_reason) reasons[k] = v;
            j["by_reason"] = std::move(reasons);
            res.set_content(dump(j), "application/json");
          }));

  srv.Get(R"(/api/v1/rounds/(-?\d+)/export)",
          guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            res.set_content(to_jsonl(svc.resolve_decisions(round_param(req))), "application/x-ndjson");
          }));

  srv.Post(R"(/api/v1/rounds/(-?\d+)/close)",
           guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const int round = round_param(req);
             svc.close_round(round);
             Json ack;
             ack["round"] = round;
             ack["status"] = "closed";
             res.set_content(dump(ack), "application/json");
           }));
}

ReviewHttpServer::~ReviewHttpServer() { stop(); }

int ReviewHttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw Error(ErrorCode::io, "cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw Error(ErrorCode::io, "cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void ReviewHttpServer::serve() { impl_->server.listen_after_bind(); }

void ReviewHttpServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

void ReviewHttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

std::pair<std::string, int> parse_addr(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::invalid_argument, "address must be HOST:PORT");
  try {
    return {addr.substr(0, colon), std::stoi(addr.substr(colon + 1))};
  } catch (const std::exception&) {
    throw Error(ErrorCode::invalid_argument, "invalid port in '" + addr + "'");
  }
}

}  // namespace relabel
