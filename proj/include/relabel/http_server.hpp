#pragma once

#include <memory>
#include <string>

#include "relabel/review.hpp"

namespace relabel {

// HTTP + JSON front end for a ReviewService, all routes under /api/v1:
//   GET  /queue/next?annotator=ID   200 task | 204 empty | 409 no open round
//   POST /decision                  200 | 409 closed/leased | 422 invalid
//   GET  /rounds/{n}/stats          200 | 404
//   GET  /rounds/{n}/export         200 decisions.jsonl | 409 still open | 404
//   POST /rounds/{n}/close          200 | 404
class ReviewHttpServer {
 public:
  explicit ReviewHttpServer(ReviewService& service);
  ~ReviewHttpServer();

  ReviewHttpServer(const ReviewHttpServer&) = delete;
  ReviewHttpServer& operator=(const ReviewHttpServer&) = delete;

  // Binds host:port (port 0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks serving requests until stop().
  void serve();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Splits "HOST:PORT".
std::pair<std::string, int> parse_addr(const std::string& addr);

}  // namespace relabel
