#pragma once

#include <httplib.h>

#include <atomic>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

// In-process HTTP server on an ephemeral localhost port. Handlers receive the
// parsed JSON body; every request body is kept for inspection.
class FakeServer {
 public:
  using Handler = std::function<void(const nlohmann::json& body, httplib::Response& res)>;

  FakeServer() = default;
  ~FakeServer() { stop(); }

  void on_post(const std::string& path, Handler h) {
    server_.Post(path, [this, h](const httplib::Request& req, httplib::Response& res) {
      nlohmann::json body = req.body.empty() ? nlohmann::json() : nlohmann::json::parse(req.body);
      {
        std::lock_guard lock(mutex_);
        bodies_.push_back(body);
        auth_.push_back(req.get_header_value("Authorization"));
      }
      ++hits_;
      h(body, res);
    });
  }

  void on_get(const std::string& path, std::function<void(httplib::Response&)> h) {
    server_.Get(path, [this, h](const httplib::Request&, httplib::Response& res) {
      ++hits_;
      h(res);
    });
  }

  void start() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int hits() const { return hits_; }
  std::vector<nlohmann::json> bodies() {
    std::lock_guard lock(mutex_);
    return bodies_;
  }
  std::vector<std::string> auth_headers() {
    std::lock_guard lock(mutex_);
    return auth_;
  }

  static void reply(httplib::Response& res, const nlohmann::json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> hits_{0};
  std::mutex mutex_;
  std::vector<nlohmann::json> bodies_;
  std::vector<std::string> auth_;
};
