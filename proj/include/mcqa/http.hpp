#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <utility>

#include <json.hpp>

#include "mcqa/rng.hpp"

namespace mcqa {

struct RetryPolicy {
  int max_attempts = 5;
  int backoff_base_ms = 250;

  void validate() const;
};

// Every HTTP request attempt made by any JsonClient in this process.
std::uint64_t network_request_count();

// Delay before attempt `attempt` (1-based, >= 2): base * 2^(attempt-2),
// scaled by a jitter factor in [0.5, 1.5).
std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int attempt, SplitMix64& rng);

// JSON-over-HTTP client with retries on transport failures, 5xx and 429.
// Other non-2xx statuses throw a backend error carrying the status.
class JsonClient {
 public:
  // `endpoint` is scheme://host[:port][/prefix]; paths are appended to prefix.
  JsonClient(const std::string& endpoint, RetryPolicy policy, std::string bearer_token = {});
  ~JsonClient();

  nlohmann::json post(const std::string& path, const nlohmann::json& body);
  nlohmann::json get(const std::string& path);

  void set_timeout(std::chrono::milliseconds timeout);
  // Test hook; the default sleeps the calling thread.
  void set_sleeper(std::function<void(std::chrono::milliseconds)> sleeper);

  const std::string& endpoint() const { return endpoint_; }

 private:
  nlohmann::json send(const std::string& method, const std::string& path, const nlohmann::json* body);

  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::string endpoint_;
  std::string prefix_;
  RetryPolicy policy_;
  std::string bearer_;
  std::function<void(std::chrono::milliseconds)> sleeper_;
  SplitMix64 jitter_;
  std::mutex jitter_mutex_;
};

}  // namespace mcqa
