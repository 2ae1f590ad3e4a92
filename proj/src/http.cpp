#include "mcqa/http.hpp"

#include <atomic>
#include <cmath>
#include <httplib.h>
#include <thread>

#include "mcqa/error.hpp"

namespace mcqa {

namespace {

std::atomic<std::uint64_t> g_requests{0};
std::atomic<std::uint64_t> g_client_serial{0};

bool retryable_status(int status) { return status == 429 || status >= 500; }

std::string snippet(const std::string& body) {
  constexpr std::size_t kMax = 300;
  return body.size() <= kMax ? body : body.substr(0, kMax) + "...";
}

}  // namespace

void RetryPolicy::validate() const {
  if (max_attempts < 1) throw config_error("retry max_attempts must be >= 1");
  if (backoff_base_ms < 0) throw config_error("retry backoff_base_ms must be >= 0");
}

std::uint64_t network_request_count() { return g_requests.load(); }

std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int attempt, SplitMix64& rng) {
  const double base = policy.backoff_base_ms * std::ldexp(1.0, std::max(0, attempt - 2));
  const double jitter = 0.5 + rng.uniform();
  return std::chrono::milliseconds(static_cast<std::int64_t>(base * jitter));
}

// One httplib::Client per request, so concurrent callers never share a socket.
struct JsonClient::Impl {
  std::string scheme_host_port;
  std::chrono::milliseconds connect_timeout{10000};
  std::chrono::milliseconds read_timeout{300000};

  std::unique_ptr<httplib::Client> make(const std::string& bearer) const {
    auto c = std::make_unique<httplib::Client>(scheme_host_port);
    c->set_connection_timeout(connect_timeout);
    c->set_read_timeout(read_timeout);
    if (!bearer.empty()) c->set_bearer_token_auth(bearer);
    return c;
  }
};

JsonClient::JsonClient(const std::string& endpoint, RetryPolicy policy, std::string bearer_token)
    : endpoint_(endpoint),
      policy_(policy),
      bearer_(std::move(bearer_token)),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }),
      jitter_(0x6a09e667f3bcc908ULL + g_client_serial.fetch_add(1)) {
  policy_.validate();
  const auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos) throw config_error("endpoint needs a scheme: " + endpoint);
  const auto scheme = endpoint.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw config_error("unsupported endpoint scheme: " + endpoint);
  const auto path_start = endpoint.find('/', scheme_end + 3);
  std::string host_part = endpoint;
  if (path_start != std::string::npos) {
    host_part = endpoint.substr(0, path_start);
    prefix_ = endpoint.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }
  impl_ = std::make_unique<Impl>();
  impl_->scheme_host_port = host_part;
  if (!impl_->make(bearer_)->is_valid()) throw config_error("cannot create HTTP client for " + endpoint);
}

JsonClient::~JsonClient() = default;

void JsonClient::set_timeout(std::chrono::milliseconds timeout) {
  impl_->connect_timeout = timeout;
  impl_->read_timeout = timeout;
}

void JsonClient::set_sleeper(std::function<void(std::chrono::milliseconds)> sleeper) { sleeper_ = std::move(sleeper); }

nlohmann::json JsonClient::post(const std::string& path, const nlohmann::json& body) { return send("POST", path, &body); }

nlohmann::json JsonClient::get(const std::string& path) { return send("GET", path, nullptr); }

nlohmann::json JsonClient::send(const std::string& method, const std::string& path, const nlohmann::json* body) {
  const std::string full = prefix_ + path;
  const std::string payload = body ? body->dump() : std::string{};
  std::string last_failure;
  ErrorKind last_kind = ErrorKind::transport;
  for (int attempt = 1; attempt <= policy_.max_attempts; ++attempt) {
    if (attempt > 1) {
      std::chrono::milliseconds delay;
      {
        std::lock_guard lock(jitter_mutex_);
        delay = backoff_delay(policy_, attempt, jitter_);
      }
      sleeper_(delay);
    }
    g_requests.fetch_add(1);
    auto client = impl_->make(bearer_);
    auto res = body ? client->Post(full, payload, "application/json") : client->Get(full);
    if (!res) {
      last_failure = method + " " + endpoint_ + path + ": " + httplib::to_string(res.error());
      last_kind = ErrorKind::transport;
      continue;
    }
    if (retryable_status(res->status)) {
      last_failure = method + " " + endpoint_ + path + ": HTTP " + std::to_string(res->status) + " " + snippet(res->body);
      last_kind = ErrorKind::backend;
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw Error(ErrorKind::backend,
                  method + " " + endpoint_ + path + ": HTTP " + std::to_string(res->status) + " " + snippet(res->body));
    }
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::backend, method + " " + endpoint_ + path + ": response is not JSON: " + e.what());
    }
  }
  throw Error(last_kind, last_failure + " (after " + std::to_string(policy_.max_attempts) + " attempts)");
}

}  // namespace mcqa
