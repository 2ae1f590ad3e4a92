#include <cmath>
#include <cstdlib>
#include <limits>

#include "mcqa/error.hpp"
#include "mcqa/gateway.hpp"

namespace mcqa {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

std::string trimmed_lower(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Cut at the first stop sequence that follows some non-space text.
SampledResponse apply_stop(std::string text, const std::vector<std::string>& stop, std::string finish_reason) {
  std::size_t start = 0;
  while (start < text.size() && std::isspace(static_cast<unsigned char>(text[start]))) ++start;
  std::size_t cut = std::string::npos;
  for (const auto& s : stop) {
    if (s.empty()) continue;
    const auto pos = text.find(s, start);
    if (pos != std::string::npos && pos < cut) cut = pos;
  }
  if (cut != std::string::npos) {
    text.resize(cut);
    finish_reason = "stop";
  }
  return {std::move(text), std::move(finish_reason), std::nullopt};
}

nlohmann::json chat_body(const std::string& model, const std::string& prompt, std::size_t n, std::size_t max_tokens,
                         const GenerationConfig& cfg) {
  nlohmann::json body{{"model", model},
                      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
                      {"n", n},
                      {"max_tokens", max_tokens}};
  if (cfg.temperature) body["temperature"] = *cfg.temperature;
  if (cfg.request_seed) body["seed"] = *cfg.request_seed;
  if (!cfg.stop.empty()) body["stop"] = cfg.stop;
  return body;
}

}  // namespace

OpenAIBackend::OpenAIBackend(const GenerationConfig& cfg, std::string api_key)
    : client_(cfg.endpoint, cfg.retry, std::move(api_key)), model_(cfg.model) {}

std::string OpenAIBackend::identity() const { return "openai_compatible:" + model_; }

std::vector<SampledResponse> OpenAIBackend::generate(const std::string& prompt, std::size_t n, std::size_t max_tokens,
                                                     const GenerationConfig& cfg) {
  std::vector<SampledResponse> out;
  // Some servers cap or ignore n; keep asking for the remainder.
  for (int round = 0; out.size() < n; ++round) {
    if (round >= 2 * static_cast<int>(n) + 2)
      throw Error(ErrorKind::backend, identity() + " keeps returning fewer choices than requested");
    const auto res = client_.post("/chat/completions", chat_body(model_, prompt, n - out.size(), max_tokens, cfg));
    if (!res.contains("choices") || !res["choices"].is_array())
      throw Error(ErrorKind::backend, identity() + ": response has no choices");
    for (const auto& ch : res["choices"]) {
      if (out.size() == n) break;
      const auto& msg = ch.value("message", nlohmann::json::object());
      const std::string text = msg.contains("content") && msg["content"].is_string() ? msg["content"].get<std::string>() : "";
      const std::string finish = ch.contains("finish_reason") && ch["finish_reason"].is_string()
                                     ? ch["finish_reason"].get<std::string>()
                                     : "";
      out.push_back({text, finish, std::nullopt});
    }
  }
  return out;
}

TokenLogprobSeq OpenAIBackend::score_completion(const std::string&, const std::string&,
                                                const std::optional<std::string>&, const GenerationConfig&) {
  throw capability_error(identity() + " cannot score a fixed candidate (no teacher-forced logprobs)");
}

std::pair<double, double> OpenAIBackend::true_false_logprobs(const std::string& prompt, const GenerationConfig& cfg) {
  auto body = chat_body(model_, prompt, 1, 1, cfg);
  body.erase("stop");
  body["logprobs"] = true;
  body["top_logprobs"] = 20;
  const auto res = client_.post("/chat/completions", body);
  const nlohmann::json* content = nullptr;
  try {
    const auto& lp = res.at("choices").at(0).at("logprobs");
    if (lp.is_object() && lp.contains("content") && lp["content"].is_array() && !lp["content"].empty())
      content = &lp["content"][0];
  } catch (const nlohmann::json::exception&) {
  }
  if (!content || !content->contains("top_logprobs"))
    throw capability_error(identity() + " returned no token logprobs");
  double lt = kNegInf, lf = kNegInf;
  for (const auto& e : (*content)["top_logprobs"]) {
    const auto tok = trimmed_lower(e.at("token").get<std::string>());
    const double lp = e.at("logprob").get<double>();
    if (tok == "true") lt = log_add(lt, lp);
    if (tok == "false") lf = log_add(lf, lp);
  }
  if (lt == kNegInf && lf == kNegInf) throw capability_error(identity() + ": True/False not among the top logprobs");
  return {lt, lf};
}

SidecarBackend::SidecarBackend(const GenerationConfig& cfg) : client_(cfg.endpoint, cfg.retry), model_(cfg.model) {}

std::string SidecarBackend::identity() const { return "sidecar:" + model_; }

nlohmann::json SidecarBackend::health() { return client_.get("/health"); }

std::vector<SampledResponse> SidecarBackend::generate(const std::string& prompt, std::size_t n, std::size_t max_tokens,
                                                      const GenerationConfig& cfg) {
  nlohmann::json body{{"prompt", prompt}, {"n", n}, {"max_tokens", max_tokens}};
  if (cfg.temperature) body["temperature"] = *cfg.temperature;
  if (cfg.request_seed) body["seed"] = *cfg.request_seed;
  const auto res = client_.post("/v1/generate", body);
  if (!res.contains("texts") || !res["texts"].is_array())
    throw Error(ErrorKind::backend, identity() + ": /v1/generate response has no texts");
  const auto& texts = res["texts"];
  if (texts.size() != n)
    throw Error(ErrorKind::backend, identity() + ": asked for " + std::to_string(n) + " texts, got " +
                                        std::to_string(texts.size()));
  std::vector<SampledResponse> out;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto r = apply_stop(texts[i].get<std::string>(), cfg.stop, "length");
    if (res.contains("logprobs") && res["logprobs"].is_array() && i < res["logprobs"].size() && r.finish_reason != "stop") {
      TokenLogprobSeq seq;
      seq.tokens = res["logprobs"][i].get<std::vector<TokenLogprob>>();
      seq.model_id = res.value("model_id", model_);
      r.logprobs = std::move(seq);
    }
    out.push_back(std::move(r));
  }
  return out;
}

TokenLogprobSeq SidecarBackend::score_completion(const std::string& prompt, const std::string& completion,
                                                 const std::optional<std::string>& channel, const GenerationConfig&) {
  nlohmann::json body{{"prompt", prompt}, {"completion", completion}, {"want_attention", channel.has_value()}};
  if (channel) body["weight_channel"] = *channel;
  const auto res = client_.post("/v1/logprobs", body);
  TokenLogprobSeq seq;
  try {
    seq.tokens = res.at("tokens").get<std::vector<TokenLogprob>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::backend, identity() + ": bad /v1/logprobs response: " + e.what());
  }
  seq.model_id = res.value("model_id", model_);
  seq.channel_id = res.contains("channel_id") && res["channel_id"].is_string() ? res["channel_id"].get<std::string>() : "";
  return seq;
}

std::pair<double, double> SidecarBackend::true_false_logprobs(const std::string& prompt, const GenerationConfig& cfg) {
  auto total = [&](const std::string& completion) {
    double s = 0.0;
    for (const auto& t : score_completion(prompt, completion, std::nullopt, cfg).tokens) s += t.logprob;
    return s;
  };
  return {total(" True"), total(" False")};
}

SidecarNliProvider::SidecarNliProvider(const std::string& endpoint, SimilarityKind kind, RetryPolicy retry)
    : client_(endpoint, retry), kind_(kind) {
  if (kind == SimilarityKind::jaccard) throw config_error("the sidecar serves NLI kinds only");
}

std::string SidecarNliProvider::identity() const {
  return "sidecar-nli:" + std::string(to_string(kind_)) + "@" + client_.endpoint();
}

std::vector<PairScore> SidecarNliProvider::score_pairs(const std::optional<std::string>& context,
                                                       std::span<const TextPair> pairs) {
  const std::string mode = kind_ == SimilarityKind::nli_entailment ? "entailment" : "contradiction";
  auto with_context = [&](const std::string& t) { return context ? *context + " " + t : t; };
  nlohmann::json directional = nlohmann::json::array();
  for (const auto& [a, b] : pairs) {
    directional.push_back({{"premise", with_context(a)}, {"hypothesis", with_context(b)}});
    directional.push_back({{"premise", with_context(b)}, {"hypothesis", with_context(a)}});
  }
  std::vector<double> scores;
  scores.reserve(directional.size());
  for (std::size_t start = 0; start < directional.size(); start += kMaxPairsPerRequest) {
    const std::size_t end = std::min(directional.size(), start + kMaxPairsPerRequest);
    nlohmann::json batch = nlohmann::json::array();
    for (std::size_t i = start; i < end; ++i) batch.push_back(directional[i]);
    const auto res = client_.post("/v1/similarity", {{"mode", mode}, {"pairs", batch}});
    if (!res.contains("scores") || !res["scores"].is_array() || res["scores"].size() != end - start)
      throw Error(ErrorKind::backend, identity() + ": /v1/similarity returned the wrong number of scores");
    for (const auto& s : res["scores"]) scores.push_back(s.get<double>());
  }
  std::vector<PairScore> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) out.push_back({scores[2 * i], scores[2 * i + 1]});
  return out;
}

std::shared_ptr<Backend> make_backend(const GenerationConfig& cfg) {
  switch (cfg.backend) {
    case BackendType::replay: return nullptr;
    case BackendType::sidecar: return std::make_shared<SidecarBackend>(cfg);
    case BackendType::openai_compatible: {
      const char* key = std::getenv("MCQA_EVAL_API_KEY");
      return std::make_shared<OpenAIBackend>(cfg, key ? key : "");
    }
  }
  return nullptr;
}

}  // namespace mcqa
