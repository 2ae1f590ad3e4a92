#include "mcqa/record.hpp"

#include "mcqa/error.hpp"

namespace mcqa {

void to_json(nlohmann::json& j, const TokenLogprob& t) {
  j = nlohmann::json{{"text", t.text}, {"logprob", t.logprob}};
  if (t.relevance_weight) j["relevance_weight"] = *t.relevance_weight;
  if (t.attention_weight) j["attention_weight"] = *t.attention_weight;
}

void from_json(const nlohmann::json& j, TokenLogprob& t) {
  t.text = j.at("text").get<std::string>();
  t.logprob = j.at("logprob").get<double>();
  t.relevance_weight.reset();
  t.attention_weight.reset();
  if (auto it = j.find("relevance_weight"); it != j.end() && !it->is_null()) t.relevance_weight = it->get<double>();
  if (auto it = j.find("attention_weight"); it != j.end() && !it->is_null()) t.attention_weight = it->get<double>();
}

void to_json(nlohmann::json& j, const TokenLogprobSeq& s) {
  j = nlohmann::json{{"tokens", s.tokens}, {"channel_id", s.channel_id}, {"model_id", s.model_id}};
}

void from_json(const nlohmann::json& j, TokenLogprobSeq& s) {
  s.tokens = j.at("tokens").get<std::vector<TokenLogprob>>();
  s.channel_id = j.value("channel_id", "");
  s.model_id = j.value("model_id", "");
}

void to_json(nlohmann::json& j, const SampledResponse& r) {
  j = nlohmann::json{{"text", r.text}, {"finish_reason", r.finish_reason}};
  if (r.logprobs) j["logprobs"] = *r.logprobs;
}

void from_json(const nlohmann::json& j, SampledResponse& r) {
  r.text = j.at("text").get<std::string>();
  r.finish_reason = j.value("finish_reason", "");
  r.logprobs.reset();
  if (auto it = j.find("logprobs"); it != j.end() && !it->is_null()) r.logprobs = it->get<TokenLogprobSeq>();
}

}  // namespace mcqa
