#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcqa/token_logprobs.hpp"

namespace mcqa {

struct SampledResponse {
  std::string text;
  std::string finish_reason;
  std::optional<TokenLogprobSeq> logprobs;

  bool operator==(const SampledResponse&) const = default;
};

// Everything the model produced for one item, assembled from the record store.
struct GenerationRecord {
  std::string item_id;
  std::string prompt;
  std::string config_digest;
  std::vector<SampledResponse> responses;
  // Teacher-forced logprobs without attention, by option index.
  std::map<std::size_t, TokenLogprobSeq> candidate_logprobs;
  // Attention-weighted sequences by channel ("csl", "csl_next"), then option index.
  std::map<std::string, std::map<std::size_t, TokenLogprobSeq>> channel_logprobs;
  std::map<std::size_t, double> p_true;
  std::map<std::size_t, std::string> p_true_mode;
  std::int64_t created_at_unix_ms = 0;
  std::string backend_identity;
};

void to_json(nlohmann::json& j, const TokenLogprob& t);
void from_json(const nlohmann::json& j, TokenLogprob& t);
void to_json(nlohmann::json& j, const TokenLogprobSeq& s);
void from_json(const nlohmann::json& j, TokenLogprobSeq& s);
void to_json(nlohmann::json& j, const SampledResponse& r);
void from_json(const nlohmann::json& j, SampledResponse& r);

}  // namespace mcqa
