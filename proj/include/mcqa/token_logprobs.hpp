#pragma once

#include <optional>
#include <string>
#include <vector>

namespace mcqa {

struct TokenLogprob {
  std::string text;
  double logprob = 0.0;  // natural log
  std::optional<double> relevance_weight;
  std::optional<double> attention_weight;

  bool operator==(const TokenLogprob&) const = default;
};

// Teacher-forced log-likelihood of one candidate continuation. `channel_id`
// names the backend's attention pooling when attention weights are present.
struct TokenLogprobSeq {
  std::vector<TokenLogprob> tokens;
  std::string channel_id;
  std::string model_id;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
  bool has_attention() const;

  bool operator==(const TokenLogprobSeq&) const = default;
};

// Logprobs may exceed 0 by at most this much (backend rounding).
inline constexpr double kLogprobTolerance = 1e-6;

// Throws invalid_input when a logprob is non-finite or above tolerance, or a
// weight is negative / non-finite.
void validate_sequence(const TokenLogprobSeq& seq);

}  // namespace mcqa
