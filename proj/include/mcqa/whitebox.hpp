#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcqa/record.hpp"
#include "mcqa/similarity.hpp"
#include "mcqa/token_logprobs.hpp"

namespace mcqa {

enum class WhiteboxMethod { sl, perplexity, token_sar, csl, csl_next, p_true };

// Sum of token logprobs.
double sl(const TokenLogprobSeq& seq);

// Mean token logprob. Strictly monotone in -perplexity, so every rank-based
// metric is unchanged by using it instead of exp(-mean).
double perplexity_conf(const TokenLogprobSeq& seq);

struct RelevanceWeights {
  std::vector<double> weights;
  std::string provenance;  // similarity provider used
};

// w_t = 1 - sim(full text, text without token t), negatives clamped to 0.
// All-zero weights fall back to uniform (with a warning).
RelevanceWeights relevance_weights(std::span<const std::string> candidate_tokens, SimilarityProvider& provider,
                                   const std::optional<std::string>& context);

// Weights normalized to sum to one; all-zero input becomes uniform.
std::vector<double> normalize_weights(std::span<const double> weights, const char* what);

// Sum of relevance-normalized token logprobs.
double token_sar(const TokenLogprobSeq& seq, const RelevanceWeights& weights);

// Attention-weighted log-likelihood. csl reads the "csl" channel sequence and
// csl_next the variant channel; both need attention_weight on every token.
double csl(const TokenLogprobSeq& seq);
double csl_next(const TokenLogprobSeq& seq);

// The elicited probability recorded for the option.
double p_true_score(const GenerationRecord& record, std::size_t option_index);

}  // namespace mcqa
