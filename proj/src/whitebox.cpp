#include "mcqa/whitebox.hpp"

#include <cmath>
#include <string>

#include "mcqa/error.hpp"

namespace mcqa {

bool TokenLogprobSeq::has_attention() const {
  if (tokens.empty()) return false;
  for (const auto& t : tokens)
    if (!t.attention_weight) return false;
  return true;
}

void validate_sequence(const TokenLogprobSeq& seq) {
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    const auto& t = seq.tokens[i];
    if (!std::isfinite(t.logprob) || t.logprob > kLogprobTolerance)
      throw invalid_input("token " + std::to_string(i) + " (\"" + t.text + "\") has invalid logprob " +
                          std::to_string(t.logprob));
    for (const auto& w : {t.relevance_weight, t.attention_weight})
      if (w && (!std::isfinite(*w) || *w < 0.0))
        throw invalid_input("token " + std::to_string(i) + " has a negative or non-finite weight");
  }
}

namespace {

void require_tokens(const TokenLogprobSeq& seq, const char* what) {
  if (seq.tokens.empty()) throw invalid_input(std::string(what) + ": empty token sequence");
}

double weighted_sum(const TokenLogprobSeq& seq, std::span<const double> normalized) {
  double total = 0.0;
  for (std::size_t t = 0; t < seq.tokens.size(); ++t) total += normalized[t] * seq.tokens[t].logprob;
  return total;
}

double attention_weighted(const TokenLogprobSeq& seq, const char* what) {
  require_tokens(seq, what);
  std::vector<double> raw;
  raw.reserve(seq.size());
  for (const auto& t : seq.tokens) {
    if (!t.attention_weight)
      throw capability_error(std::string(what) + ": token \"" + t.text + "\" carries no attention weight");
    raw.push_back(*t.attention_weight);
  }
  const auto w = normalize_weights(raw, what);
  return weighted_sum(seq, w);
}

}  // namespace

double sl(const TokenLogprobSeq& seq) {
  require_tokens(seq, "sl");
  double total = 0.0;
  for (const auto& t : seq.tokens) total += t.logprob;
  return total;
}

double perplexity_conf(const TokenLogprobSeq& seq) {
  require_tokens(seq, "perplexity");
  return sl(seq) / static_cast<double>(seq.size());
}

std::vector<double> normalize_weights(std::span<const double> weights, const char* what) {
  double total = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) throw invalid_input(std::string(what) + ": weights must be finite and >= 0");
    total += w;
  }
  std::vector<double> out(weights.size());
  if (total <= 0.0) {
    warn(std::string(what) + ": all-zero weights, using uniform");
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(weights.size()));
    return out;
  }
  for (std::size_t i = 0; i < weights.size(); ++i) out[i] = weights[i] / total;
  return out;
}

RelevanceWeights relevance_weights(std::span<const std::string> candidate_tokens, SimilarityProvider& provider,
                                   const std::optional<std::string>& context) {
  if (candidate_tokens.empty()) throw invalid_input("relevance_weights: candidate has no tokens");
  std::string full;
  for (const auto& t : candidate_tokens) full += t;
  std::vector<TextPair> pairs;
  pairs.reserve(candidate_tokens.size());
  for (std::size_t skip = 0; skip < candidate_tokens.size(); ++skip) {
    std::string reduced;
    for (std::size_t t = 0; t < candidate_tokens.size(); ++t)
      if (t != skip) reduced += candidate_tokens[t];
    pairs.emplace_back(full, std::move(reduced));
  }
  const auto scores = provider.score_pairs(context, pairs);
  if (scores.size() != pairs.size()) throw Error(ErrorKind::backend, "relevance_weights: provider dropped pairs");

  RelevanceWeights out;
  out.provenance = provider.identity();
  out.weights.reserve(scores.size());
  bool any_positive = false;
  for (const auto& s : scores) {
    const double sim = (s.ab + s.ba) / 2.0;
    const double w = std::max(0.0, 1.0 - sim);
    any_positive = any_positive || w > 0.0;
    out.weights.push_back(w);
  }
  if (!any_positive) {
    warn("relevance_weights: every token removal left similarity at 1, using uniform weights");
    std::fill(out.weights.begin(), out.weights.end(), 1.0);
  }
  return out;
}

double token_sar(const TokenLogprobSeq& seq, const RelevanceWeights& weights) {
  require_tokens(seq, "token_sar");
  if (weights.weights.size() != seq.size())
    throw invalid_input("token_sar: " + std::to_string(weights.weights.size()) + " weights for " +
                        std::to_string(seq.size()) + " tokens");
  const auto w = normalize_weights(weights.weights, "token_sar");
  return weighted_sum(seq, w);
}

double csl(const TokenLogprobSeq& seq) { return attention_weighted(seq, "csl"); }

double csl_next(const TokenLogprobSeq& seq) { return attention_weighted(seq, "csl_next"); }

double p_true_score(const GenerationRecord& record, std::size_t option_index) {
  auto it = record.p_true.find(option_index);
  if (it == record.p_true.end())
    throw invalid_input("p_true_score: no p_true entry for option " + std::to_string(option_index) + " of item " +
                        record.item_id);
  if (!(it->second >= 0.0 && it->second <= 1.0))
    throw invalid_input("p_true_score: recorded probability out of [0,1] for item " + record.item_id);
  return it->second;
}

}  // namespace mcqa
