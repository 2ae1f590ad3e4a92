#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mcqa {

enum class SimilarityKind { jaccard, nli_entailment, nli_contradiction };

std::string_view to_string(SimilarityKind kind);
SimilarityKind similarity_kind_from_string(std::string_view name);

// Diagonal convention: 1 for jaccard/entailment, 0 for contradiction.
double diagonal_value(SimilarityKind kind);

// Directional pair scores: p_ab scores a -> b (premise a, hypothesis b).
struct PairScore {
  double ab = 0.0;
  double ba = 0.0;
};

using TextPair = std::pair<std::string, std::string>;

class SimilarityProvider {
 public:
  virtual ~SimilarityProvider() = default;
  virtual SimilarityKind kind() const = 0;
  // Identifies the provider (model, endpoint); part of matrix provenance.
  virtual std::string identity() const = 0;
  // Length-preserving; scores expected in [0, 1].
  virtual std::vector<PairScore> score_pairs(const std::optional<std::string>& context,
                                             std::span<const TextPair> pairs) = 0;
};

// |T(a) ∩ T(b)| / |T(a) ∪ T(b)| over word_tokens sets; 1 when both are empty.
double jaccard(std::string_view a, std::string_view b);

class JaccardProvider final : public SimilarityProvider {
 public:
  SimilarityKind kind() const override { return SimilarityKind::jaccard; }
  std::string identity() const override { return "jaccard"; }
  std::vector<PairScore> score_pairs(const std::optional<std::string>& context,
                                     std::span<const TextPair> pairs) override;
};

// Wraps another provider and counts pair evaluations.
class CountingProvider final : public SimilarityProvider {
 public:
  explicit CountingProvider(SimilarityProvider& inner) : inner_(inner) {}
  SimilarityKind kind() const override { return inner_.kind(); }
  std::string identity() const override { return inner_.identity(); }
  std::vector<PairScore> score_pairs(const std::optional<std::string>& context,
                                     std::span<const TextPair> pairs) override;
  std::size_t pairs_scored() const { return pairs_scored_.load(); }
  void reset() { pairs_scored_ = 0; }

 private:
  SimilarityProvider& inner_;
  std::atomic<std::size_t> pairs_scored_{0};
};

// Symmetric n x n similarity values of one kind.
class SimilarityMatrix {
 public:
  SimilarityMatrix(SimilarityKind kind, Eigen::MatrixXd values, std::string context_sha256 = {});

  std::size_t size() const { return static_cast<std::size_t>(values_.rows()); }
  SimilarityKind kind() const { return kind_; }
  const Eigen::MatrixXd& values() const { return values_; }
  double operator()(std::size_t i, std::size_t j) const {
    return values_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  // SHA-256 of the question context used by NLI providers; empty for none.
  const std::string& context_sha256() const { return context_sha256_; }

 private:
  SimilarityKind kind_;
  Eigen::MatrixXd values_;
  std::string context_sha256_;
};

std::string context_digest(const std::optional<std::string>& context);

// Queries the n(n-1)/2 unordered pairs (i < j, as (texts[i], texts[j])) once
// each and stores (p_ab + p_ba) / 2. Out-of-range scores are clamped with a
// warning.
SimilarityMatrix build_matrix(std::span<const std::string> texts, SimilarityProvider& provider,
                              const std::optional<std::string>& context);

// Appends `candidate` as the last row/column, scoring only the n new pairs
// (texts[j], candidate). The leading block is copied from `base` unchanged.
SimilarityMatrix extend_matrix(const SimilarityMatrix& base, std::span<const std::string> texts,
                               const std::string& candidate, SimilarityProvider& provider,
                               const std::optional<std::string>& context);

// Matrix file: a JSON header line {"n", "kind", "context_sha256"} followed by
// n lines of n whitespace-separated decimals.
SimilarityMatrix load_precomputed(const std::filesystem::path& path);
SimilarityMatrix parse_precomputed(std::string_view text);
std::string serialize_matrix(const SimilarityMatrix& m);
void save_matrix(const SimilarityMatrix& m, const std::filesystem::path& path);

// Serves symmetric pair scores from a matrix whose rows correspond to
// `texts`. Used to replay NLI scores offline; unknown texts are an error.
class PrecomputedProvider final : public SimilarityProvider {
 public:
  PrecomputedProvider(std::vector<std::string> texts, SimilarityMatrix matrix, std::string identity = "precomputed");
  SimilarityKind kind() const override { return matrix_.kind(); }
  std::string identity() const override { return identity_; }
  std::vector<PairScore> score_pairs(const std::optional<std::string>& context,
                                     std::span<const TextPair> pairs) override;

 private:
  std::size_t index_of(const std::string& text) const;

  std::unordered_map<std::string, std::size_t> index_;
  SimilarityMatrix matrix_;
  std::string identity_;
};

}  // namespace mcqa
