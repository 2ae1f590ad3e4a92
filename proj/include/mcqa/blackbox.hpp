#pragma once

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcqa/similarity.hpp"

namespace mcqa {

enum class BlackboxMethod { deg_j, deg_e, deg_c, ecc_j, ecc_e, ecc_c };

SimilarityKind similarity_kind(BlackboxMethod method);
bool is_degree(BlackboxMethod method);

struct SpectralConfig {
  double eigenvalue_cutoff = 0.9;  // keep eigenvectors with eigenvalue strictly below
  std::size_t min_embedding_dims = 1;
  double symmetric_eps = 1e-9;

  void validate() const;
};

// Similarity view of a matrix: contradiction probabilities are inverted
// (1 - x, unit diagonal); other kinds pass through.
Eigen::MatrixXd effective_similarity(const SimilarityMatrix& m);

// Mean similarity of node i to every other node; 1 for a single node.
double degree_confidence(const Eigen::MatrixXd& w, std::size_t i);

// Spectral embedding of each node from the symmetric normalized Laplacian
// L = I - D^-1/2 W D^-1/2 of the graph without self-loops. Rows are nodes,
// columns the kept eigenvectors in ascending eigenvalue order.
Eigen::MatrixXd spectral_embedding(const Eigen::MatrixXd& w, const SpectralConfig& cfg);

// -||v_i - mean(v)||_2 over the spectral embedding; 0 is most central.
double eccentricity_confidence(const Eigen::MatrixXd& w, std::size_t i, const SpectralConfig& cfg);

// Degree and eccentricity scores of every injected option for one similarity
// kind. The base matrix over `samples` is built once; each option extends it.
struct KindScores {
  std::vector<double> degree;
  std::vector<double> eccentricity;
};

KindScores score_candidates_for_kind(std::span<const std::string> samples, std::span<const std::string> options,
                                     SimilarityProvider& provider, const std::optional<std::string>& context,
                                     const SpectralConfig& cfg);

// Confidence of each option under one method (Algorithm-1 style: sampled
// responses are never scored, only used as the reference distribution).
std::vector<double> score_candidates(std::span<const std::string> samples, std::span<const std::string> options,
                                     BlackboxMethod method, SimilarityProvider& provider,
                                     const std::optional<std::string>& context, const SpectralConfig& cfg);

// Baseline pipeline: confidence of every sampled response within its own set.
KindScores score_responses_for_kind(std::span<const std::string> samples, SimilarityProvider& provider,
                                    const std::optional<std::string>& context, const SpectralConfig& cfg);

}  // namespace mcqa
