#include "mcqa/blackbox.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <string>

#include "mcqa/error.hpp"

namespace mcqa {

SimilarityKind similarity_kind(BlackboxMethod method) {
  switch (method) {
    case BlackboxMethod::deg_j:
    case BlackboxMethod::ecc_j: return SimilarityKind::jaccard;
    case BlackboxMethod::deg_e:
    case BlackboxMethod::ecc_e: return SimilarityKind::nli_entailment;
    case BlackboxMethod::deg_c:
    case BlackboxMethod::ecc_c: return SimilarityKind::nli_contradiction;
  }
  return SimilarityKind::jaccard;
}

bool is_degree(BlackboxMethod method) {
  return method == BlackboxMethod::deg_j || method == BlackboxMethod::deg_e || method == BlackboxMethod::deg_c;
}

void SpectralConfig::validate() const {
  if (!(eigenvalue_cutoff > 0.0 && eigenvalue_cutoff < 2.0))
    throw config_error("spectral eigenvalue_cutoff must lie in (0, 2)");
  if (min_embedding_dims < 1) throw config_error("spectral min_embedding_dims must be >= 1");
  if (!(symmetric_eps >= 0.0)) throw config_error("spectral symmetric_eps must be >= 0");
}

Eigen::MatrixXd effective_similarity(const SimilarityMatrix& m) {
  if (m.kind() != SimilarityKind::nli_contradiction) return m.values();
  Eigen::MatrixXd w = Eigen::MatrixXd::Ones(m.values().rows(), m.values().cols()) - m.values();
  w.diagonal().setOnes();
  return w;
}

double degree_confidence(const Eigen::MatrixXd& w, std::size_t i) {
  const auto n = w.rows();
  const auto row = static_cast<Eigen::Index>(i);
  if (row >= n) throw invalid_input("degree_confidence: index out of range");
  if (n == 1) return 1.0;
  double sum = 0.0;
  for (Eigen::Index j = 0; j < n; ++j)
    if (j != row) sum += w(row, j);
  return sum / static_cast<double>(n - 1);
}

Eigen::MatrixXd spectral_embedding(const Eigen::MatrixXd& w, const SpectralConfig& cfg) {
  cfg.validate();
  const auto n = w.rows();
  if (w.cols() != n) throw invalid_input("spectral_embedding: matrix must be square");
  if (((w - w.transpose()).array().abs() > cfg.symmetric_eps).any())
    throw invalid_input("spectral_embedding: similarity matrix is not symmetric");

  Eigen::MatrixXd adjacency = w;
  adjacency.diagonal().setZero();
  const Eigen::VectorXd degree = adjacency.rowwise().sum();
  if ((degree.array() <= 0.0).all()) return Eigen::MatrixXd(n, 0);

  Eigen::VectorXd inv_sqrt(n);
  for (Eigen::Index i = 0; i < n; ++i) inv_sqrt(i) = degree(i) > 0.0 ? 1.0 / std::sqrt(degree(i)) : 0.0;
  // Zero-degree rows and columns of the normalized term vanish, leaving the
  // identity there.
  Eigen::MatrixXd laplacian = Eigen::MatrixXd::Identity(n, n) - inv_sqrt.asDiagonal() * adjacency * inv_sqrt.asDiagonal();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(laplacian);
  if (solver.info() != Eigen::Success)
    throw Error(ErrorKind::numeric, "spectral_embedding: eigensolver did not converge");
  const auto& eigenvalues = solver.eigenvalues();  // ascending

  Eigen::Index keep = 0;
  while (keep < n && eigenvalues(keep) < cfg.eigenvalue_cutoff) ++keep;
  keep = std::max(keep, std::min<Eigen::Index>(static_cast<Eigen::Index>(cfg.min_embedding_dims), n));
  return solver.eigenvectors().leftCols(keep);
}

double eccentricity_confidence(const Eigen::MatrixXd& w, std::size_t i, const SpectralConfig& cfg) {
  const auto row = static_cast<Eigen::Index>(i);
  if (row >= w.rows()) throw invalid_input("eccentricity_confidence: index out of range");
  if (w.rows() == 1) return 0.0;
  const Eigen::MatrixXd embedding = spectral_embedding(w, cfg);
  if (embedding.cols() == 0) return 0.0;
  const Eigen::RowVectorXd centroid = embedding.colwise().mean();
  return -(embedding.row(row) - centroid).norm();
}

namespace {

void fill_scores(const SimilarityMatrix& m, std::size_t index, const SpectralConfig& cfg, KindScores& out) {
  const Eigen::MatrixXd w = effective_similarity(m);
  out.degree.push_back(degree_confidence(w, index));
  out.eccentricity.push_back(eccentricity_confidence(w, index, cfg));
}

}  // namespace

KindScores score_candidates_for_kind(std::span<const std::string> samples, std::span<const std::string> options,
                                     SimilarityProvider& provider, const std::optional<std::string>& context,
                                     const SpectralConfig& cfg) {
  if (samples.empty()) throw invalid_input("score_candidates: need at least one sampled response");
  const SimilarityMatrix base = build_matrix(samples, provider, context);
  KindScores out;
  out.degree.reserve(options.size());
  out.eccentricity.reserve(options.size());
  for (const auto& option : options) {
    const SimilarityMatrix extended = extend_matrix(base, samples, option, provider, context);
    fill_scores(extended, samples.size(), cfg, out);
  }
  return out;
}

std::vector<double> score_candidates(std::span<const std::string> samples, std::span<const std::string> options,
                                     BlackboxMethod method, SimilarityProvider& provider,
                                     const std::optional<std::string>& context, const SpectralConfig& cfg) {
  if (provider.kind() != similarity_kind(method))
    throw invalid_input("score_candidates: provider kind does not match the method");
  auto scores = score_candidates_for_kind(samples, options, provider, context, cfg);
  return is_degree(method) ? std::move(scores.degree) : std::move(scores.eccentricity);
}

KindScores score_responses_for_kind(std::span<const std::string> samples, SimilarityProvider& provider,
                                    const std::optional<std::string>& context, const SpectralConfig& cfg) {
  if (samples.empty()) throw invalid_input("score_responses: need at least one sampled response");
  const SimilarityMatrix m = build_matrix(samples, provider, context);
  const Eigen::MatrixXd w = effective_similarity(m);
  KindScores out;
  const Eigen::MatrixXd embedding = samples.size() > 1 ? spectral_embedding(w, cfg) : Eigen::MatrixXd(1, 0);
  const Eigen::RowVectorXd centroid =
      embedding.cols() ? Eigen::RowVectorXd(embedding.colwise().mean()) : Eigen::RowVectorXd(0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out.degree.push_back(degree_confidence(w, i));
    const auto row = static_cast<Eigen::Index>(i);
    out.eccentricity.push_back(embedding.cols() ? -(embedding.row(row) - centroid).norm() : 0.0);
  }
  return out;
}

}  // namespace mcqa
