#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "mcqa/blackbox.hpp"
#include "mcqa/error.hpp"
#include "mcqa/rng.hpp"
#include "oracles/jacobi.hpp"

using namespace mcqa;

namespace {

const std::vector<BlackboxMethod> kAllMethods{BlackboxMethod::deg_j, BlackboxMethod::deg_e, BlackboxMethod::deg_c,
                                              BlackboxMethod::ecc_j, BlackboxMethod::ecc_e, BlackboxMethod::ecc_c};

oracle::Matrix to_rows(const Eigen::MatrixXd& m) {
  oracle::Matrix rows(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) rows[i][j] = m(i, j);
  return rows;
}

Eigen::MatrixXd random_similarity(SplitMix64& rng, Eigen::Index n) {
  Eigen::MatrixXd w(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    w(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) w(i, j) = w(j, i) = rng.uniform();
  }
  return w;
}

struct IncrementalFixture {
  std::string context;
  std::vector<std::string> samples, options;
  SimilarityMatrix entail, contra;

  std::vector<std::string> all_texts() const {
    auto t = samples;
    t.insert(t.end(), options.begin(), options.end());
    return t;
  }
};

IncrementalFixture load_fixture() {
  const std::string dir = std::string(MCQA_FIXTURES) + "/incremental/";
  std::ifstream in(dir + "texts.json");
  const auto j = nlohmann::json::parse(in);
  return {j.at("context").get<std::string>(), j.at("samples").get<std::vector<std::string>>(),
          j.at("options").get<std::vector<std::string>>(), load_precomputed(dir + "entailment.mat"),
          load_precomputed(dir + "contradiction.mat")};
}

}  // namespace

TEST_CASE("effective_similarity") {
  Eigen::MatrixXd v(2, 2);
  v << 1.0, 0.4, 0.4, 1.0;
  CHECK(effective_similarity(SimilarityMatrix(SimilarityKind::nli_entailment, v)) == v);

  Eigen::MatrixXd c(2, 2);
  c << 0.0, 0.3, 0.3, 0.0;
  const auto w = effective_similarity(SimilarityMatrix(SimilarityKind::nli_contradiction, c));
  CHECK(w(0, 0) == 1.0);
  CHECK(w(0, 1) == doctest::Approx(0.7).epsilon(1e-15));

  const auto ones = effective_similarity(SimilarityMatrix(SimilarityKind::nli_contradiction, Eigen::MatrixXd::Zero(3, 3)));
  CHECK(ones == Eigen::MatrixXd::Ones(3, 3));
}

TEST_CASE("degree_confidence") {
  CHECK(degree_confidence(Eigen::MatrixXd::Ones(4, 4), 2) == 1.0);
  Eigen::MatrixXd w = Eigen::MatrixXd::Ones(3, 3);
  w(0, 1) = w(1, 0) = 0.0;
  w(0, 2) = w(2, 0) = 0.0;
  CHECK(degree_confidence(w, 0) == 0.0);
  w(0, 1) = w(1, 0) = 0.4;
  w(0, 2) = w(2, 0) = 0.8;
  CHECK(degree_confidence(w, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(degree_confidence(Eigen::MatrixXd::Ones(1, 1), 0) == 1.0);
}

TEST_CASE("degree is strictly monotone in the candidate's similarities") {
  SplitMix64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    auto w = random_similarity(rng, 6);
    const auto c = static_cast<Eigen::Index>(rng.below(6));
    auto j = static_cast<Eigen::Index>(rng.below(6));
    if (j == c) j = (j + 1) % 6;
    const double before = degree_confidence(w, static_cast<std::size_t>(c));
    w(c, j) = w(j, c) = w(c, j) + 0.5 * (1.0 - w(c, j)) + 1e-6;
    CHECK(degree_confidence(w, static_cast<std::size_t>(c)) > before);
  }
}

TEST_CASE("eccentricity golden values on the two-cluster fixture") {
  Eigen::MatrixXd w(4, 4);
  w << 1.0, 0.9, 0.1, 0.2,  //
      0.9, 1.0, 0.15, 0.05,  //
      0.1, 0.15, 1.0, 0.8,   //
      0.2, 0.05, 0.8, 1.0;
  // numpy reference (tests/oracles/eccentricity_reference.py).
  const double golden[] = {-0.484552358431603, -0.515468473606804, -0.498045342656886, -0.501712129621331};
  const auto jacobi = oracle::eccentricity(to_rows(w));
  const SpectralConfig cfg;
  for (std::size_t i = 0; i < 4; ++i) {
    const double s = eccentricity_confidence(w, i, cfg);
    CHECK(std::abs(s - golden[i]) < 1e-8);
    CHECK(std::abs(s - jacobi[i]) < 1e-8);
  }
}

TEST_CASE("eccentricity matches the Jacobi oracle on random graphs") {
  SplitMix64 rng(29);
  const SpectralConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = static_cast<Eigen::Index>(2 + rng.below(9));
    const auto w = random_similarity(rng, n);
    const auto expected = oracle::eccentricity(to_rows(w));
    for (Eigen::Index i = 0; i < n; ++i)
      CHECK(std::abs(eccentricity_confidence(w, static_cast<std::size_t>(i), cfg) - expected[i]) < 1e-9);
  }
}

TEST_CASE("complete agreement and degenerate graphs give eccentricity 0") {
  const SpectralConfig cfg;
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(eccentricity_confidence(Eigen::MatrixXd::Ones(5, 5), i, cfg)) < 1e-12);
  const Eigen::MatrixXd isolated = Eigen::MatrixXd::Identity(4, 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(eccentricity_confidence(isolated, i, cfg) == 0.0);
  CHECK(degree_confidence(isolated, 1) == 0.0);
}

TEST_CASE("eccentricity rejects asymmetric input and bad config") {
  Eigen::MatrixXd w = Eigen::MatrixXd::Ones(3, 3);
  w(0, 1) = 0.5;
  CHECK_THROWS_AS(eccentricity_confidence(w, 0, SpectralConfig{}), Error);
  SpectralConfig bad;
  bad.eigenvalue_cutoff = 2.5;
  CHECK_THROWS_AS(eccentricity_confidence(Eigen::MatrixXd::Ones(3, 3), 0, bad), Error);
}

TEST_CASE("eccentricity is permutation equivariant and sign-flip invariant") {
  SplitMix64 rng(31);
  const SpectralConfig cfg;
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index n = 7;
    const auto w = random_similarity(rng, n);
    std::vector<Eigen::Index> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(std::span(perm), rng);
    Eigen::MatrixXd pw(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) pw(i, j) = w(perm[i], perm[j]);
    for (Eigen::Index i = 0; i < n; ++i)
      CHECK(std::abs(eccentricity_confidence(pw, i, cfg) - eccentricity_confidence(w, perm[i], cfg)) < 1e-10);

    const Eigen::MatrixXd emb = spectral_embedding(w, cfg);
    const Eigen::RowVectorXd centroid = emb.colwise().mean();
    for (int pattern = 0; pattern < 50; ++pattern) {
      Eigen::VectorXd signs(emb.cols());
      for (Eigen::Index k = 0; k < signs.size(); ++k) signs(k) = rng.below(2) ? 1.0 : -1.0;
      const Eigen::MatrixXd flipped = emb * signs.asDiagonal();
      const Eigen::RowVectorXd fc = flipped.colwise().mean();
      for (Eigen::Index i = 0; i < n; ++i)
        CHECK(std::abs((flipped.row(i) - fc).norm() - (emb.row(i) - centroid).norm()) < 1e-12);
    }
  }
}

TEST_CASE("score_candidates boundary cases with jaccard") {
  JaccardProvider j;
  const std::vector<std::string> samples(4, "green leaves");
  const std::vector<std::string> options{"green leaves", "purple rocks"};
  const auto deg = score_candidates(samples, options, BlackboxMethod::deg_j, j, std::nullopt, SpectralConfig{});
  CHECK(deg[0] == 1.0);
  CHECK(deg[1] == 0.0);
  const auto ecc = score_candidates(samples, options, BlackboxMethod::ecc_j, j, std::nullopt, SpectralConfig{});
  CHECK(std::abs(ecc[0]) < 1e-12);
  CHECK(ecc[1] <= 0.0);
  CHECK_THROWS_AS(score_candidates(samples, options, BlackboxMethod::deg_e, j, std::nullopt, SpectralConfig{}), Error);
}

TEST_CASE("incremental candidate scores equal full rebuilds on the 5x4 fixture") {
  const auto fx = load_fixture();
  const auto texts = fx.all_texts();
  const std::optional<std::string> ctx = fx.context;
  JaccardProvider jac;
  PrecomputedProvider ent(texts, fx.entail);
  PrecomputedProvider con(texts, fx.contra);
  const SpectralConfig cfg;

  for (auto method : kAllMethods) {
    SimilarityProvider& base = similarity_kind(method) == SimilarityKind::jaccard ? static_cast<SimilarityProvider&>(jac)
                               : similarity_kind(method) == SimilarityKind::nli_entailment
                                   ? static_cast<SimilarityProvider&>(ent)
                                   : static_cast<SimilarityProvider&>(con);
    const std::optional<std::string> method_ctx = similarity_kind(method) == SimilarityKind::jaccard ? std::nullopt : ctx;
    const auto incremental = score_candidates(fx.samples, fx.options, method, base, method_ctx, cfg);
    REQUIRE(incremental.size() == fx.options.size());
    for (std::size_t k = 0; k < fx.options.size(); ++k) {
      auto all = fx.samples;
      all.push_back(fx.options[k]);
      const auto w = effective_similarity(build_matrix(all, base, method_ctx));
      const double rebuilt = is_degree(method) ? degree_confidence(w, fx.samples.size())
                                               : eccentricity_confidence(w, fx.samples.size(), cfg);
      CHECK(std::abs(incremental[k] - rebuilt) <= 1e-10);
    }
  }
}

TEST_CASE("each option extension evaluates exactly n new pairs") {
  const auto fx = load_fixture();
  PrecomputedProvider ent(fx.all_texts(), fx.entail);
  CountingProvider counter(ent);
  const SimilarityMatrix base = build_matrix(fx.samples, counter, fx.context);
  CHECK(counter.pairs_scored() == fx.samples.size() * (fx.samples.size() - 1) / 2);
  for (const auto& option : fx.options) {
    counter.reset();
    extend_matrix(base, fx.samples, option, counter, fx.context);
    CHECK(counter.pairs_scored() == fx.samples.size());
  }
}

TEST_CASE("candidate scores are invariant to sample order") {
  const auto fx = load_fixture();
  JaccardProvider jac;
  PrecomputedProvider ent(fx.all_texts(), fx.entail);
  PrecomputedProvider con(fx.all_texts(), fx.contra);
  SplitMix64 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    auto permuted = fx.samples;
    shuffle(std::span(permuted), rng);
    for (SimilarityProvider* p : {static_cast<SimilarityProvider*>(&jac), static_cast<SimilarityProvider*>(&ent),
                                  static_cast<SimilarityProvider*>(&con)}) {
      const std::optional<std::string> ctx =
          p->kind() == SimilarityKind::jaccard ? std::nullopt : std::optional<std::string>(fx.context);
      const auto a = score_candidates_for_kind(fx.samples, fx.options, *p, ctx, SpectralConfig{});
      const auto b = score_candidates_for_kind(permuted, fx.options, *p, ctx, SpectralConfig{});
      for (std::size_t k = 0; k < fx.options.size(); ++k) {
        CHECK(std::abs(a.degree[k] - b.degree[k]) < 1e-10);
        CHECK(std::abs(a.eccentricity[k] - b.eccentricity[k]) < 1e-10);
      }
    }
  }
}

TEST_CASE("score ranges") {
  SplitMix64 rng(43);
  for (int trial = 0; trial < 50; ++trial) {
    const auto w = random_similarity(rng, 6);
    for (std::size_t i = 0; i < 6; ++i) {
      const double d = degree_confidence(w, i);
      CHECK(d >= 0.0);
      CHECK(d <= 1.0);
      CHECK(eccentricity_confidence(w, i, SpectralConfig{}) <= 0.0);
    }
  }
}
