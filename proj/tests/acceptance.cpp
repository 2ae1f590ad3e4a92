// Acceptance checks: one PASS/FAIL line per criterion, tolerances pinned
// below. Exit status is nonzero if any criterion fails, except those listed
// in kKnownFailures (documented in the README); --strict counts those too.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mcqa/blackbox.hpp"
#include "mcqa/error.hpp"
#include "mcqa/metrics.hpp"
#include "mcqa/rng.hpp"
#include "mcqa/studies.hpp"
#include "mcqa/whitebox.hpp"
#include "mcqa/http.hpp"
#include "mcqa/pipeline.hpp"
#include "oracles/metric_oracles.hpp"
#include "temp_dir.hpp"

namespace fs = std::filesystem;
using namespace mcqa;

namespace {

const fs::path kFixtures = MCQA_FIXTURES;

const std::vector<std::string> kKnownFailures{"noise_study"};

struct Outcome {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Instance {
  std::vector<double> c;
  std::vector<int> l;
};

// N in [2, 50], confidences on a coarse grid so ties occur, both labels present.
std::vector<Instance> random_instances(std::uint64_t seed, int count) {
  SplitMix64 rng(seed);
  std::vector<Instance> out;
  for (int t = 0; t < count; ++t) {
    Instance x;
    const auto n = 2 + rng.below(49);
    for (std::uint64_t i = 0; i < n; ++i) {
      x.c.push_back(static_cast<double>(rng.below(12)) / 11.0);
      x.l.push_back(static_cast<int>(rng.below(2)));
    }
    x.l[0] = 1;
    x.l[1] = 0;
    out.push_back(std::move(x));
  }
  return out;
}

Outcome auroc_oracle() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (const auto& x : random_instances(1001, 200))
    worst = std::max(worst, std::abs(auroc(x.c, x.l) - oracle::auroc_pairs(x.c, x.l)));
  o.require(worst <= 1e-9, "max |auroc - pairs| = " + fmt("%.3g", worst));
  for (const std::vector<int>& l : {std::vector<int>{1, 1, 1}, std::vector<int>{0, 0, 0}}) {
    bool raised = false;
    try {
      auroc(std::vector<double>{0.1, 0.5, 0.9}, l);
    } catch (const UndefinedMetric&) {
      raised = true;
    }
    o.require(raised, "single-class input did not raise");
  }
  const double secs = seconds_since(t0);
  o.require(secs < 1.0, "runtime " + fmt("%.3f", secs) + " s");
  if (o.ok) o.detail = "200 instances, max diff " + fmt("%.2g", worst) + ", " + fmt("%.3f", secs) + " s";
  return o;
}

Outcome auarc_oracle() {
  Outcome o;
  std::size_t mismatches = 0;
  for (const auto& x : random_instances(1001, 200))
    if (auarc(x.c, x.l) != oracle::auarc_direct(x.c, x.l)) ++mismatches;
  o.require(mismatches == 0, std::to_string(mismatches) + " instances differ from direct summation");
  const std::vector<double> c{0.3, 0.1, 0.2, 0.9, 0.9};
  const std::vector<int> all_correct(c.size(), 1);
  o.require(auarc(c, all_correct) == 1.0, "all-correct fixture != 1");
  if (o.ok) o.detail = "200 instances exact, all-correct = 1";
  return o;
}

Outcome calibration() {
  Outcome o;
  SplitMix64 rng(1003);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> c;
    std::vector<int> l;
    for (int i = 0; i < 200; ++i) {
      c.push_back(static_cast<double>(rng.below(40)) / 39.0);
      l.push_back(rng.uniform() < c.back() ? 1 : 0);
    }
    const auto map = fit_histogram_binning(c, l, 10);
    const double e = ece(apply_calibration(map, c), l, 10);
    o.require(e == 0.0, "fit==eval ECE = " + fmt("%.3g", e));

    const auto one = fit_histogram_binning(c, l, 1);
    const double acc = std::accumulate(l.begin(), l.end(), 0.0) / static_cast<double>(l.size());
    for (double v : {-5.0, 0.0, 0.37, 1.0, 9.0}) o.require(apply_calibration(one, v) == acc, "B=1 != accuracy");
  }
  // 10-point hand fixture: equal-mass halves with positive rates 1/5 and 4/5.
  const std::vector<double> c{0.05, 0.1, 0.2, 0.3, 0.4, 0.55, 0.6, 0.7, 0.8, 0.9};
  const std::vector<int> l{0, 0, 1, 0, 0, 1, 1, 0, 1, 1};
  const auto map = fit_histogram_binning(c, l, 2);
  o.require(map.bins() == 2, "10-point fixture bins");
  o.require(std::abs(apply_calibration(map, 0.3) - 0.2) <= 1e-12, "10-point low bin");
  o.require(std::abs(apply_calibration(map, 0.7) - 0.8) <= 1e-12, "10-point high bin");
  // ECE of the raw scores with 2 bins: |0.21 - 0.2| and |0.71 - 0.8|, half weight each.
  o.require(std::abs(ece(c, l, 2) - 0.05) <= 1e-12, "10-point ECE = " + fmt("%.17g", ece(c, l, 2)));
  if (o.ok) o.detail = "fit==eval 0 exactly, B=1 global accuracy, 10-point fixture at 1e-12";
  return o;
}

Outcome rce_check() {
  Outcome o;
  // Binary labels in bins of two: reg steps 0, 1/2, 1 across the bins.
  for (const std::vector<int>& l : {std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 0, 0, 1, 1, 1}}) {
    const std::size_t n = l.size();
    std::vector<double> c;
    for (std::size_t i = 0; i < n; ++i) c.push_back(0.1 * static_cast<double>(i + 1));
    const double v = rce(c, l, n / 2);
    o.require(v <= 1.0 / (2.0 * static_cast<double>(n)), "monotone RCE " + fmt("%.6g", v) + " at N=" + std::to_string(n));
    o.require(v == oracle::rce_direct(c, l, n / 2), "monotone RCE differs from the oracle");
  }
  const std::vector<double> c{0.15, 0.35, 0.25, 0.85, 0.65, 0.45, 0.95, 0.05};
  const std::vector<int> l{0, 1, 0, 1, 0, 1, 1, 0};
  const double v = rce(c, l, 2);
  const double ref = oracle::rce_direct(c, l, 2);
  o.require(std::abs(v - ref) <= 1e-12, "8-point " + fmt("%.17g", v) + " vs " + fmt("%.17g", ref));
  o.require(std::abs(v - 0.125) <= 1e-12, "8-point hand value " + fmt("%.17g", v));
  if (o.ok) o.detail = "monotone <= 1/(2N), 8-point = 0.125 at 1e-12";
  return o;
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

IncrementalFixture load_incremental() {
  const auto dir = kFixtures / "incremental";
  const auto j = nlohmann::json::parse(slurp(dir / "texts.json"));
  return {j.at("context").get<std::string>(), j.at("samples").get<std::vector<std::string>>(),
          j.at("options").get<std::vector<std::string>>(), load_precomputed(dir / "entailment.mat"),
          load_precomputed(dir / "contradiction.mat")};
}

const std::vector<BlackboxMethod> kBlackbox{BlackboxMethod::deg_j, BlackboxMethod::deg_e, BlackboxMethod::deg_c,
                                            BlackboxMethod::ecc_j, BlackboxMethod::ecc_e, BlackboxMethod::ecc_c};

Outcome incremental() {
  Outcome o;
  const auto fx = load_incremental();
  const auto texts = fx.all_texts();
  JaccardProvider jac;
  PrecomputedProvider ent(texts, fx.entail);
  PrecomputedProvider con(texts, fx.contra);
  const SpectralConfig cfg;
  double worst = 0.0;
  for (auto method : kBlackbox) {
    const auto kind = similarity_kind(method);
    SimilarityProvider& base = kind == SimilarityKind::jaccard          ? static_cast<SimilarityProvider&>(jac)
                               : kind == SimilarityKind::nli_entailment ? static_cast<SimilarityProvider&>(ent)
                                                                        : static_cast<SimilarityProvider&>(con);
    const std::optional<std::string> ctx =
        kind == SimilarityKind::jaccard ? std::nullopt : std::optional<std::string>(fx.context);
    const auto incremental = score_candidates(fx.samples, fx.options, method, base, ctx, cfg);
    for (std::size_t k = 0; k < fx.options.size(); ++k) {
      auto all = fx.samples;
      all.push_back(fx.options[k]);
      const auto w = effective_similarity(build_matrix(all, base, ctx));
      const double rebuilt =
          is_degree(method) ? degree_confidence(w, fx.samples.size()) : eccentricity_confidence(w, fx.samples.size(), cfg);
      worst = std::max(worst, std::abs(incremental[k] - rebuilt));
    }
    CountingProvider counter(base);
    const auto m = build_matrix(fx.samples, counter, ctx);
    for (const auto& option : fx.options) {
      counter.reset();
      extend_matrix(m, fx.samples, option, counter, ctx);
      o.require(counter.pairs_scored() == fx.samples.size(),
                "option extension scored " + std::to_string(counter.pairs_scored()) + " pairs");
    }
  }
  o.require(worst <= 1e-10, "max |incremental - rebuild| = " + fmt("%.3g", worst));
  if (o.ok)
    o.detail = "6 methods x " + std::to_string(fx.options.size()) + " options, max diff " + fmt("%.2g", worst) + ", " +
               std::to_string(fx.samples.size()) + " pairs per option";
  return o;
}

Outcome blackbox_invariants() {
  Outcome o;
  const auto fx = load_incremental();
  JaccardProvider jac;
  PrecomputedProvider ent(fx.all_texts(), fx.entail);
  PrecomputedProvider con(fx.all_texts(), fx.contra);
  SplitMix64 rng(1005);
  double worst = 0.0;
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
        worst = std::max(worst, std::abs(a.degree[k] - b.degree[k]));
        worst = std::max(worst, std::abs(a.eccentricity[k] - b.eccentricity[k]));
      }
    }
  }
  o.require(worst <= 1e-10, "permutation diff " + fmt("%.3g", worst));

  // All samples and the candidate identical.
  const std::vector<std::string> same(5, "the sky is blue");
  const std::vector<std::string> cand{"the sky is blue"};
  const auto s = score_candidates_for_kind(same, cand, jac, std::nullopt, SpectralConfig{});
  o.require(s.degree[0] == 1.0, "identical responses: Deg = " + fmt("%.17g", s.degree[0]));
  o.require(std::abs(s.eccentricity[0]) <= 1e-12, "identical responses: Ecc = " + fmt("%.3g", s.eccentricity[0]));

  // Sign flips of the embedding columns leave centroid distances unchanged.
  double flip = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd w(7, 7);
    for (Eigen::Index i = 0; i < 7; ++i) {
      w(i, i) = 1.0;
      for (Eigen::Index j = i + 1; j < 7; ++j) w(i, j) = w(j, i) = rng.uniform();
    }
    const Eigen::MatrixXd emb = spectral_embedding(w, SpectralConfig{});
    const Eigen::RowVectorXd centroid = emb.colwise().mean();
    for (int pattern = 0; pattern < 50; ++pattern) {
      Eigen::VectorXd signs(emb.cols());
      for (Eigen::Index k = 0; k < signs.size(); ++k) signs(k) = rng.below(2) ? 1.0 : -1.0;
      const Eigen::MatrixXd flipped = emb * signs.asDiagonal();
      const Eigen::RowVectorXd fc = flipped.colwise().mean();
      for (Eigen::Index i = 0; i < 7; ++i)
        flip = std::max(flip, std::abs((flipped.row(i) - fc).norm() - (emb.row(i) - centroid).norm()));
    }
  }
  o.require(flip <= 1e-10, "sign-flip diff " + fmt("%.3g", flip));
  if (o.ok) o.detail = "permutation diff " + fmt("%.2g", worst) + ", identical Deg=1 Ecc=0, 50 sign patterns";
  return o;
}

Outcome whitebox_reductions() {
  Outcome o;
  SplitMix64 rng(1007);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    TokenLogprobSeq s;
    const auto len = 1 + rng.below(30);
    const double a = 0.1 + rng.uniform();
    for (std::uint64_t i = 0; i < len; ++i) s.tokens.push_back({"w", -5.0 * rng.uniform(), std::nullopt, a});
    const RelevanceWeights uniform{std::vector<double>(s.size(), a), "uniform"};
    const double ppl = perplexity_conf(s);
    const double t = static_cast<double>(s.size());
    for (double v : {token_sar(s, uniform), sl(s) / t, csl(s), csl_next(s)}) worst = std::max(worst, std::abs(v - ppl));
  }
  o.require(worst <= 1e-12, "max diff " + fmt("%.3g", worst));
  if (o.ok) o.detail = "100 sequences, max diff " + fmt("%.2g", worst);
  return o;
}

Outcome rank_invariance() {
  Outcome o;
  double worst = 0.0;
  for (const auto& x : random_instances(1009, 50)) {
    std::vector<double> affine, squashed;
    for (double v : x.c) {
      affine.push_back(2.0 * v + 1.0);
      squashed.push_back(std::tanh(v));
    }
    for (const auto* t : {&affine, &squashed}) {
      worst = std::max(worst, std::abs(auroc(*t, x.l) - auroc(x.c, x.l)));
      worst = std::max(worst, std::abs(auarc(*t, x.l) - auarc(x.c, x.l)));
      worst = std::max(worst, std::abs(rce(*t, x.l, 20) - rce(x.c, x.l, 20)));
    }
  }
  o.require(worst <= 1e-12, "max diff " + fmt("%.3g", worst));
  if (o.ok) o.detail = "50 instances x 2 transforms, max diff " + fmt("%.2g", worst);
  return o;
}

Outcome threshold_flip() {
  Outcome o;
  const auto scores = read_labeled_scores(kFixtures / "threshold_flip" / "labeled_scores.jsonl");
  const std::vector<double> taus{0.5, 0.9};
  const auto table = threshold_sweep(scores, taus);
  auto oracle_auroc = [&](const std::string& method, double tau) {
    std::vector<double> c;
    std::vector<int> l;
    for (const auto& s : scores)
      if (s.method == method) {
        c.push_back(s.confidence);
        l.push_back(*s.continuous > tau ? 1 : 0);
      }
    return oracle::auroc_pairs(c, l);
  };
  o.require(table.rows.size() == 2, "expected two rows");
  if (!o.ok) return o;
  for (std::size_t r = 0; r < 2; ++r)
    for (const auto& cell : table.rows[r].blackbox)
      o.require(cell.value && *cell.value == oracle_auroc(cell.method, taus[r]), "cell disagrees with pair oracle");
  const auto& lo = table.rows[0].blackbox;
  const auto& hi = table.rows[1].blackbox;
  o.require(lo.size() == 2 && hi.size() == 2 && lo[0].method == "deg_e" && hi[0].method == "ecc_e",
            "no ranking flip between 0.5 and 0.9");
  const std::string expected =
      "| | tau | 1 | 2 |\n"
      "|---|---|---|---|\n"
      "| | | **Black-box** | |\n"
      "| Baseline | 0.5 | Deg(E) | Ecc(E) |\n"
      "| Baseline | 0.9 | Ecc(E) | Deg(E) |\n";
  o.require(ranking_markdown({{"Baseline", table}}) == expected, "table layout differs");
  if (o.ok)
    o.detail = "tau=0.5 Deg(E) " + fmt("%.4f", *lo[0].value) + " > Ecc(E) " + fmt("%.4f", *lo[1].value) +
               "; tau=0.9 Ecc(E) " + fmt("%.4f", *hi[0].value) + " > Deg(E) " + fmt("%.4f", *hi[1].value);
  return o;
}

Outcome noise_study_check() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto in = noise_inputs(read_labeled_scores(kFixtures / "noise_study" / "labeled_scores.jsonl"));
  NoiseStudyConfig cfg;
  cfg.sigmas = {0.0, 0.5, 1.0, 2.0, 5.0, 50.0};
  const auto res = noise_study(in.continuous, in.methods, in.confidences, cfg);
  const double secs = seconds_since(t0);
  const auto& s = res.summary;

  o.require(s[0].n_defined == cfg.seeds.size() && s[0].mean_kendall_tau == 1.0, "sigma=0 mean tau != 1");
  for (std::size_t i = 1; i < 5; ++i)
    o.require(s[i].mean_kendall_tau <= s[i - 1].mean_kendall_tau + s[i].standard_error,
              "mean tau increases beyond one SE at sigma=" + format_tau(s[i].sigma));
  const double k = static_cast<double>(in.methods.size());
  const double band = 3.0 / std::sqrt(static_cast<double>(cfg.seeds.size()) * k * (k - 1.0) / 4.0);
  o.require(std::abs(s[5].mean_kendall_tau) < band, "sigma=50 mean tau " + fmt("%.4f", s[5].mean_kendall_tau) +
                                                        " (SE " + fmt("%.4f", s[5].standard_error) +
                                                        ") outside null band " + fmt("%.4f", band));
  o.require(secs < 30.0, "runtime " + fmt("%.1f", secs) + " s");

  std::string seq;
  for (const auto& r : s) seq += " " + format_tau(r.sigma) + ":" + fmt("%.3f", r.mean_kendall_tau);
  if (o.ok) o.detail = "mean tau" + seq + ", " + fmt("%.1f", secs) + " s";
  else o.detail += "; mean tau" + seq;
  return o;
}

Outcome end_to_end() {
  Outcome o;
  TempDir tmp;
  fs::copy(kFixtures / "e2e", tmp.path() / "e2e", fs::copy_options::recursive);
  auto j = nlohmann::json::parse(slurp(kFixtures / "e2e" / "config.json"));
  const auto t0 = Clock::now();
  const auto requests = network_request_count();
  std::vector<RunOutcome> runs;
  for (const char* out : {"out1", "out2"}) {
    j["output_dir"] = out;
    auto cfg = run_config_from_json(j, tmp.path() / "e2e");
    o.require(cfg.generation.backend == BackendType::replay, "fixture config is not in replay mode");
    runs.push_back(run_pipeline(cfg, nullptr));
  }
  const double secs = seconds_since(t0);
  o.require(network_request_count() == requests, "network requests were made");
  const auto first = slurp(tmp.path() / "e2e" / "out1" / "report.json");
  o.require(first == slurp(tmp.path() / "e2e" / "out2" / "report.json"), "reports differ between runs");
  o.require(first == slurp(kFixtures / "e2e" / "golden_report.json"), "report differs from golden");
  std::size_t ok_methods = 0;
  for (const auto& r : runs[0].report.results)
    if (r.status == "ok" && r.auroc) ++ok_methods;
  o.require(runs[0].exit_code == 0 && ok_methods == 12, std::to_string(ok_methods) + " of 12 methods scored");
  o.require(secs < 60.0, "runtime " + fmt("%.1f", secs) + " s");
  if (o.ok)
    o.detail = "12 methods, 0 network requests, byte-identical to golden twice, " + fmt("%.2f", secs) + " s";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const bool strict = argc > 1 && std::string(argv[1]) == "--strict";
  set_warning_sink([](const std::string&) {});
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"auroc_oracle", auroc_oracle},
      {"auarc_oracle", auarc_oracle},
      {"calibration_ece", calibration},
      {"rce", rce_check},
      {"incremental_equivalence", incremental},
      {"blackbox_invariants", blackbox_invariants},
      {"whitebox_reductions", whitebox_reductions},
      {"rank_invariance", rank_invariance},
      {"threshold_flip", threshold_flip},
      {"noise_study", noise_study_check},
      {"offline_end_to_end", end_to_end},
  };
  int failed = 0, known = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %-24s %s\n", o.ok ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    if (!o.ok) {
      if (std::find(kKnownFailures.begin(), kKnownFailures.end(), name) != kKnownFailures.end()) ++known;
      else ++failed;
    }
  }
  std::printf("%zu criteria, %d failed, %d of them known (see README)\n", criteria.size(), failed + known, known);
  return failed > 0 || (strict && known > 0) ? 1 : 0;
}
