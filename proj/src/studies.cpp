#include "mcqa/studies.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "mcqa/error.hpp"
#include "mcqa/methods.hpp"
#include "mcqa/rng.hpp"

namespace mcqa {

namespace {

std::string label_of(const std::string& id) { return std::string(method_label(method_from_string(id))); }

std::optional<double> auroc_or_undefined(std::span<const double> c, std::span<const int> l) {
  try {
    return auroc(c, l);
  } catch (const UndefinedMetric&) {
    return std::nullopt;
  }
}

std::vector<std::string> ids_of(const std::vector<RankedCell>& cells) {
  std::vector<std::string> out;
  for (const auto& c : cells) out.push_back(c.method);
  return out;
}

double logit(double p) { return std::log(p / (1.0 - p)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

std::vector<RankedCell> rank_cells(std::vector<RankedCell> cells) {
  std::stable_sort(cells.begin(), cells.end(), [](const RankedCell& a, const RankedCell& b) {
    if (a.value.has_value() != b.value.has_value()) return a.value.has_value();
    if (a.value && b.value && *a.value != *b.value) return *a.value > *b.value;
    return label_of(a.method) < label_of(b.method);
  });
  return cells;
}

RankingRow rank_by_auroc(std::span<const LabeledScore> scores, const std::string& label) {
  std::map<std::string, std::pair<std::vector<double>, std::vector<int>>> by_method;
  for (const auto& s : scores) {
    auto& [c, l] = by_method[s.method];
    c.push_back(s.confidence);
    l.push_back(s.correctness);
  }
  std::vector<RankedCell> bb, wb;
  for (const auto& [method, data] : by_method) {
    RankedCell cell{method, auroc_or_undefined(data.first, data.second)};
    (is_blackbox(method_from_string(method)) ? bb : wb).push_back(cell);
  }
  return {label, rank_cells(std::move(bb)), rank_cells(std::move(wb))};
}

std::string format_tau(double tau) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", tau);
  return buf;
}

RankingTable threshold_sweep(std::span<const LabeledScore> scores, std::span<const double> taus) {
  if (taus.empty()) throw invalid_input("threshold_sweep: empty tau list");
  for (const auto& s : scores)
    if (!s.continuous) throw invalid_input("threshold_sweep: score without a continuous similarity (" + s.item_id + ")");
  RankingTable table;
  for (double tau : taus) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw invalid_input("threshold_sweep: tau must be in [0,1]");
    std::vector<LabeledScore> relabeled(scores.begin(), scores.end());
    for (auto& s : relabeled) s.correctness = threshold_label(*s.continuous, tau);
    table.rows.push_back(rank_by_auroc(relabeled, format_tau(tau)));
  }
  return table;
}

std::string ranking_markdown(const std::vector<std::pair<std::string, RankingTable>>& groups) {
  std::size_t k = 0;
  bool any_bb = false, any_wb = false;
  for (const auto& [name, table] : groups)
    for (const auto& row : table.rows) {
      k = std::max({k, row.blackbox.size(), row.whitebox.size()});
      any_bb = any_bb || !row.blackbox.empty();
      any_wb = any_wb || !row.whitebox.empty();
    }
  std::string out = "| | tau |";
  for (std::size_t r = 1; r <= k; ++r) out += " " + std::to_string(r) + " |";
  out += "\n|---|---|";
  for (std::size_t r = 0; r < k; ++r) out += "---|";
  out += "\n";
  auto section = [&](const char* title, bool whitebox) {
    out += std::string("| | | **") + title + "** |";
    for (std::size_t r = 1; r < k; ++r) out += " |";
    out += "\n";
    for (const auto& [name, table] : groups) {
      for (const auto& row : table.rows) {
        const auto& cells = whitebox ? row.whitebox : row.blackbox;
        out += "| " + name + " | " + row.label + " |";
        for (std::size_t r = 0; r < k; ++r) {
          if (r >= cells.size()) out += " |";
          else if (!cells[r].value) out += " undefined |";
          else out += " " + label_of(cells[r].method) + " |";
        }
        out += "\n";
      }
    }
  };
  if (any_bb) section("Black-box", false);
  if (any_wb) section("White-box", true);
  return out;
}

double kendall_tau(std::span<const std::string> a, std::span<const std::string> b) {
  const std::size_t n = a.size();
  if (n < 2 || b.size() != n) throw invalid_input("kendall_tau: need two rankings of the same >= 2 items");
  std::map<std::string, std::size_t> pos_b;
  for (std::size_t i = 0; i < n; ++i) pos_b[b[i]] = i;
  if (pos_b.size() != n) throw invalid_input("kendall_tau: duplicate items");
  std::vector<std::size_t> mapped;
  std::vector<bool> seen(n, false);
  for (const auto& x : a) {
    auto it = pos_b.find(x);
    if (it == pos_b.end()) throw invalid_input("kendall_tau: rankings differ in membership");
    if (seen[it->second]) throw invalid_input("kendall_tau: duplicate items");
    seen[it->second] = true;
    mapped.push_back(it->second);
  }
  long long score = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) score += mapped[i] < mapped[j] ? 1 : -1;
  return static_cast<double>(score) / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

NoiseStudyConfig::NoiseStudyConfig() {
  for (std::uint64_t s = 0; s < 100; ++s) seeds.push_back(s);
}

void NoiseStudyConfig::validate() const {
  if (sigmas.empty() || seeds.empty()) throw config_error("noise study needs at least one sigma and one seed");
  for (double s : sigmas)
    if (!(s >= 0.0) || !std::isfinite(s)) throw config_error("noise study sigma must be finite and >= 0");
  if (!(delta > 0.0 && delta < 0.5)) throw config_error("noise study delta must be in (0, 0.5)");
  if (!(threshold > 0.0 && threshold < 1.0)) throw config_error("noise study threshold must be in (0, 1)");
}

std::vector<double> noisy_correctness(std::span<const double> f, double sigma, std::uint64_t seed, double delta) {
  SplitMix64 rng(SplitMix64::mix(seed ^ SplitMix64::mix(std::bit_cast<std::uint64_t>(sigma))));
  std::vector<double> out;
  out.reserve(f.size());
  for (double v : f) {
    if (!(v >= 0.0 && v <= 1.0)) throw invalid_input("noise study: correctness value outside [0,1]");
    const double eps = sigma == 0.0 ? 0.0 : sigma * rng.normal();
    out.push_back(sigmoid(logit(std::clamp(v, delta, 1.0 - delta)) + eps));
  }
  return out;
}

NoiseStudyResult noise_study(std::span<const double> continuous, std::span<const std::string> methods,
                             const std::vector<std::vector<double>>& confidences, const NoiseStudyConfig& cfg) {
  cfg.validate();
  if (methods.size() < 2) throw invalid_input("noise study needs at least two methods");
  if (confidences.size() != methods.size()) throw invalid_input("noise study: one confidence vector per method");
  for (const auto& c : confidences)
    if (c.size() != continuous.size()) throw invalid_input("noise study: confidence/correctness length mismatch");

  NoiseStudyResult result;
  result.methods.assign(methods.begin(), methods.end());
  result.delta = cfg.delta;
  result.threshold = cfg.threshold;

  auto rank = [&](std::span<const double> f_tilde, std::vector<std::optional<double>>& aurocs) {
    std::vector<int> labels;
    for (double v : f_tilde) labels.push_back(v > cfg.threshold ? 1 : 0);
    std::vector<RankedCell> cells;
    bool all_defined = true;
    for (std::size_t m = 0; m < methods.size(); ++m) {
      aurocs.push_back(auroc_or_undefined(confidences[m], labels));
      all_defined = all_defined && aurocs.back().has_value();
      cells.push_back({methods[m], aurocs.back()});
    }
    return all_defined ? ids_of(rank_cells(std::move(cells))) : std::vector<std::string>{};
  };

  const auto clean = noisy_correctness(continuous, 0.0, 0, cfg.delta);
  result.clean_ranking = rank(clean, result.clean_auroc);
  if (result.clean_ranking.empty()) throw invalid_input("noise study: clean labels are single-class");

  for (double sigma : cfg.sigmas) {
    NoiseSummary summary{sigma, 0, 0.0, 0.0};
    std::vector<double> taus;
    for (auto seed : cfg.seeds) {
      NoiseRun run{sigma, seed, {}, {}, std::nullopt};
      const auto f_tilde = noisy_correctness(continuous, sigma, seed, cfg.delta);
      run.ranking = rank(f_tilde, run.auroc);
      if (!run.ranking.empty()) {
        run.kendall_tau = kendall_tau(result.clean_ranking, run.ranking);
        taus.push_back(*run.kendall_tau);
      }
      result.runs.push_back(std::move(run));
    }
    summary.n_defined = taus.size();
    if (!taus.empty()) {
      double sum = 0.0;
      for (double t : taus) sum += t;
      summary.mean_kendall_tau = sum / static_cast<double>(taus.size());
      if (taus.size() > 1) {
        double ss = 0.0;
        for (double t : taus) ss += (t - summary.mean_kendall_tau) * (t - summary.mean_kendall_tau);
        summary.standard_error = std::sqrt(ss / static_cast<double>(taus.size() - 1)) /
                                 std::sqrt(static_cast<double>(taus.size()));
      }
    }
    result.summary.push_back(summary);
  }
  return result;
}

NoiseInputs noise_inputs(std::span<const LabeledScore> scores) {
  std::map<std::pair<std::string, std::size_t>, std::size_t> unit_of;
  std::vector<std::pair<std::string, std::size_t>> units;
  std::map<std::string, std::size_t> method_of;
  NoiseInputs in;
  for (const auto& s : scores) {
    const auto key = std::pair{s.item_id, s.index};
    if (!s.continuous) throw invalid_input("noise study: score without a continuous correctness (" + s.item_id + ")");
    if (unit_of.emplace(key, units.size()).second) {
      units.push_back(key);
      in.continuous.push_back(*s.continuous);
    } else if (in.continuous[unit_of[key]] != *s.continuous) {
      throw invalid_input("noise study: methods disagree on the correctness of " + s.item_id);
    }
    if (method_of.emplace(s.method, in.methods.size()).second) in.methods.push_back(s.method);
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  in.confidences.assign(in.methods.size(), std::vector<double>(units.size(), nan));
  for (const auto& s : scores) in.confidences[method_of[s.method]][unit_of[{s.item_id, s.index}]] = s.confidence;
  for (std::size_t m = 0; m < in.methods.size(); ++m)
    for (double c : in.confidences[m])
      if (std::isnan(c)) throw invalid_input("noise study: method " + in.methods[m] + " misses some units");
  return in;
}

}  // namespace mcqa
