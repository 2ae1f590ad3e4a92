#include "mcqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include "mcqa/error.hpp"
#include "mcqa/rng.hpp"

namespace mcqa {

namespace {

void check_lengths(std::span<const double> c, std::span<const int> l, const char* what) {
  if (c.size() != l.size()) throw invalid_input(std::string(what) + ": confidences and labels differ in length");
  for (double v : c)
    if (!std::isfinite(v)) throw invalid_input(std::string(what) + ": non-finite confidence");
  for (int v : l)
    if (v != 0 && v != 1) throw invalid_input(std::string(what) + ": labels must be 0 or 1");
}

std::pair<std::vector<double>, std::vector<int>> unzip(std::span<const LabeledScore> scores) {
  std::vector<double> c;
  std::vector<int> l;
  c.reserve(scores.size());
  l.reserve(scores.size());
  for (const auto& s : scores) {
    c.push_back(s.confidence);
    l.push_back(s.correctness);
  }
  return {std::move(c), std::move(l)};
}

std::vector<std::size_t> ascending_order(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  return order;
}

// Bin index of every value under equal-mass binning of the values themselves.
std::vector<std::size_t> self_binning(std::span<const double> values, std::size_t bins) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const auto edges = equal_mass_upper_edges(sorted, bins);
  std::vector<std::size_t> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(bin_of(edges, v));
  return out;
}

// #{j : v_j > v_i} + 0.5 * #{j : v_j == v_i}, for each i (self included).
std::vector<double> upper_half_counts(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out;
  out.reserve(values.size());
  for (double v : values) {
    const auto lo = std::lower_bound(sorted.begin(), sorted.end(), v);
    const auto hi = std::upper_bound(sorted.begin(), sorted.end(), v);
    const auto greater = static_cast<double>(sorted.end() - hi);
    const auto equal = static_cast<double>(hi - lo);
    out.push_back(greater + 0.5 * equal);
  }
  return out;
}

}  // namespace

std::vector<int> gold_labels(const McqItem& item) {
  std::vector<int> labels(item.options.size(), 0);
  labels.at(item.correct_index) = 1;
  return labels;
}

SimilarityLabel similarity_correctness(const std::string& response, std::span<const std::string> refs, double tau,
                                       SimilarityProvider& provider, const std::optional<std::string>& context) {
  if (refs.empty()) throw invalid_input("similarity_correctness: no reference answers");
  if (!(tau >= 0.0 && tau <= 1.0)) throw invalid_input("similarity_correctness: tau must lie in [0, 1]");
  std::vector<TextPair> pairs;
  for (const auto& r : refs) pairs.emplace_back(response, r);
  const auto scores = provider.score_pairs(context, pairs);
  if (scores.size() != pairs.size()) throw Error(ErrorKind::backend, "similarity_correctness: provider dropped pairs");
  double best = 0.0;
  for (const auto& s : scores) best = std::max(best, std::clamp((s.ab + s.ba) / 2.0, 0.0, 1.0));
  return {best, threshold_label(best, tau)};
}

double auroc(std::span<const double> confidences, std::span<const int> labels) {
  check_lengths(confidences, labels, "auroc");
  const auto order = ascending_order(confidences);
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t start = 0; start < order.size();) {
    std::size_t end = start;
    while (end < order.size() && confidences[order[end]] == confidences[order[start]]) ++end;
    // Ranks start..end-1 (1-based start+1..end) share their mean.
    const double mid_rank = (static_cast<double>(start + 1) + static_cast<double>(end)) / 2.0;
    for (std::size_t k = start; k < end; ++k) {
      if (labels[order[k]] == 1) {
        positive_rank_sum += mid_rank;
        ++positives;
      }
    }
    start = end;
  }
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0)
    throw UndefinedMetric("undefined AUROC: labels contain a single class (" + std::to_string(positives) +
                          " positive, " + std::to_string(negatives) + " negative)");
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

double auroc(std::span<const LabeledScore> scores) {
  const auto [c, l] = unzip(scores);
  return auroc(c, l);
}

double auarc(std::span<const double> confidences, std::span<const int> labels) {
  check_lengths(confidences, labels, "auarc");
  if (confidences.empty()) throw invalid_input("auarc: no scores");
  std::vector<std::size_t> order(confidences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return confidences[a] > confidences[b]; });
  double area = 0.0;
  std::size_t correct = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    correct += static_cast<std::size_t>(labels[order[k]]);
    area += static_cast<double>(correct) / static_cast<double>(k + 1);
  }
  return area / static_cast<double>(order.size());
}

double auarc(std::span<const LabeledScore> scores) {
  const auto [c, l] = unzip(scores);
  return auarc(c, l);
}

std::vector<double> equal_mass_upper_edges(std::span<const double> sorted_values, std::size_t bins) {
  const std::size_t n = sorted_values.size();
  if (n == 0) throw invalid_input("equal-mass binning: no values");
  if (bins < 1) throw invalid_input("equal-mass binning: need at least one bin");
  bins = std::min(bins, n);
  std::vector<double> edges;
  edges.reserve(bins - 1);
  for (std::size_t b = 1; b < bins; ++b) edges.push_back(sorted_values[b * n / bins - 1]);
  return edges;
}

std::size_t bin_of(std::span<const double> upper_edges, double value) {
  const auto it = std::lower_bound(upper_edges.begin(), upper_edges.end(), value);
  return static_cast<std::size_t>(it - upper_edges.begin());
}

CalibrationMap fit_histogram_binning(std::span<const double> confidences, std::span<const int> labels,
                                     std::size_t bins) {
  check_lengths(confidences, labels, "histogram binning");
  if (confidences.empty()) throw invalid_input("histogram binning: empty fit set");
  if (bins < 1) throw invalid_input("histogram binning: need at least one bin");
  if (bins > confidences.size()) {
    warn("histogram binning: " + std::to_string(bins) + " bins for " + std::to_string(confidences.size()) +
         " points, reduced to " + std::to_string(confidences.size()));
    bins = confidences.size();
  }
  std::vector<double> sorted(confidences.begin(), confidences.end());
  std::sort(sorted.begin(), sorted.end());

  CalibrationMap map;
  map.upper_edges = equal_mass_upper_edges(sorted, bins);
  map.bin_counts.assign(bins, 0);
  std::vector<std::size_t> positives(bins, 0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const auto b = bin_of(map.upper_edges, confidences[i]);
    ++map.bin_counts[b];
    positives[b] += static_cast<std::size_t>(labels[i]);
  }
  map.fit_count = confidences.size();
  map.bin_values.assign(bins, 0.0);
  for (std::size_t b = 0; b < bins; ++b)
    if (map.bin_counts[b]) map.bin_values[b] = static_cast<double>(positives[b]) / static_cast<double>(map.bin_counts[b]);
  // Empty bins (tied edges, or a last bin above every fit value) take the
  // value of the nearest populated bin below, else above.
  for (std::size_t b = 0; b < bins; ++b) {
    if (map.bin_counts[b]) continue;
    std::optional<std::size_t> src;
    for (std::size_t k = b; k-- > 0;)
      if (map.bin_counts[k]) {
        src = k;
        break;
      }
    if (!src)
      for (std::size_t k = b + 1; k < bins; ++k)
        if (map.bin_counts[k]) {
          src = k;
          break;
        }
    map.bin_values[b] = map.bin_values[*src];
  }
  return map;
}

double apply_calibration(const CalibrationMap& map, double confidence) {
  return map.bin_values.at(bin_of(map.upper_edges, confidence));
}

std::vector<double> apply_calibration(const CalibrationMap& map, std::span<const double> confidences) {
  std::vector<double> out;
  out.reserve(confidences.size());
  for (double c : confidences) out.push_back(apply_calibration(map, c));
  return out;
}

double ece(std::span<const double> calibrated, std::span<const int> labels, std::size_t bins) {
  check_lengths(calibrated, labels, "ece");
  if (calibrated.empty()) throw invalid_input("ece: no scores");
  const auto bin = self_binning(calibrated, bins);
  // Per bin, group equal values: the bin gap is |sum_g n_g (v_g - p_g / n_g)| / n_bin,
  // which is exactly 0 when each value is its group's accuracy.
  std::map<std::pair<std::size_t, double>, std::pair<std::size_t, std::size_t>> groups;
  for (std::size_t i = 0; i < calibrated.size(); ++i) {
    auto& g = groups[{bin[i], calibrated[i]}];
    ++g.first;
    g.second += static_cast<std::size_t>(labels[i]);
  }
  std::map<std::size_t, std::pair<double, std::size_t>> gaps;
  for (const auto& [key, g] : groups) {
    const double n_g = static_cast<double>(g.first);
    auto& gap = gaps[key.first];
    gap.first += n_g * (key.second - static_cast<double>(g.second) / n_g);
    gap.second += g.first;
  }
  double total = 0.0;
  const auto n = static_cast<double>(calibrated.size());
  for (const auto& [b, gap] : gaps)
    total += static_cast<double>(gap.second) / n * std::abs(gap.first / static_cast<double>(gap.second));
  return total;
}

double rce(std::span<const double> confidences, std::span<const int> labels, std::size_t bins) {
  check_lengths(confidences, labels, "rce");
  if (confidences.empty()) throw invalid_input("rce: no scores");
  if (bins < 2) throw invalid_input("rce: need at least two bins");
  const auto bin = self_binning(confidences, bins);
  const std::size_t nbins = *std::max_element(bin.begin(), bin.end()) + 1;
  std::vector<std::size_t> count(nbins, 0), positives(nbins, 0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    ++count[bin[i]];
    positives[bin[i]] += static_cast<std::size_t>(labels[i]);
  }
  std::vector<double> reg;
  reg.reserve(confidences.size());
  for (auto b : bin) reg.push_back(static_cast<double>(positives[b]) / static_cast<double>(count[b]));

  const auto reg_upper = upper_half_counts(reg);
  const auto conf_upper = upper_half_counts(confidences);
  double total = 0.0;
  for (std::size_t i = 0; i < confidences.size(); ++i) total += std::abs(reg_upper[i] - conf_upper[i]);
  const auto n = static_cast<double>(confidences.size());
  return total / n / n;
}

std::vector<std::pair<double, double>> roc_points(std::span<const double> confidences, std::span<const int> labels) {
  check_lengths(confidences, labels, "roc_points");
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) throw UndefinedMetric("undefined ROC: labels contain a single class");
  std::vector<std::size_t> order(confidences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return confidences[a] > confidences[b]; });
  std::vector<std::pair<long long, long long>> vertices{{0, 0}};
  long long fp = 0, tp = 0;
  for (std::size_t start = 0; start < order.size();) {
    std::size_t end = start;
    while (end < order.size() && confidences[order[end]] == confidences[order[start]]) {
      if (labels[order[end]] == 1) ++tp; else ++fp;
      ++end;
    }
    // Drop the previous vertex when it lies on the segment to the new one.
    if (vertices.size() >= 2) {
      const auto [x0, y0] = vertices[vertices.size() - 2];
      const auto [x1, y1] = vertices.back();
      if ((x1 - x0) * (tp - y0) == (y1 - y0) * (fp - x0)) vertices.pop_back();
    }
    vertices.emplace_back(fp, tp);
    start = end;
  }
  std::vector<std::pair<double, double>> out;
  out.reserve(vertices.size());
  for (const auto& [x, y] : vertices)
    out.emplace_back(static_cast<double>(x) / static_cast<double>(negatives),
                     static_cast<double>(y) / static_cast<double>(positives));
  return out;
}

std::vector<LabeledScore> exclusion_filter(std::span<const ScoredUnit> units, PipelineMode mode) {
  const auto keep = mode == PipelineMode::mcqa_eval ? ScoredOrigin::injected_option : ScoredOrigin::sampled_response;
  std::vector<LabeledScore> out;
  for (const auto& u : units)
    if (u.origin == keep) out.push_back(u.score);
  return out;
}

CalibrationSplit half_split(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  SplitMix64 rng(seed);
  shuffle(std::span(order), rng);
  const std::size_t fit_size = (n + 1) / 2;
  CalibrationSplit split;
  split.fit.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(fit_size));
  split.eval.assign(order.begin() + static_cast<std::ptrdiff_t>(fit_size), order.end());
  std::sort(split.fit.begin(), split.fit.end());
  std::sort(split.eval.begin(), split.eval.end());
  return split;
}

}  // namespace mcqa
