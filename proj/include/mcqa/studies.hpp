#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcqa/metrics.hpp"

namespace mcqa {

struct RankedCell {
  std::string method;           // method id
  std::optional<double> value;  // absent: undefined
};

// One ranking row; black-box and white-box methods are ranked separately.
struct RankingRow {
  std::string label;  // tau, or "N/A"
  std::vector<RankedCell> blackbox;
  std::vector<RankedCell> whitebox;
};

struct RankingTable {
  std::string metric = "auroc";
  std::vector<RankingRow> rows;
};

// Value descending, then method label ascending; undefined values last.
std::vector<RankedCell> rank_cells(std::vector<RankedCell> cells);

// AUROC ranking of every method in `scores`, using their `correctness`.
RankingRow rank_by_auroc(std::span<const LabeledScore> scores, const std::string& label);

// Relabels by continuous > tau and ranks per tau. Every score needs `continuous`.
RankingTable threshold_sweep(std::span<const LabeledScore> scores, std::span<const double> taus);

// Ranking table: rows tau, columns rank 1..k, black-box then white-box block.
// Each section is a list of (row group name, table).
std::string ranking_markdown(const std::vector<std::pair<std::string, RankingTable>>& groups);

std::string format_tau(double tau);

// Kendall tau-a between two rankings of the same items (no ties).
double kendall_tau(std::span<const std::string> a, std::span<const std::string> b);

struct NoiseStudyConfig {
  std::vector<double> sigmas{0.0, 0.5, 1.0, 2.0, 5.0};
  std::vector<std::uint64_t> seeds;  // default 0..99
  double delta = 1e-6;
  double threshold = 0.5;

  NoiseStudyConfig();
  void validate() const;
};

// sigmoid(logit(clamp(f, delta, 1 - delta)) + eps), eps ~ N(0, sigma^2) drawn
// from SplitMix64 keyed by (seed, sigma).
std::vector<double> noisy_correctness(std::span<const double> f, double sigma, std::uint64_t seed, double delta);

struct NoiseRun {
  double sigma = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::optional<double>> auroc;  // per method
  std::vector<std::string> ranking;          // noisy ranking, empty if undefined
  std::optional<double> kendall_tau;
};

struct NoiseSummary {
  double sigma = 0.0;
  std::size_t n_defined = 0;
  double mean_kendall_tau = 0.0;
  double standard_error = 0.0;
};

struct NoiseStudyResult {
  std::vector<std::string> methods;
  std::vector<std::optional<double>> clean_auroc;
  std::vector<std::string> clean_ranking;
  std::vector<NoiseRun> runs;
  std::vector<NoiseSummary> summary;
  double delta = 0.0;
  double threshold = 0.0;
};

// `confidences[m][u]` is method m's confidence for unit u; `continuous[u]`
// is the unit's correctness in [0,1]. Clean labels go through the same
// clamp/logit/sigmoid path with eps = 0.
NoiseStudyResult noise_study(std::span<const double> continuous, std::span<const std::string> methods,
                             const std::vector<std::vector<double>>& confidences, const NoiseStudyConfig& cfg);

// Aligns labeled scores into noise-study inputs: one unit per (item, index),
// each needing a `continuous` value and a score from every method present.
struct NoiseInputs {
  std::vector<double> continuous;
  std::vector<std::string> methods;
  std::vector<std::vector<double>> confidences;
};
NoiseInputs noise_inputs(std::span<const LabeledScore> scores);

}  // namespace mcqa
