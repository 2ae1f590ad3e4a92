#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mcqa/dataset.hpp"
#include "mcqa/similarity.hpp"

namespace mcqa {

// One scored unit with its binary correctness. `index` is an option index
// (MCQA evaluation) or a sampled-response index (baseline pipeline).
struct LabeledScore {
  std::string item_id;
  std::size_t index = 0;
  std::string method;
  double confidence = 0.0;
  int correctness = 0;
  std::optional<double> continuous;  // similarity before thresholding, if any
};

// label[i] = 1 iff i is the correct option.
std::vector<int> gold_labels(const McqItem& item);

struct SimilarityLabel {
  double similarity = 0.0;
  int label = 0;
};

// max over refs of the symmetrized provider score; label = sim > tau.
SimilarityLabel similarity_correctness(const std::string& response, std::span<const std::string> refs, double tau,
                                       SimilarityProvider& provider, const std::optional<std::string>& context);

inline int threshold_label(double similarity, double tau) { return similarity > tau ? 1 : 0; }

// Mann-Whitney AUROC with mid-rank ties. Throws UndefinedMetric when only one
// class is present.
double auroc(std::span<const LabeledScore> scores);
double auroc(std::span<const double> confidences, std::span<const int> labels);

// Area under the accuracy-rejection curve: mean over k = 1..N of the accuracy
// of the k most confident units (stable order for ties).
double auarc(std::span<const double> confidences, std::span<const int> labels);
double auarc(std::span<const LabeledScore> scores);

// Equal-mass bins over sorted values; tied values never straddle a bin
// boundary. Returns the upper value of each bin except the last.
std::vector<double> equal_mass_upper_edges(std::span<const double> sorted_values, std::size_t bins);
std::size_t bin_of(std::span<const double> upper_edges, double value);

struct CalibrationMap {
  std::vector<double> upper_edges;   // size bins - 1, non-decreasing
  std::vector<double> bin_values;    // empirical correctness rate per bin
  std::vector<std::size_t> bin_counts;
  std::size_t fit_count = 0;
  std::optional<std::uint64_t> split_seed;

  std::size_t bins() const { return bin_values.size(); }
};

CalibrationMap fit_histogram_binning(std::span<const double> confidences, std::span<const int> labels,
                                     std::size_t bins);
double apply_calibration(const CalibrationMap& map, double confidence);
std::vector<double> apply_calibration(const CalibrationMap& map, std::span<const double> confidences);

// Expected calibration error over equal-mass bins of the (calibrated)
// confidences: sum_b n_b / N * |acc_b - conf_b|.
double ece(std::span<const double> calibrated, std::span<const int> labels, std::size_t bins);

// Rank calibration error. reg(c) is the mean correctness of c's equal-mass
// bin; RCE = mean_i |P(reg' >= reg_i) - P(c' >= c_i)|, ties counted at half
// weight (the sample itself included).
double rce(std::span<const double> confidences, std::span<const int> labels, std::size_t bins);

// ROC vertices (FPR, TPR) from (0,0) to (1,1), collinear points removed.
std::vector<std::pair<double, double>> roc_points(std::span<const double> confidences, std::span<const int> labels);

enum class ScoredOrigin { injected_option, sampled_response };

struct ScoredUnit {
  LabeledScore score;
  ScoredOrigin origin = ScoredOrigin::injected_option;
};

enum class PipelineMode { mcqa_eval, baseline };

// MCQA evaluation keeps only injected options; the baseline pipeline keeps
// only sampled responses.
std::vector<LabeledScore> exclusion_filter(std::span<const ScoredUnit> units, PipelineMode mode);

struct CalibrationSplit {
  std::vector<std::size_t> fit;
  std::vector<std::size_t> eval;
};

// Seeded 50/50 split (fit gets the extra element for odd N).
CalibrationSplit half_split(std::size_t n, std::uint64_t seed);

}  // namespace mcqa
