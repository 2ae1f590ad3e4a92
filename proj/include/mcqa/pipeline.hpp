#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcqa/blackbox.hpp"
#include "mcqa/dataset.hpp"
#include "mcqa/gateway.hpp"
#include "mcqa/methods.hpp"
#include "mcqa/metrics.hpp"
#include "mcqa/studies.hpp"

namespace mcqa {

inline constexpr int kRunConfigSchemaVersion = 1;
inline constexpr int kReportSchemaVersion = 1;

enum class SplitMode { half, full };
enum class CorrectnessSource { similarity, judge };

std::string_view to_string(PipelineMode mode);
PipelineMode pipeline_mode_from_string(std::string_view name);

// Where similarity scores of one kind come from. "precomputed" reads
// <dir>/<item_id>.<kind>.mat whose rows are the item's samples then options.
struct ProviderSpec {
  std::string provider = "jaccard";  // jaccard | precomputed | sidecar
  std::filesystem::path dir;
  std::string endpoint;
};

struct MetricConfig {
  std::size_t calibration_bins = 10;
  std::size_t ece_bins = 10;
  std::size_t rce_bins = 20;
  SplitMode split = SplitMode::half;
  std::uint64_t split_seed = 0;
};

struct RunConfig {
  PipelineMode mode = PipelineMode::mcqa_eval;
  std::filesystem::path dataset_path;
  std::string dataset_schema;  // known dataset name or empty
  std::string dataset_name;
  std::optional<std::size_t> subsample_n;
  std::uint64_t subsample_seed = 42;
  std::string template_name = "default";
  std::optional<std::filesystem::path> template_file;
  GenerationConfig generation;
  std::filesystem::path records_dir;
  std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};
  std::map<SimilarityKind, ProviderSpec> similarity;
  SimilarityKind token_sar_similarity = SimilarityKind::nli_entailment;
  SpectralConfig spectral;
  MetricConfig metrics;
  std::vector<double> tau;
  CorrectnessSource correctness = CorrectnessSource::similarity;
  SimilarityKind correctness_similarity = SimilarityKind::jaccard;
  std::filesystem::path output_dir;
  double failure_threshold = 0.01;

  void validate() const;
  bool uses(Method m) const;
  const ProviderSpec& provider_for(SimilarityKind kind) const;
};

// Relative paths are resolved against `base_dir`. Unknown keys are errors.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

struct ItemFailure {
  std::string item_id;
  std::string message;
};

// Everything scored in one run, before metrics.
struct ScoreSet {
  PipelineMode mode = PipelineMode::mcqa_eval;
  std::string dataset;
  std::size_t n_items = 0;
  std::vector<std::string> scored_items;
  // Ordered by method (kAllMethods order), item order, index. In baseline
  // mode `continuous` holds the similarity to the gold option and
  // `correctness` is assigned per tau at evaluation time (judge mode sets it).
  std::vector<LabeledScore> scores;
  std::map<Method, std::string> unavailable;
  std::map<std::string, std::size_t> exclusions;  // reason -> count of units
  std::vector<ItemFailure> failures;
  // Where scores came from, e.g. attention channel ids and P(true) modes seen.
  std::map<std::string, std::vector<std::string>> provenance;
};

// Runs the model-facing part: sampling, candidate scoring, P(true), and
// confidence computation for every method. Concurrency is bounded by
// generation.concurrency_limit; the result does not depend on scheduling.
ScoreSet score_items(const RunConfig& cfg, std::span<const McqItem> items, Gateway& gateway);

struct MethodResult {
  Method method = Method::deg_j;
  std::optional<double> tau;
  std::string status = "ok";  // ok | undefined | unavailable
  std::string note;
  std::optional<double> auroc, auarc, ece, rce;
  std::size_t n_scored = 0;
  std::size_t n_excluded = 0;
  std::vector<std::pair<double, double>> roc;
};

struct MetricReport {
  PipelineMode mode = PipelineMode::mcqa_eval;
  std::string dataset;
  std::string model;
  std::string config_digest;
  // Echo of everything that shaped the numbers: generation fields covered by
  // the digest, metric/bin settings, spectral settings, providers, taus.
  nlohmann::json settings;
  std::size_t n_items = 0;
  std::size_t n_scored_items = 0;
  std::vector<ItemFailure> failures;
  std::map<std::string, std::size_t> exclusions;
  std::vector<MethodResult> results;
  RankingTable ranking;  // AUROC ranking; one row per tau in baseline mode
};

MetricReport evaluate(const RunConfig& cfg, const ScoreSet& set);

nlohmann::json report_to_json(const MetricReport& r);
MetricReport report_from_json(const nlohmann::json& j);

nlohmann::json labeled_score_to_json(const LabeledScore& s);
LabeledScore labeled_score_from_json(const nlohmann::json& j);
// One labeled_score_to_json object per line.
std::vector<LabeledScore> read_labeled_scores(const std::filesystem::path& path);

struct RunOutcome {
  MetricReport report;
  ScoreSet scores;
  int exit_code = 0;  // 0 ok, 3 too many item failures, 4 method unavailable
};

// Load, subsample, score, evaluate and write every artifact into
// cfg.output_dir (under a lock file).
RunOutcome run_pipeline(const RunConfig& cfg, std::shared_ptr<Backend> backend);

// Load and subsample the configured dataset.
std::vector<McqItem> load_items(const RunConfig& cfg);
// Name used for the record store and the report.
std::string dataset_label(const RunConfig& cfg, std::span<const McqItem> items);

// scores.jsonl ({item_id, option_index | response_index, method, confidence}),
// labeled_scores.jsonl and score_meta.json.
void write_score_set(const ScoreSet& set, const std::filesystem::path& dir);
ScoreSet read_score_set(const std::filesystem::path& dir);

// Exclusive lock on <dir>/.lock for the lifetime of the object.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  int fd_ = -1;
};

// 3 if failures exceed the threshold, else 4 if a method is unavailable, else 0.
int exit_code_for(const RunConfig& cfg, const ScoreSet& set);

}  // namespace mcqa
