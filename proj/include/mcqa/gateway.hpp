#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mcqa/http.hpp"
#include "mcqa/record.hpp"
#include "mcqa/similarity.hpp"

namespace mcqa {

enum class BackendType { openai_compatible, sidecar, replay };
std::string_view to_string(BackendType type);
BackendType backend_type_from_string(std::string_view name);

enum class PTrueMode { logprob, sampling };
std::string_view to_string(PTrueMode mode);
PTrueMode p_true_mode_from_string(std::string_view name);

struct GenerationConfig {
  BackendType backend = BackendType::replay;
  std::string endpoint;
  std::string model;
  std::size_t n_samples = 20;
  std::optional<double> temperature;  // absent: backend default
  std::size_t max_tokens = 64;
  std::vector<std::string> stop{"\n"};
  std::optional<std::int64_t> request_seed;
  std::size_t concurrency_limit = 4;
  RetryPolicy retry;
  PTrueMode p_true_mode = PTrueMode::logprob;
  std::size_t p_true_samples = 10;

  void validate() const;
  // SHA-256 over the fields that change what the model is asked. Backend
  // type, endpoint, concurrency and retries are excluded so a replay run
  // finds the records of the live run.
  std::string digest() const;
};

void to_json(nlohmann::json& j, const GenerationConfig& c);
// The fields covered by digest(), as a JSON object.
nlohmann::json digest_fields(const GenerationConfig& c);
void from_json(const nlohmann::json& j, GenerationConfig& c);

enum class RecordKind { samples, candidate_logprobs, p_true, judge };
std::string_view to_string(RecordKind kind);
RecordKind record_kind_from_string(std::string_view name);

struct RecordEntry {
  std::string item_id;
  std::string prompt_sha256;
  std::string config_digest;
  RecordKind kind = RecordKind::samples;
  nlohmann::json payload;
  std::int64_t created_at_unix_ms = 0;
};

nlohmann::json entry_to_json(const RecordEntry& e);
RecordEntry entry_from_json(const nlohmann::json& j);

// Append-only line-delimited store, one file per (dataset, model, config
// digest) plus an index.json describing every file in the directory.
// Appends are serialized and flushed to disk before append() returns.
class RecordStore {
 public:
  using Clock = std::function<std::int64_t()>;

  RecordStore(std::filesystem::path dir, std::string dataset, const GenerationConfig& cfg, Clock clock = {});

  const std::filesystem::path& file() const { return file_; }
  const std::string& config_digest() const { return digest_; }

  // `discriminator` separates entries sharing item and prompt, e.g. the
  // candidate text and channel for candidate_logprobs.
  std::optional<RecordEntry> find(RecordKind kind, const std::string& item_id, const std::string& prompt_sha256,
                                  const std::string& discriminator = {}) const;
  RecordEntry append(RecordKind kind, const std::string& item_id, const std::string& prompt_sha256,
                     nlohmann::json payload, const std::string& discriminator = {});
  std::vector<RecordEntry> entries() const;
  std::size_t size() const;

  static std::string file_name(const std::string& dataset, const std::string& model, const std::string& digest);

 private:
  static std::string key(RecordKind kind, const std::string& item_id, const std::string& prompt_sha256,
                         const std::string& discriminator);
  void update_index(const GenerationConfig& cfg) const;

  std::filesystem::path dir_;
  std::filesystem::path file_;
  std::string dataset_;
  std::string model_;
  std::string digest_;
  Clock clock_;
  mutable std::mutex mutex_;
  std::vector<RecordEntry> entries_;
  std::map<std::string, std::size_t> by_key_;
};

// Model backend. Unsupported operations throw a capability error naming the backend.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string identity() const = 0;
  virtual std::vector<SampledResponse> generate(const std::string& prompt, std::size_t n, std::size_t max_tokens,
                                                const GenerationConfig& cfg) = 0;
  // Teacher-forced logprobs of `completion` after `prompt`; `channel` asks for
  // attention weights pooled as named.
  virtual TokenLogprobSeq score_completion(const std::string& prompt, const std::string& completion,
                                           const std::optional<std::string>& channel, const GenerationConfig& cfg) = 0;
  // Next-token log-probabilities of the "True" and "False" surface forms.
  virtual std::pair<double, double> true_false_logprobs(const std::string& prompt, const GenerationConfig& cfg) = 0;
};

// OpenAI-compatible chat/completions. No teacher forcing.
class OpenAIBackend final : public Backend {
 public:
  OpenAIBackend(const GenerationConfig& cfg, std::string api_key);
  std::string identity() const override;
  std::vector<SampledResponse> generate(const std::string& prompt, std::size_t n, std::size_t max_tokens,
                                        const GenerationConfig& cfg) override;
  TokenLogprobSeq score_completion(const std::string& prompt, const std::string& completion,
                                   const std::optional<std::string>& channel, const GenerationConfig& cfg) override;
  std::pair<double, double> true_false_logprobs(const std::string& prompt, const GenerationConfig& cfg) override;
  JsonClient& client() { return client_; }

 private:
  JsonClient client_;
  std::string model_;
};

// The sidecar scoring service: /v1/generate, /v1/logprobs, /v1/similarity, /health.
class SidecarBackend final : public Backend {
 public:
  explicit SidecarBackend(const GenerationConfig& cfg);
  std::string identity() const override;
  std::vector<SampledResponse> generate(const std::string& prompt, std::size_t n, std::size_t max_tokens,
                                        const GenerationConfig& cfg) override;
  TokenLogprobSeq score_completion(const std::string& prompt, const std::string& completion,
                                   const std::optional<std::string>& channel, const GenerationConfig& cfg) override;
  std::pair<double, double> true_false_logprobs(const std::string& prompt, const GenerationConfig& cfg) override;
  nlohmann::json health();
  JsonClient& client() { return client_; }

 private:
  JsonClient client_;
  std::string model_;
};

// NLI similarity from the sidecar. Each pair is sent in both directions;
// requests carry at most kMaxPairsPerRequest directional pairs.
class SidecarNliProvider final : public SimilarityProvider {
 public:
  static constexpr std::size_t kMaxPairsPerRequest = 256;

  SidecarNliProvider(const std::string& endpoint, SimilarityKind kind, RetryPolicy retry = {});
  SimilarityKind kind() const override { return kind_; }
  std::string identity() const override;
  std::vector<PairScore> score_pairs(const std::optional<std::string>& context,
                                     std::span<const TextPair> pairs) override;
  JsonClient& client() { return client_; }

 private:
  JsonClient client_;
  SimilarityKind kind_;
};

// Backend for cfg.backend; nullptr for replay. Reads MCQA_EVAL_API_KEY.
std::shared_ptr<Backend> make_backend(const GenerationConfig& cfg);

// Strips "▁"/"Ġ" word markers (as spaces) and "Ċ" (as newline), then compares
// with leading whitespace ignored on both sides.
std::string detokenize(const TokenLogprobSeq& seq);
bool detokenizes_to(const TokenLogprobSeq& seq, std::string_view candidate);

std::string p_true_prompt(const std::string& question, const std::string& candidate,
                          std::span<const std::string> samples);
std::string judge_prompt(const std::string& question, const std::string& response, const std::string& gold);

struct PTrueResult {
  double probability = 0.0;
  PTrueMode mode = PTrueMode::logprob;
  std::vector<std::string> continuations;  // sampling mode only
};

// p(True) / (p(True) + p(False)), computed without overflow.
double normalize_true_false(double logprob_true, double logprob_false);
// Fraction of continuations whose first word is "true" (case-insensitive).
double true_frequency(std::span<const std::string> continuations);

enum class Verdict { incorrect = 0, correct = 1, indeterminate = 2 };
std::string_view to_string(Verdict v);
// Affirmative / negative allowlists over the first word of the reply.
Verdict parse_verdict(std::string_view reply);

// All model interaction goes through here. Every value is persisted to the
// store before it is returned, and stored values are reused instead of
// calling the backend again. A null backend means replay: a missing record
// is a replay_miss error.
class Gateway {
 public:
  Gateway(GenerationConfig cfg, RecordStore& store, std::shared_ptr<Backend> backend);

  const GenerationConfig& config() const { return cfg_; }
  bool replay() const { return backend_ == nullptr; }
  std::string backend_identity() const;

  std::vector<SampledResponse> sample_responses(const std::string& item_id, const std::string& prompt);
  TokenLogprobSeq score_candidate(const std::string& item_id, const std::string& prompt, const std::string& candidate,
                                  const std::optional<std::string>& channel = std::nullopt);
  PTrueResult elicit_p_true(const std::string& item_id, const std::string& question, const std::string& candidate,
                            std::span<const std::string> samples);
  Verdict judge_correctness(const std::string& item_id, const std::string& question, const std::string& response,
                            const std::string& gold);

 private:
  [[noreturn]] void replay_miss(RecordKind kind, const std::string& item_id) const;

  GenerationConfig cfg_;
  RecordStore& store_;
  std::shared_ptr<Backend> backend_;
};

}  // namespace mcqa
