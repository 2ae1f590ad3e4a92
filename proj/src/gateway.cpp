#include "mcqa/gateway.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "mcqa/error.hpp"
#include "mcqa/text.hpp"

namespace mcqa {

namespace {

std::int64_t system_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

// First whitespace-delimited word, ASCII letters and digits only, lower-cased.
std::string first_word(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  std::string out;
  for (; i < s.size() && !std::isspace(static_cast<unsigned char>(s[i])); ++i) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (std::isalnum(c)) out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

std::string sanitize(std::string_view s) {
  std::string out;
  for (char c : s) out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_');
  return out.empty() ? "_" : out;
}

std::mutex& index_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

std::string_view to_string(BackendType type) {
  switch (type) {
    case BackendType::openai_compatible: return "openai_compatible";
    case BackendType::sidecar: return "sidecar";
    case BackendType::replay: return "replay";
  }
  return "?";
}

BackendType backend_type_from_string(std::string_view name) {
  if (name == "openai_compatible") return BackendType::openai_compatible;
  if (name == "sidecar") return BackendType::sidecar;
  if (name == "replay") return BackendType::replay;
  throw config_error("unknown backend: " + std::string(name));
}

std::string_view to_string(PTrueMode mode) { return mode == PTrueMode::logprob ? "logprob" : "sampling"; }

PTrueMode p_true_mode_from_string(std::string_view name) {
  if (name == "logprob") return PTrueMode::logprob;
  if (name == "sampling") return PTrueMode::sampling;
  throw config_error("unknown p_true mode: " + std::string(name));
}

void GenerationConfig::validate() const {
  if (n_samples < 1) throw config_error("n_samples must be >= 1");
  if (concurrency_limit < 1) throw config_error("concurrency_limit must be >= 1");
  if (max_tokens < 1) throw config_error("max_tokens must be >= 1");
  if (p_true_samples < 1) throw config_error("p_true_samples must be >= 1");
  if (model.empty()) throw config_error("model must be set");
  if (temperature && (!std::isfinite(*temperature) || *temperature < 0)) throw config_error("temperature must be >= 0");
  if (backend != BackendType::replay && endpoint.empty()) throw config_error("endpoint must be set for a live backend");
  retry.validate();
}

nlohmann::json digest_fields(const GenerationConfig& c) {
  return {{"model", c.model},
          {"n_samples", c.n_samples},
          {"temperature", c.temperature ? nlohmann::json(*c.temperature) : nlohmann::json()},
          {"max_tokens", c.max_tokens},
          {"stop", c.stop},
          {"request_seed", c.request_seed ? nlohmann::json(*c.request_seed) : nlohmann::json()},
          {"p_true_mode", to_string(c.p_true_mode)},
          {"p_true_samples", c.p_true_samples}};
}

std::string GenerationConfig::digest() const { return sha256_hex(digest_fields(*this).dump()); }

void to_json(nlohmann::json& j, const GenerationConfig& c) {
  j = nlohmann::json{{"backend", to_string(c.backend)},
                     {"endpoint", c.endpoint},
                     {"model", c.model},
                     {"n_samples", c.n_samples},
                     {"temperature", c.temperature ? nlohmann::json(*c.temperature) : nlohmann::json()},
                     {"max_tokens", c.max_tokens},
                     {"stop", c.stop},
                     {"request_seed", c.request_seed ? nlohmann::json(*c.request_seed) : nlohmann::json()},
                     {"concurrency_limit", c.concurrency_limit},
                     {"retry", {{"max_attempts", c.retry.max_attempts}, {"backoff_base_ms", c.retry.backoff_base_ms}}},
                     {"p_true_mode", to_string(c.p_true_mode)},
                     {"p_true_samples", c.p_true_samples}};
}

void from_json(const nlohmann::json& j, GenerationConfig& c) {
  static const std::array<std::string_view, 12> known{"backend",      "endpoint",          "model",      "n_samples",
                                                      "temperature",  "max_tokens",        "stop",       "request_seed",
                                                      "concurrency_limit", "retry", "p_true_mode", "p_true_samples"};
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw config_error("unknown generation field: " + k);
  GenerationConfig d;
  c = d;
  try {
    if (j.contains("backend")) c.backend = backend_type_from_string(j["backend"].get<std::string>());
    c.endpoint = j.value("endpoint", d.endpoint);
    c.model = j.value("model", d.model);
    c.n_samples = j.value("n_samples", d.n_samples);
    if (j.contains("temperature") && !j["temperature"].is_null()) c.temperature = j["temperature"].get<double>();
    c.max_tokens = j.value("max_tokens", d.max_tokens);
    if (j.contains("stop")) c.stop = j["stop"].get<std::vector<std::string>>();
    if (j.contains("request_seed") && !j["request_seed"].is_null()) c.request_seed = j["request_seed"].get<std::int64_t>();
    c.concurrency_limit = j.value("concurrency_limit", d.concurrency_limit);
    if (j.contains("retry")) {
      c.retry.max_attempts = j["retry"].value("max_attempts", d.retry.max_attempts);
      c.retry.backoff_base_ms = j["retry"].value("backoff_base_ms", d.retry.backoff_base_ms);
    }
    if (j.contains("p_true_mode")) c.p_true_mode = p_true_mode_from_string(j["p_true_mode"].get<std::string>());
    c.p_true_samples = j.value("p_true_samples", d.p_true_samples);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("generation config: ") + e.what());
  }
}

std::string_view to_string(RecordKind kind) {
  switch (kind) {
    case RecordKind::samples: return "samples";
    case RecordKind::candidate_logprobs: return "candidate_logprobs";
    case RecordKind::p_true: return "p_true";
    case RecordKind::judge: return "judge";
  }
  return "?";
}

RecordKind record_kind_from_string(std::string_view name) {
  if (name == "samples") return RecordKind::samples;
  if (name == "candidate_logprobs") return RecordKind::candidate_logprobs;
  if (name == "p_true") return RecordKind::p_true;
  if (name == "judge") return RecordKind::judge;
  throw invalid_input("unknown record kind: " + std::string(name));
}

nlohmann::json entry_to_json(const RecordEntry& e) {
  return nlohmann::json{{"item_id", e.item_id},
                        {"prompt_sha256", e.prompt_sha256},
                        {"config_digest", e.config_digest},
                        {"kind", to_string(e.kind)},
                        {"payload", e.payload},
                        {"created_at_unix_ms", e.created_at_unix_ms}};
}

RecordEntry entry_from_json(const nlohmann::json& j) {
  RecordEntry e;
  e.item_id = j.at("item_id").get<std::string>();
  e.prompt_sha256 = j.at("prompt_sha256").get<std::string>();
  e.config_digest = j.at("config_digest").get<std::string>();
  e.kind = record_kind_from_string(j.at("kind").get<std::string>());
  e.payload = j.at("payload");
  e.created_at_unix_ms = j.at("created_at_unix_ms").get<std::int64_t>();
  return e;
}

std::string RecordStore::file_name(const std::string& dataset, const std::string& model, const std::string& digest) {
  return sanitize(dataset) + "." + sanitize(model) + "." + digest.substr(0, 16) + ".jsonl";
}

std::string RecordStore::key(RecordKind kind, const std::string& item_id, const std::string& prompt_sha256,
                             const std::string& discriminator) {
  std::string k(to_string(kind));
  k += '\x1f';
  k += item_id;
  k += '\x1f';
  k += prompt_sha256;
  k += '\x1f';
  k += discriminator;
  return k;
}

RecordStore::RecordStore(std::filesystem::path dir, std::string dataset, const GenerationConfig& cfg, Clock clock)
    : dir_(std::move(dir)),
      dataset_(std::move(dataset)),
      model_(cfg.model),
      digest_(cfg.digest()),
      clock_(clock ? std::move(clock) : Clock(system_clock_ms)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw invalid_input("cannot create record directory " + dir_.string() + ": " + ec.message());
  file_ = dir_ / file_name(dataset_, model_, digest_);

  std::ifstream in(file_, std::ios::binary);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    RecordEntry e;
    try {
      e = entry_from_json(nlohmann::json::parse(line));
    } catch (const std::exception& ex) {
      if (in.peek() == std::char_traits<char>::eof()) {
        // A write cut off by a crash; nothing after it was returned to a caller.
        warn(file_.string() + ":" + std::to_string(lineno) + ": ignoring truncated final record");
        break;
      }
      throw invalid_input(file_.string() + ":" + std::to_string(lineno) + ": bad record: " + ex.what());
    }
    if (e.config_digest != digest_)
      throw invalid_input(file_.string() + ":" + std::to_string(lineno) + ": record has a foreign config digest");
    std::string disc;
    if (e.kind == RecordKind::candidate_logprobs)
      disc = e.payload.value("candidate", "") + '\x1f' + e.payload.value("channel", "");
    by_key_[key(e.kind, e.item_id, e.prompt_sha256, disc)] = entries_.size();
    entries_.push_back(std::move(e));
  }
  update_index(cfg);
}

void RecordStore::update_index(const GenerationConfig& cfg) const {
  std::lock_guard lock(index_mutex());
  const auto index_path = dir_ / "index.json";
  nlohmann::json index = nlohmann::json::object();
  if (std::ifstream in(index_path); in) {
    try {
      index = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw invalid_input(index_path.string() + ": " + e.what());
    }
  }
  const nlohmann::json desc{
      {"dataset", dataset_}, {"model", model_}, {"config_digest", digest_}, {"config", digest_fields(cfg)}};
  const auto name = file_.filename().string();
  if (index.contains("files") && index["files"].contains(name) && index["files"][name] == desc) return;
  index["files"][name] = desc;
  index["schema_version"] = 1;
  const auto tmp = index_path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << index.dump(2) << '\n';
    if (!out) throw invalid_input("cannot write " + tmp);
  }
  std::filesystem::rename(tmp, index_path);
}

std::optional<RecordEntry> RecordStore::find(RecordKind kind, const std::string& item_id,
                                             const std::string& prompt_sha256, const std::string& discriminator) const {
  std::lock_guard lock(mutex_);
  auto it = by_key_.find(key(kind, item_id, prompt_sha256, discriminator));
  if (it == by_key_.end()) return std::nullopt;
  return entries_[it->second];
}

RecordEntry RecordStore::append(RecordKind kind, const std::string& item_id, const std::string& prompt_sha256,
                                nlohmann::json payload, const std::string& discriminator) {
  RecordEntry e{item_id, prompt_sha256, digest_, kind, std::move(payload), clock_()};
  const std::string line = entry_to_json(e).dump() + "\n";
  std::lock_guard lock(mutex_);
  std::FILE* f = std::fopen(file_.c_str(), "ab");
  if (!f) throw invalid_input("cannot open record file " + file_.string());
  const bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size() && std::fflush(f) == 0 &&
                  ::fsync(fileno(f)) == 0;
  std::fclose(f);
  if (!ok) throw invalid_input("cannot append to record file " + file_.string());
  by_key_[key(kind, item_id, prompt_sha256, discriminator)] = entries_.size();
  entries_.push_back(e);
  return e;
}

std::vector<RecordEntry> RecordStore::entries() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

std::size_t RecordStore::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::string detokenize(const TokenLogprobSeq& seq) {
  std::string joined;
  for (const auto& t : seq.tokens) joined += t.text;
  std::string out;
  for (std::size_t i = 0; i < joined.size();) {
    if (joined.compare(i, 3, "\xE2\x96\x81") == 0) {  // U+2581
      out.push_back(' ');
      i += 3;
    } else if (joined.compare(i, 2, "\xC4\xA0") == 0) {  // U+0120
      out.push_back(' ');
      i += 2;
    } else if (joined.compare(i, 2, "\xC4\x8A") == 0) {  // U+010A
      out.push_back('\n');
      i += 2;
    } else {
      out.push_back(joined[i++]);
    }
  }
  return out;
}

bool detokenizes_to(const TokenLogprobSeq& seq, std::string_view candidate) {
  auto ltrim = [](std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    return s;
  };
  const auto text = detokenize(seq);
  return ltrim(text) == ltrim(candidate);
}

std::string p_true_prompt(const std::string& question, const std::string& candidate,
                          std::span<const std::string> samples) {
  std::string out = "Question: " + question + "\n";
  if (!samples.empty()) {
    out += "Here are some brainstormed ideas:\n";
    for (const auto& s : samples) out += s + "\n";
  }
  out += "Possible Answer: " + candidate + "\n";
  out += "Is the possible answer:\n (A) True\n (B) False\nThe possible answer is:";
  return out;
}

std::string judge_prompt(const std::string& question, const std::string& response, const std::string& gold) {
  return "Question: " + question + "\nReference answer: " + gold + "\nProposed answer: " + response +
         "\nDoes the proposed answer mean the same as the reference answer? Reply with Yes or No only.\nReply:";
}

double normalize_true_false(double lt, double lf) {
  if (std::isinf(lt) && std::isinf(lf)) throw Error(ErrorKind::backend, "neither True nor False has a logprob");
  if (std::isinf(lf)) return 1.0;
  if (std::isinf(lt)) return 0.0;
  return 1.0 / (1.0 + std::exp(lf - lt));
}

double true_frequency(std::span<const std::string> continuations) {
  if (continuations.empty()) throw invalid_input("no continuations to count");
  std::size_t hits = 0;
  for (const auto& c : continuations)
    if (first_word(c) == "true") ++hits;
  return static_cast<double>(hits) / static_cast<double>(continuations.size());
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::correct: return "correct";
    case Verdict::incorrect: return "incorrect";
    case Verdict::indeterminate: return "indeterminate";
  }
  return "?";
}

Verdict parse_verdict(std::string_view reply) {
  static const std::array<std::string_view, 4> yes{"yes", "y", "correct", "true"};
  static const std::array<std::string_view, 6> no{"no", "n", "incorrect", "false", "wrong", "not"};
  const auto w = first_word(reply);
  if (std::find(yes.begin(), yes.end(), w) != yes.end()) return Verdict::correct;
  if (std::find(no.begin(), no.end(), w) != no.end()) return Verdict::incorrect;
  return Verdict::indeterminate;
}

Gateway::Gateway(GenerationConfig cfg, RecordStore& store, std::shared_ptr<Backend> backend)
    : cfg_(std::move(cfg)), store_(store), backend_(std::move(backend)) {
  cfg_.validate();
  if (cfg_.digest() != store_.config_digest()) throw config_error("record store was opened for a different config");
}

std::string Gateway::backend_identity() const { return backend_ ? backend_->identity() : "replay"; }

void Gateway::replay_miss(RecordKind kind, const std::string& item_id) const {
  throw Error(ErrorKind::replay_miss, "replay: no " + std::string(to_string(kind)) + " record for item " + item_id +
                                          " in " + store_.file().string());
}

std::vector<SampledResponse> Gateway::sample_responses(const std::string& item_id, const std::string& prompt) {
  const auto psha = sha256_hex(prompt);
  if (auto hit = store_.find(RecordKind::samples, item_id, psha)) {
    auto responses = hit->payload.at("responses").get<std::vector<SampledResponse>>();
    if (responses.size() != cfg_.n_samples)
      throw invalid_input("stored samples for " + item_id + " have " + std::to_string(responses.size()) +
                          " responses, config wants " + std::to_string(cfg_.n_samples));
    return responses;
  }
  if (replay()) replay_miss(RecordKind::samples, item_id);
  auto responses = backend_->generate(prompt, cfg_.n_samples, cfg_.max_tokens, cfg_);
  if (responses.size() != cfg_.n_samples)
    throw Error(ErrorKind::backend, backend_->identity() + " returned " + std::to_string(responses.size()) +
                                        " samples, expected " + std::to_string(cfg_.n_samples));
  for (const auto& r : responses)
    if (r.logprobs) validate_sequence(*r.logprobs);
  store_.append(RecordKind::samples, item_id, psha, {{"responses", responses}, {"backend", backend_->identity()}});
  return responses;
}

TokenLogprobSeq Gateway::score_candidate(const std::string& item_id, const std::string& prompt,
                                         const std::string& candidate, const std::optional<std::string>& channel) {
  if (candidate.empty()) throw invalid_input("score_candidate: empty candidate");
  const auto psha = sha256_hex(prompt);
  const std::string chan = channel.value_or("");
  const std::string disc = candidate + '\x1f' + chan;
  if (auto hit = store_.find(RecordKind::candidate_logprobs, item_id, psha, disc))
    return hit->payload.at("sequence").get<TokenLogprobSeq>();
  if (replay()) replay_miss(RecordKind::candidate_logprobs, item_id);
  auto seq = backend_->score_completion(prompt, candidate, channel, cfg_);
  if (seq.empty()) throw Error(ErrorKind::backend, backend_->identity() + " returned no tokens for a candidate");
  validate_sequence(seq);
  if (!detokenizes_to(seq, candidate))
    throw Error(ErrorKind::backend, "tokenization mismatch: tokens of " + backend_->identity() + " give \"" +
                                        detokenize(seq) + "\", candidate is \"" + candidate + "\"");
  if (channel && !seq.has_attention())
    throw capability_error(backend_->identity() + " returned no attention weights for channel " + *channel);
  store_.append(RecordKind::candidate_logprobs, item_id, psha,
                {{"candidate", candidate}, {"channel", chan}, {"sequence", seq}, {"backend", backend_->identity()}},
                disc);
  return seq;
}

PTrueResult Gateway::elicit_p_true(const std::string& item_id, const std::string& question,
                                   const std::string& candidate, std::span<const std::string> samples) {
  const auto prompt = p_true_prompt(question, candidate, samples);
  const auto psha = sha256_hex(prompt);
  auto from_payload = [](const nlohmann::json& p) {
    PTrueResult r;
    r.probability = p.at("probability").get<double>();
    r.mode = p_true_mode_from_string(p.at("mode").get<std::string>());
    r.continuations = p.value("continuations", std::vector<std::string>{});
    return r;
  };
  if (auto hit = store_.find(RecordKind::p_true, item_id, psha)) return from_payload(hit->payload);
  if (replay()) replay_miss(RecordKind::p_true, item_id);

  PTrueResult r;
  bool done = false;
  std::string logprob_failure;
  if (cfg_.p_true_mode == PTrueMode::logprob) {
    try {
      const auto [lt, lf] = backend_->true_false_logprobs(prompt, cfg_);
      r.probability = normalize_true_false(lt, lf);
      r.mode = PTrueMode::logprob;
      done = true;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::capability) throw;
      logprob_failure = e.what();
    }
  }
  if (!done) {
    try {
      const auto outs = backend_->generate(prompt, cfg_.p_true_samples, 1, cfg_);
      for (const auto& o : outs) r.continuations.push_back(o.text);
      r.probability = true_frequency(r.continuations);
      r.mode = PTrueMode::sampling;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::capability) throw;
      throw capability_error(backend_->identity() + " offers neither True/False logprobs (" + logprob_failure +
                             ") nor sampling (" + e.what() + ")");
    }
    if (!logprob_failure.empty()) warn("p_true for " + item_id + ": logprobs unavailable, used sampling mode");
  }
  nlohmann::json payload{{"candidate", candidate},
                         {"probability", r.probability},
                         {"mode", to_string(r.mode)},
                         {"backend", backend_->identity()}};
  if (r.mode == PTrueMode::sampling) payload["continuations"] = r.continuations;
  store_.append(RecordKind::p_true, item_id, psha, std::move(payload));
  return r;
}

Verdict Gateway::judge_correctness(const std::string& item_id, const std::string& question,
                                   const std::string& response, const std::string& gold) {
  if (ascii_lower(normalize_whitespace(response)) == ascii_lower(normalize_whitespace(gold))) return Verdict::correct;
  const auto prompt = judge_prompt(question, response, gold);
  const auto psha = sha256_hex(prompt);
  Verdict v;
  if (auto hit = store_.find(RecordKind::judge, item_id, psha)) {
    v = parse_verdict(hit->payload.at("raw").get<std::string>());
  } else {
    if (replay()) replay_miss(RecordKind::judge, item_id);
    GenerationConfig judge_cfg = cfg_;
    judge_cfg.temperature = 0.0;
    const auto outs = backend_->generate(prompt, 1, 8, judge_cfg);
    if (outs.empty()) throw Error(ErrorKind::backend, backend_->identity() + " returned no judge reply");
    v = parse_verdict(outs.front().text);
    store_.append(RecordKind::judge, item_id, psha,
                  {{"response", response},
                   {"gold", gold},
                   {"raw", outs.front().text},
                   {"verdict", to_string(v)},
                   {"backend", backend_->identity()}});
  }
  if (v == Verdict::indeterminate) warn("judge reply for " + item_id + " is not yes/no; excluded as indeterminate");
  return v;
}

}  // namespace mcqa
