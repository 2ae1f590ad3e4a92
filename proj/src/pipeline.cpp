#include "mcqa/pipeline.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <thread>

#include "mcqa/error.hpp"
#include "mcqa/report.hpp"
#include "mcqa/text.hpp"
#include "mcqa/whitebox.hpp"

namespace mcqa {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<std::string_view> known, const std::string& where) {
  if (!j.is_object()) throw config_error(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw config_error("unknown " + where + " field: " + k);
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

std::string_view to_string(SplitMode m) { return m == SplitMode::half ? "half" : "full"; }

SplitMode split_mode_from_string(std::string_view s) {
  if (s == "half") return SplitMode::half;
  if (s == "full") return SplitMode::full;
  throw config_error("unknown calibration_split: " + std::string(s));
}

std::string_view to_string(CorrectnessSource c) { return c == CorrectnessSource::similarity ? "similarity" : "judge"; }

CorrectnessSource correctness_from_string(std::string_view s) {
  if (s == "similarity") return CorrectnessSource::similarity;
  if (s == "judge") return CorrectnessSource::judge;
  throw config_error("unknown correctness source: " + std::string(s));
}

bool is_nli(SimilarityKind k) { return k != SimilarityKind::jaccard; }

std::set<SimilarityKind> kinds_needed(const RunConfig& cfg) {
  std::set<SimilarityKind> kinds;
  for (auto m : cfg.methods) {
    if (is_blackbox(m)) kinds.insert(similarity_kind(to_blackbox(m)));
    if (m == Method::token_sar) kinds.insert(cfg.token_sar_similarity);
  }
  if (cfg.mode == PipelineMode::baseline && cfg.correctness == CorrectnessSource::similarity)
    kinds.insert(cfg.correctness_similarity);
  return kinds;
}

std::string question_text(const McqItem& item) {
  return item.context ? *item.context + "\n" + item.question : item.question;
}

std::string token_surface(const TokenLogprob& t) {
  TokenLogprobSeq one;
  one.tokens.push_back(t);
  return detokenize(one);
}

// Similarity providers for one item, built lazily.
class ItemProviders {
 public:
  ItemProviders(const RunConfig& cfg, const McqItem& item, std::vector<std::string> texts,
                std::map<SimilarityKind, std::shared_ptr<SimilarityProvider>>& shared)
      : cfg_(cfg), item_(item), texts_(std::move(texts)), shared_(shared) {}

  SimilarityProvider& get(SimilarityKind kind) {
    if (auto it = local_.find(kind); it != local_.end()) return *it->second;
    const auto& spec = cfg_.provider_for(kind);
    if (spec.provider != "precomputed") return *shared_.at(kind);
    const auto path = spec.dir / (item_.id + "." + std::string(to_string(kind)) + ".mat");
    auto matrix = load_precomputed(path);
    if (matrix.kind() != kind) throw invalid_input(path.string() + ": matrix kind does not match");
    if (matrix.size() != texts_.size())
      throw invalid_input(path.string() + ": matrix has " + std::to_string(matrix.size()) + " rows, item has " +
                          std::to_string(texts_.size()) + " samples + options");
    if (matrix.context_sha256() != context_digest(question_text(item_)))
      throw invalid_input(path.string() + ": matrix was computed for a different question context");
    auto p = std::make_shared<PrecomputedProvider>(texts_, std::move(matrix), "precomputed:" + std::string(to_string(kind)));
    return *local_.emplace(kind, std::move(p)).first->second;
  }

 private:
  const RunConfig& cfg_;
  const McqItem& item_;
  std::vector<std::string> texts_;
  std::map<SimilarityKind, std::shared_ptr<SimilarityProvider>>& shared_;
  std::map<SimilarityKind, std::shared_ptr<SimilarityProvider>> local_;
};

struct ItemResult {
  std::map<Method, std::vector<LabeledScore>> scores;
  std::map<Method, std::string> unavailable;
  std::map<std::string, std::size_t> exclusions;
  std::map<std::string, std::set<std::string>> provenance;
  std::optional<std::string> failure;
};

class ItemScorer {
 public:
  ItemScorer(const RunConfig& cfg, const PromptTemplate& tmpl, Gateway& gateway,
             std::map<SimilarityKind, std::shared_ptr<SimilarityProvider>>& shared)
      : cfg_(cfg), tmpl_(tmpl), gateway_(gateway), shared_(shared) {}

  ItemResult run(const McqItem& item) const {
    ItemResult r;
    try {
      if (cfg_.mode == PipelineMode::mcqa_eval) score_options(item, r);
      else score_responses(item, r);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::config) throw;
      r.failure = e.what();
    } catch (const std::exception& e) {
      r.failure = e.what();
    }
    if (r.failure) r.scores.clear();
    return r;
  }

 private:
  bool any_blackbox() const {
    return std::any_of(cfg_.methods.begin(), cfg_.methods.end(), [](Method m) { return is_blackbox(m); });
  }

  // Runs fn for one method; a capability error marks the method unavailable.
  template <typename Fn>
  void guarded(Method m, ItemResult& r, Fn&& fn) const {
    try {
      fn();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::capability) throw;
      r.unavailable.emplace(m, e.what());
      r.scores.erase(m);
    }
  }

  void add(ItemResult& r, Method m, const McqItem& item, std::size_t index, double confidence, int label,
           std::optional<double> continuous = std::nullopt) const {
    if (!std::isfinite(confidence))
      throw Error(ErrorKind::numeric, std::string(method_id(m)) + " gave a non-finite confidence");
    r.scores[m].push_back(LabeledScore{item.id, index, std::string(method_id(m)), confidence, label, continuous});
  }

  double token_sar_for(const TokenLogprobSeq& seq, ItemProviders& providers, const std::string& context,
                       ItemResult& r) const {
    const bool recorded = std::all_of(seq.tokens.begin(), seq.tokens.end(),
                                      [](const TokenLogprob& t) { return t.relevance_weight.has_value(); });
    RelevanceWeights w;
    if (recorded) {
      for (const auto& t : seq.tokens) w.weights.push_back(*t.relevance_weight);
      w.provenance = "recorded";
    } else {
      std::vector<std::string> surfaces;
      for (const auto& t : seq.tokens) surfaces.push_back(token_surface(t));
      w = relevance_weights(surfaces, providers.get(cfg_.token_sar_similarity), context);
    }
    r.provenance["token_sar_weights"].insert(w.provenance);
    return token_sar(seq, w);
  }

  // White-box confidence of `text` under method m, scored as a continuation of `prompt`.
  double whitebox_conf(Method m, const McqItem& item, const std::string& prompt, const std::string& text,
                       const std::optional<TokenLogprobSeq>& sampled, std::span<const std::string> samples,
                       ItemProviders& providers, ItemResult& r) const {
    const auto context = question_text(item);
    auto plain = [&] { return sampled ? *sampled : gateway_.score_candidate(item.id, prompt, text); };
    switch (m) {
      case Method::sl: return sl(plain());
      case Method::perplexity: return perplexity_conf(plain());
      case Method::token_sar: return token_sar_for(plain(), providers, context, r);
      case Method::csl:
      case Method::csl_next: {
        const std::string channel(method_id(m));
        const auto seq = gateway_.score_candidate(item.id, prompt, text, channel);
        r.provenance[channel + "_channel"].insert(seq.channel_id.empty() ? channel : seq.channel_id);
        return m == Method::csl ? csl(seq) : csl_next(seq);
      }
      case Method::p_true: {
        const auto res = gateway_.elicit_p_true(item.id, context, text, samples);
        r.provenance["p_true_mode"].insert(std::string(to_string(res.mode)));
        GenerationRecord rec;
        rec.item_id = item.id;
        rec.p_true[0] = res.probability;
        return p_true_score(rec, 0);
      }
      default: break;
    }
    throw invalid_input("not a white-box method");
  }

  std::vector<std::string> sample_texts(const McqItem& item, const std::string& prompt,
                                        std::vector<SampledResponse>* responses = nullptr) const {
    auto rs = gateway_.sample_responses(item.id, prompt);
    std::vector<std::string> texts;
    for (const auto& s : rs) texts.push_back(s.text);
    if (responses) *responses = std::move(rs);
    return texts;
  }

  void blackbox_block(const std::vector<std::string>& samples, std::span<const std::string> options,
                      const McqItem& item, ItemProviders& providers, ItemResult& r,
                      const std::function<void(Method, const std::vector<double>&)>& emit) const {
    const auto context = question_text(item);
    std::set<SimilarityKind> kinds;
    for (auto m : cfg_.methods)
      if (is_blackbox(m)) kinds.insert(similarity_kind(to_blackbox(m)));
    for (auto kind : kinds) {
      std::vector<Method> ms;
      for (auto m : cfg_.methods)
        if (is_blackbox(m) && similarity_kind(to_blackbox(m)) == kind) ms.push_back(m);
      KindScores ks;
      try {
        ks = options.empty() ? score_responses_for_kind(samples, providers.get(kind), context, cfg_.spectral)
                             : score_candidates_for_kind(samples, options, providers.get(kind), context, cfg_.spectral);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::capability) throw;
        for (auto m : ms) r.unavailable.emplace(m, e.what());
        continue;
      }
      for (auto m : ms) emit(m, is_degree(to_blackbox(m)) ? ks.degree : ks.eccentricity);
    }
  }

  void score_options(const McqItem& item, ItemResult& r) const {
    const auto rendered = render(item, tmpl_);
    const bool need_samples = any_blackbox() || cfg_.uses(Method::p_true);
    std::vector<std::string> samples;
    if (need_samples) {
      samples = sample_texts(item, rendered.prompt);
      r.exclusions["sampled_response"] += samples.size();
    }
    std::vector<std::string> texts = samples;
    texts.insert(texts.end(), rendered.candidates.begin(), rendered.candidates.end());
    ItemProviders providers(cfg_, item, texts, shared_);
    const auto labels = gold_labels(item);

    blackbox_block(samples, rendered.candidates, item, providers, r, [&](Method m, const std::vector<double>& conf) {
      for (std::size_t i = 0; i < conf.size(); ++i) add(r, m, item, i, conf[i], labels[i]);
    });
    for (auto m : cfg_.methods) {
      if (is_blackbox(m)) continue;
      guarded(m, r, [&] {
        for (std::size_t i = 0; i < rendered.candidates.size(); ++i)
          add(r, m, item, i,
              whitebox_conf(m, item, rendered.prompt, rendered.candidates[i], std::nullopt, samples, providers, r),
              labels[i]);
      });
    }
  }

  void score_responses(const McqItem& item, ItemResult& r) const {
    const auto rendered = render(item, tmpl_);
    std::vector<SampledResponse> responses;
    const auto samples = sample_texts(item, rendered.prompt, &responses);
    r.exclusions["injected_option"] += item.options.size();
    std::vector<std::string> texts = samples;
    texts.insert(texts.end(), rendered.candidates.begin(), rendered.candidates.end());
    ItemProviders providers(cfg_, item, texts, shared_);
    const auto context = question_text(item);
    const std::string& gold = item.options[item.correct_index];

    // Label each response; excluded ones get no label.
    std::vector<std::optional<std::pair<int, std::optional<double>>>> label(samples.size());
    for (std::size_t j = 0; j < samples.size(); ++j) {
      if (normalize_whitespace(samples[j]).empty()) {
        ++r.exclusions["empty_response"];
        continue;
      }
      if (cfg_.correctness == CorrectnessSource::judge) {
        const auto v = gateway_.judge_correctness(item.id, context, samples[j], gold);
        if (v == Verdict::indeterminate) {
          ++r.exclusions["indeterminate_judge"];
          continue;
        }
        label[j] = std::pair{v == Verdict::correct ? 1 : 0, std::optional<double>{}};
      } else {
        const std::string refs[] = {gold};
        const auto sc = similarity_correctness(samples[j], refs, cfg_.tau.front(),
                                               providers.get(cfg_.correctness_similarity), context);
        label[j] = std::pair{sc.label, std::optional<double>{sc.similarity}};
      }
    }

    blackbox_block(samples, {}, item, providers, r, [&](Method m, const std::vector<double>& conf) {
      for (std::size_t j = 0; j < conf.size(); ++j)
        if (label[j]) add(r, m, item, j, conf[j], label[j]->first, label[j]->second);
    });
    for (auto m : cfg_.methods) {
      if (is_blackbox(m)) continue;
      guarded(m, r, [&] {
        for (std::size_t j = 0; j < samples.size(); ++j) {
          if (!label[j]) continue;
          const double c = whitebox_conf(m, item, rendered.prompt, samples[j], responses[j].logprobs, samples,
                                         providers, r);
          add(r, m, item, j, c, label[j]->first, label[j]->second);
        }
      });
    }
  }

  const RunConfig& cfg_;
  const PromptTemplate& tmpl_;
  Gateway& gateway_;
  std::map<SimilarityKind, std::shared_ptr<SimilarityProvider>>& shared_;
};

PromptTemplate template_for(const RunConfig& cfg) {
  return cfg.template_file ? PromptTemplate::load(*cfg.template_file) : PromptTemplate::builtin(cfg.template_name);
}

std::optional<double> opt_double(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(); }

void write_text(const fs::path& path, const std::string& text) {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw invalid_input("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw invalid_input("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw invalid_input("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Metrics {
  std::string status = "ok";
  std::string note;
  std::optional<double> auroc, auarc, ece, rce;
  std::vector<std::pair<double, double>> roc;
};

void add_note(std::string& note, const std::string& text) { note += (note.empty() ? "" : "; ") + text; }

Metrics compute_metrics(std::span<const double> c, std::span<const int> l, const MetricConfig& mc) {
  Metrics out;
  if (c.empty()) {
    out.status = "undefined";
    out.note = "no scored units";
    return out;
  }
  try {
    out.auroc = auroc(c, l);
    out.roc = roc_points(c, l);
  } catch (const UndefinedMetric& e) {
    out.status = "undefined";
    add_note(out.note, std::string("auroc: ") + e.what());
  }
  out.auarc = auarc(c, l);
  try {
    std::vector<double> fit_c, eval_c;
    std::vector<int> fit_l, eval_l;
    if (mc.split == SplitMode::half) {
      const auto split = half_split(c.size(), mc.split_seed);
      for (auto i : split.fit) fit_c.push_back(c[i]), fit_l.push_back(l[i]);
      for (auto i : split.eval) eval_c.push_back(c[i]), eval_l.push_back(l[i]);
    } else {
      fit_c.assign(c.begin(), c.end());
      fit_l.assign(l.begin(), l.end());
      eval_c = fit_c;
      eval_l = fit_l;
    }
    if (eval_c.empty()) throw invalid_input("calibration split left no evaluation units");
    const auto map = fit_histogram_binning(fit_c, fit_l, mc.calibration_bins);
    out.ece = ece(apply_calibration(map, eval_c), eval_l, mc.ece_bins);
  } catch (const Error& e) {
    add_note(out.note, std::string("ece: ") + e.what());
  }
  try {
    out.rce = rce(c, l, mc.rce_bins);
  } catch (const Error& e) {
    add_note(out.note, std::string("rce: ") + e.what());
  }
  return out;
}

json settings_json(const RunConfig& cfg, const ScoreSet& set) {
  json sim = json::object();
  for (auto kind : kinds_needed(cfg)) sim[std::string(to_string(kind))] = cfg.provider_for(kind).provider;
  json methods = json::array();
  for (auto m : cfg.methods) methods.push_back(method_id(m));
  json s{{"generation", digest_fields(cfg.generation)},
         {"metrics",
          {{"calibration_bins", cfg.metrics.calibration_bins},
           {"ece_bins", cfg.metrics.ece_bins},
           {"rce_bins", cfg.metrics.rce_bins},
           {"calibration_split", to_string(cfg.metrics.split)},
           {"split_seed", cfg.metrics.split_seed}}},
         {"spectral",
          {{"eigenvalue_cutoff", cfg.spectral.eigenvalue_cutoff},
           {"min_embedding_dims", cfg.spectral.min_embedding_dims}}},
         {"similarity", sim},
         {"token_sar_similarity", to_string(cfg.token_sar_similarity)},
         {"methods", methods},
         {"template", cfg.template_file ? cfg.template_file->filename().string() : cfg.template_name},
         {"subsample", cfg.subsample_n ? json{{"n", *cfg.subsample_n}, {"seed", cfg.subsample_seed}} : json()},
         {"provenance", set.provenance}};
  if (cfg.mode == PipelineMode::baseline) {
    s["correctness"] = to_string(cfg.correctness);
    if (cfg.correctness == CorrectnessSource::similarity) {
      s["correctness_similarity"] = to_string(cfg.correctness_similarity);
      s["tau"] = cfg.tau;
    }
  }
  return s;
}

json failures_json(const std::vector<ItemFailure>& fs) {
  json out = json::array();
  for (const auto& f : fs) out.push_back({{"item_id", f.item_id}, {"message", f.message}});
  return out;
}

std::vector<ItemFailure> failures_from_json(const json& j) {
  std::vector<ItemFailure> out;
  for (const auto& f : j) out.push_back({f.at("item_id").get<std::string>(), f.at("message").get<std::string>()});
  return out;
}

json cells_json(const std::vector<RankedCell>& cells) {
  json out = json::array();
  for (const auto& c : cells) out.push_back({{"method", c.method}, {"value", opt_json(c.value)}});
  return out;
}

std::vector<RankedCell> cells_from_json(const json& j) {
  std::vector<RankedCell> out;
  for (const auto& c : j) out.push_back({c.at("method").get<std::string>(), opt_double(c, "value")});
  return out;
}

}  // namespace

std::string_view to_string(PipelineMode mode) { return mode == PipelineMode::mcqa_eval ? "mcqa_eval" : "baseline"; }

PipelineMode pipeline_mode_from_string(std::string_view name) {
  if (name == "mcqa_eval") return PipelineMode::mcqa_eval;
  if (name == "baseline") return PipelineMode::baseline;
  throw config_error("unknown mode: " + std::string(name));
}

bool RunConfig::uses(Method m) const { return std::find(methods.begin(), methods.end(), m) != methods.end(); }

const ProviderSpec& RunConfig::provider_for(SimilarityKind kind) const {
  static const ProviderSpec jaccard_default;
  if (auto it = similarity.find(kind); it != similarity.end()) return it->second;
  if (kind == SimilarityKind::jaccard) return jaccard_default;
  throw config_error("no similarity provider configured for " + std::string(to_string(kind)));
}

void RunConfig::validate() const {
  generation.validate();
  spectral.validate();
  if (dataset_path.empty()) throw config_error("dataset.path must be set");
  if (records_dir.empty()) throw config_error("records_dir must be set");
  if (output_dir.empty()) throw config_error("output_dir must be set");
  if (methods.empty()) throw config_error("methods must not be empty");
  if (std::set<Method>(methods.begin(), methods.end()).size() != methods.size())
    throw config_error("methods must not repeat");
  if (mode == PipelineMode::mcqa_eval && !tau.empty()) throw config_error("mcqa_eval mode forbids tau");
  if (mode == PipelineMode::baseline && correctness == CorrectnessSource::similarity && tau.empty())
    throw config_error("baseline mode with similarity correctness needs at least one tau");
  if (mode == PipelineMode::baseline && correctness == CorrectnessSource::judge && !tau.empty())
    throw config_error("tau applies only to similarity correctness");
  for (double t : tau)
    if (!(t >= 0.0 && t <= 1.0)) throw config_error("tau values must be in [0, 1]");
  if (metrics.calibration_bins < 1 || metrics.ece_bins < 1) throw config_error("bin counts must be >= 1");
  if (metrics.rce_bins < 2) throw config_error("rce_bins must be >= 2");
  if (!(failure_threshold >= 0.0 && failure_threshold <= 1.0))
    throw config_error("failure_threshold must be in [0, 1]");
  if (subsample_n && *subsample_n == 0) throw config_error("subsample n must be >= 1");
  for (const auto& [kind, spec] : similarity) {
    const std::string k(to_string(kind));
    if (spec.provider == "jaccard") {
      if (kind != SimilarityKind::jaccard) throw config_error("jaccard provider cannot serve " + k);
    } else if (spec.provider == "precomputed") {
      if (spec.dir.empty()) throw config_error("precomputed provider for " + k + " needs dir");
    } else if (spec.provider == "sidecar") {
      if (!is_nli(kind)) throw config_error("sidecar provider serves NLI kinds only, not " + k);
      if (spec.endpoint.empty()) throw config_error("sidecar provider for " + k + " needs endpoint");
    } else {
      throw config_error("unknown similarity provider: " + spec.provider);
    }
  }
  for (auto kind : kinds_needed(*this)) provider_for(kind);
  if (uses(Method::token_sar) && provider_for(token_sar_similarity).provider == "precomputed")
    throw config_error("token_sar needs similarities of token-deleted variants; a precomputed matrix cannot serve them");
}

RunConfig run_config_from_json(const json& j, const fs::path& base_dir) {
  check_keys(j,
             {"schema_version", "mode", "dataset", "template", "generation", "records_dir", "methods", "similarity",
              "token_sar_similarity", "spectral", "metrics", "tau", "correctness", "correctness_similarity",
              "output_dir", "failure_threshold"},
             "config");
  if (j.value("schema_version", 0) != kRunConfigSchemaVersion)
    throw config_error("config schema_version must be " + std::to_string(kRunConfigSchemaVersion));
  RunConfig c;
  try {
    if (j.contains("mode")) c.mode = pipeline_mode_from_string(j["mode"].get<std::string>());
    const auto& d = j.at("dataset");
    check_keys(d, {"path", "schema", "name", "subsample"}, "dataset");
    c.dataset_path = resolve(base_dir, d.at("path").get<std::string>());
    c.dataset_schema = d.value("schema", "");
    c.dataset_name = d.value("name", "");
    if (d.contains("subsample") && !d["subsample"].is_null()) {
      check_keys(d["subsample"], {"n", "seed"}, "dataset.subsample");
      c.subsample_n = d["subsample"].at("n").get<std::size_t>();
      c.subsample_seed = d["subsample"].value("seed", c.subsample_seed);
    }
    if (j.contains("template")) {
      const auto& t = j["template"];
      if (t.is_string()) {
        c.template_name = t.get<std::string>();
      } else {
        check_keys(t, {"file"}, "template");
        c.template_file = resolve(base_dir, t.at("file").get<std::string>());
        c.template_name = c.template_file->filename().string();
      }
    }
    if (j.contains("generation")) c.generation = j["generation"].get<GenerationConfig>();
    c.records_dir = resolve(base_dir, j.value("records_dir", ""));
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j["methods"]) c.methods.push_back(method_from_string(m.get<std::string>()));
    }
    if (j.contains("similarity")) {
      check_keys(j["similarity"], {"jaccard", "nli_entailment", "nli_contradiction"}, "similarity");
      for (const auto& [k, v] : j["similarity"].items()) {
        check_keys(v, {"provider", "dir", "endpoint"}, "similarity." + k);
        ProviderSpec spec;
        spec.provider = v.at("provider").get<std::string>();
        spec.dir = resolve(base_dir, v.value("dir", ""));
        spec.endpoint = v.value("endpoint", "");
        c.similarity[similarity_kind_from_string(k)] = spec;
      }
    }
    if (j.contains("token_sar_similarity"))
      c.token_sar_similarity = similarity_kind_from_string(j["token_sar_similarity"].get<std::string>());
    if (j.contains("spectral")) {
      check_keys(j["spectral"], {"eigenvalue_cutoff", "min_embedding_dims"}, "spectral");
      c.spectral.eigenvalue_cutoff = j["spectral"].value("eigenvalue_cutoff", c.spectral.eigenvalue_cutoff);
      c.spectral.min_embedding_dims = j["spectral"].value("min_embedding_dims", c.spectral.min_embedding_dims);
    }
    if (j.contains("metrics")) {
      const auto& m = j["metrics"];
      check_keys(m, {"calibration_bins", "ece_bins", "rce_bins", "calibration_split", "split_seed"}, "metrics");
      c.metrics.calibration_bins = m.value("calibration_bins", c.metrics.calibration_bins);
      c.metrics.ece_bins = m.value("ece_bins", c.metrics.ece_bins);
      c.metrics.rce_bins = m.value("rce_bins", c.metrics.rce_bins);
      if (m.contains("calibration_split"))
        c.metrics.split = split_mode_from_string(m["calibration_split"].get<std::string>());
      c.metrics.split_seed = m.value("split_seed", c.metrics.split_seed);
    }
    if (j.contains("tau")) c.tau = j["tau"].get<std::vector<double>>();
    if (j.contains("correctness")) c.correctness = correctness_from_string(j["correctness"].get<std::string>());
    if (j.contains("correctness_similarity"))
      c.correctness_similarity = similarity_kind_from_string(j["correctness_similarity"].get<std::string>());
    c.output_dir = resolve(base_dir, j.value("output_dir", ""));
    c.failure_threshold = j.value("failure_threshold", c.failure_threshold);
  } catch (const json::exception& e) {
    throw config_error(std::string("config: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::config) throw;
    throw config_error(e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw config_error(path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw config_error(e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

std::vector<McqItem> load_items(const RunConfig& cfg) {
  auto items = load_dataset(cfg.dataset_path, cfg.dataset_schema);
  if (cfg.subsample_n) items = subsample(items, *cfg.subsample_n, cfg.subsample_seed);
  return items;
}

std::string dataset_label(const RunConfig& cfg, std::span<const McqItem> items) {
  if (!cfg.dataset_name.empty()) return cfg.dataset_name;
  if (!cfg.dataset_schema.empty()) return cfg.dataset_schema;
  if (!items.empty() && !items.front().dataset.empty()) return items.front().dataset;
  return cfg.dataset_path.stem().string();
}

ScoreSet score_items(const RunConfig& cfg, std::span<const McqItem> items, Gateway& gateway) {
  cfg.validate();
  const auto tmpl = template_for(cfg);
  std::map<SimilarityKind, std::shared_ptr<SimilarityProvider>> shared;
  for (auto kind : kinds_needed(cfg)) {
    const auto& spec = cfg.provider_for(kind);
    if (spec.provider == "jaccard") shared[kind] = std::make_shared<JaccardProvider>();
    else if (spec.provider == "sidecar")
      shared[kind] = std::make_shared<SidecarNliProvider>(spec.endpoint, kind, cfg.generation.retry);
  }
  ItemScorer scorer(cfg, tmpl, gateway, shared);

  std::vector<ItemResult> results(items.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr fatal;
  std::mutex fatal_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < items.size();) {
      try {
        results[i] = scorer.run(items[i]);
      } catch (...) {
        std::lock_guard lock(fatal_mutex);
        if (!fatal) fatal = std::current_exception();
        next = items.size();
      }
    }
  };
  const std::size_t workers = std::min(cfg.generation.concurrency_limit, std::max<std::size_t>(items.size(), 1));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (fatal) std::rethrow_exception(fatal);

  // Merge in item order.
  ScoreSet set;
  set.mode = cfg.mode;
  set.dataset = dataset_label(cfg, items);
  set.n_items = items.size();
  std::map<Method, std::vector<LabeledScore>> by_method;
  std::map<std::string, std::set<std::string>> provenance;
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& r = results[i];
    if (r.failure) {
      set.failures.push_back({items[i].id, *r.failure});
      continue;
    }
    set.scored_items.push_back(items[i].id);
    for (auto& [m, v] : r.scores) {
      auto& dst = by_method[m];
      dst.insert(dst.end(), std::make_move_iterator(v.begin()), std::make_move_iterator(v.end()));
    }
    for (auto& [m, why] : r.unavailable) set.unavailable.emplace(m, why);
    for (auto& [k, n] : r.exclusions) set.exclusions[k] += n;
    for (auto& [k, v] : r.provenance) provenance[k].insert(v.begin(), v.end());
  }
  for (auto m : kAllMethods) {
    if (!cfg.uses(m) || set.unavailable.count(m)) continue;
    auto& v = by_method[m];
    set.scores.insert(set.scores.end(), v.begin(), v.end());
  }
  for (auto& [k, v] : provenance) set.provenance[k].assign(v.begin(), v.end());
  return set;
}

MetricReport evaluate(const RunConfig& cfg, const ScoreSet& set) {
  MetricReport rep;
  rep.mode = set.mode;
  rep.dataset = set.dataset;
  rep.model = cfg.generation.model;
  rep.config_digest = cfg.generation.digest();
  rep.settings = settings_json(cfg, set);
  rep.n_items = set.n_items;
  rep.n_scored_items = set.scored_items.size();
  rep.failures = set.failures;
  rep.exclusions = set.exclusions;
  std::size_t n_excluded = 0;
  for (const auto& [k, n] : set.exclusions) n_excluded += n;

  const bool sweep = set.mode == PipelineMode::baseline && cfg.correctness == CorrectnessSource::similarity;
  std::vector<std::optional<double>> taus;
  if (sweep) taus.assign(cfg.tau.begin(), cfg.tau.end());
  else taus.push_back(std::nullopt);

  std::map<Method, std::vector<const LabeledScore*>> by_method;
  for (const auto& s : set.scores) by_method[method_from_string(s.method)].push_back(&s);

  for (const auto& tau : taus) {
    RankingRow row;
    row.label = tau ? format_tau(*tau) : set.mode == PipelineMode::mcqa_eval ? "N/A" : "judge";
    for (auto m : kAllMethods) {
      if (!cfg.uses(m)) continue;
      MethodResult res;
      res.method = m;
      res.tau = tau;
      res.n_excluded = n_excluded;
      if (auto it = set.unavailable.find(m); it != set.unavailable.end()) {
        res.status = "unavailable";
        res.note = it->second;
      } else {
        std::vector<double> c;
        std::vector<int> l;
        for (const auto* s : by_method[m]) {
          c.push_back(s->confidence);
          if (tau) {
            if (!s->continuous) throw invalid_input("baseline score without a continuous similarity");
            l.push_back(threshold_label(*s->continuous, *tau));
          } else {
            l.push_back(s->correctness);
          }
        }
        auto mt = compute_metrics(c, l, cfg.metrics);
        res.status = mt.status;
        res.note = mt.note;
        res.auroc = mt.auroc;
        res.auarc = mt.auarc;
        res.ece = mt.ece;
        res.rce = mt.rce;
        res.roc = std::move(mt.roc);
        res.n_scored = c.size();
      }
      (is_blackbox(m) ? row.blackbox : row.whitebox).push_back({std::string(method_id(m)), res.auroc});
      rep.results.push_back(std::move(res));
    }
    row.blackbox = rank_cells(std::move(row.blackbox));
    row.whitebox = rank_cells(std::move(row.whitebox));
    rep.ranking.rows.push_back(std::move(row));
  }
  return rep;
}

json report_to_json(const MetricReport& r) {
  json results = json::array();
  for (const auto& m : r.results) {
    json roc = json::array();
    for (const auto& [f, t] : m.roc) roc.push_back({f, t});
    results.push_back({{"method", method_id(m.method)},
                       {"label", method_label(m.method)},
                       {"tau", opt_json(m.tau)},
                       {"status", m.status},
                       {"note", m.note},
                       {"auroc", opt_json(m.auroc)},
                       {"auarc", opt_json(m.auarc)},
                       {"ece", opt_json(m.ece)},
                       {"rce", opt_json(m.rce)},
                       {"n_scored", m.n_scored},
                       {"n_excluded", m.n_excluded},
                       {"roc_points", roc}});
  }
  json rows = json::array();
  for (const auto& row : r.ranking.rows)
    rows.push_back({{"label", row.label}, {"blackbox", cells_json(row.blackbox)}, {"whitebox", cells_json(row.whitebox)}});
  return json{{"schema_version", kReportSchemaVersion},
              {"mode", to_string(r.mode)},
              {"dataset", r.dataset},
              {"model", r.model},
              {"config_digest", r.config_digest},
              {"settings", r.settings},
              {"n_items", r.n_items},
              {"n_scored_items", r.n_scored_items},
              {"failures", failures_json(r.failures)},
              {"exclusions", r.exclusions},
              {"results", results},
              {"ranking", {{"metric", r.ranking.metric}, {"rows", rows}}}};
}

MetricReport report_from_json(const json& j) {
  if (j.value("schema_version", 0) != kReportSchemaVersion)
    throw invalid_input("report schema_version must be " + std::to_string(kReportSchemaVersion));
  MetricReport r;
  try {
    r.mode = pipeline_mode_from_string(j.at("mode").get<std::string>());
    r.dataset = j.at("dataset").get<std::string>();
    r.model = j.at("model").get<std::string>();
    r.config_digest = j.at("config_digest").get<std::string>();
    r.settings = j.at("settings");
    r.n_items = j.at("n_items").get<std::size_t>();
    r.n_scored_items = j.at("n_scored_items").get<std::size_t>();
    r.failures = failures_from_json(j.at("failures"));
    r.exclusions = j.at("exclusions").get<std::map<std::string, std::size_t>>();
    for (const auto& m : j.at("results")) {
      MethodResult res;
      res.method = method_from_string(m.at("method").get<std::string>());
      res.tau = opt_double(m, "tau");
      res.status = m.at("status").get<std::string>();
      res.note = m.value("note", "");
      res.auroc = opt_double(m, "auroc");
      res.auarc = opt_double(m, "auarc");
      res.ece = opt_double(m, "ece");
      res.rce = opt_double(m, "rce");
      res.n_scored = m.at("n_scored").get<std::size_t>();
      res.n_excluded = m.at("n_excluded").get<std::size_t>();
      for (const auto& p : m.at("roc_points")) res.roc.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
      r.results.push_back(std::move(res));
    }
    r.ranking.metric = j.at("ranking").at("metric").get<std::string>();
    for (const auto& row : j.at("ranking").at("rows"))
      r.ranking.rows.push_back({row.at("label").get<std::string>(), cells_from_json(row.at("blackbox")),
                                cells_from_json(row.at("whitebox"))});
  } catch (const json::exception& e) {
    throw invalid_input(std::string("report: ") + e.what());
  }
  return r;
}

json labeled_score_to_json(const LabeledScore& s) {
  return {{"item_id", s.item_id},
          {"index", s.index},
          {"method", s.method},
          {"confidence", s.confidence},
          {"correctness", s.correctness},
          {"continuous", opt_json(s.continuous)}};
}

LabeledScore labeled_score_from_json(const json& j) {
  LabeledScore s;
  try {
    s.item_id = j.at("item_id").get<std::string>();
    s.index = j.at("index").get<std::size_t>();
    s.method = j.at("method").get<std::string>();
    s.confidence = j.at("confidence").get<double>();
    s.correctness = j.at("correctness").get<int>();
    s.continuous = opt_double(j, "continuous");
  } catch (const json::exception& e) {
    throw invalid_input(std::string("labeled score: ") + e.what());
  }
  if (s.correctness != 0 && s.correctness != 1) throw invalid_input("labeled score: correctness must be 0 or 1");
  if (!std::isfinite(s.confidence)) throw invalid_input("labeled score: confidence must be finite");
  return s;
}

void write_score_set(const ScoreSet& set, const fs::path& dir) {
  fs::create_directories(dir);
  const char* index_key = set.mode == PipelineMode::mcqa_eval ? "option_index" : "response_index";
  std::string scores, labeled;
  for (const auto& s : set.scores) {
    scores += json{{"item_id", s.item_id}, {index_key, s.index}, {"method", s.method}, {"confidence", s.confidence}}
                  .dump() +
              "\n";
    labeled += labeled_score_to_json(s).dump() + "\n";
  }
  json unavailable = json::object();
  for (const auto& [m, why] : set.unavailable) unavailable[std::string(method_id(m))] = why;
  const json meta{{"mode", to_string(set.mode)},
                  {"dataset", set.dataset},
                  {"n_items", set.n_items},
                  {"scored_items", set.scored_items},
                  {"unavailable", unavailable},
                  {"exclusions", set.exclusions},
                  {"failures", failures_json(set.failures)},
                  {"provenance", set.provenance}};
  write_text(dir / "scores.jsonl", scores);
  write_text(dir / "labeled_scores.jsonl", labeled);
  write_text(dir / "score_meta.json", meta.dump(2) + "\n");
}

ScoreSet read_score_set(const fs::path& dir) {
  ScoreSet set;
  try {
    const auto meta = json::parse(read_text(dir / "score_meta.json"));
    set.mode = pipeline_mode_from_string(meta.at("mode").get<std::string>());
    set.dataset = meta.at("dataset").get<std::string>();
    set.n_items = meta.at("n_items").get<std::size_t>();
    set.scored_items = meta.at("scored_items").get<std::vector<std::string>>();
    for (const auto& [k, v] : meta.at("unavailable").items()) set.unavailable[method_from_string(k)] = v.get<std::string>();
    set.exclusions = meta.at("exclusions").get<std::map<std::string, std::size_t>>();
    set.failures = failures_from_json(meta.at("failures"));
    set.provenance = meta.at("provenance").get<std::map<std::string, std::vector<std::string>>>();
  } catch (const json::exception& e) {
    throw invalid_input((dir / "score_meta.json").string() + ": " + e.what());
  }
  set.scores = read_labeled_scores(dir / "labeled_scores.jsonl");
  return set;
}

std::vector<LabeledScore> read_labeled_scores(const fs::path& path) {
  std::vector<LabeledScore> out;
  std::istringstream lines(read_text(path));
  std::string line;
  for (std::size_t n = 1; std::getline(lines, line); ++n) {
    if (line.empty()) continue;
    try {
      out.push_back(labeled_score_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw invalid_input(path.string() + ":" + std::to_string(n) + ": " + e.what());
    } catch (const Error& e) {
      throw invalid_input(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

OutputLock::OutputLock(const fs::path& dir) {
  fs::create_directories(dir);
  const auto path = dir / ".lock";
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw invalid_input("cannot open " + path.string());
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw config_error("another run is using " + dir.string());
  }
}

OutputLock::~OutputLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

int exit_code_for(const RunConfig& cfg, const ScoreSet& set) {
  if (set.n_items > 0 &&
      static_cast<double>(set.failures.size()) > cfg.failure_threshold * static_cast<double>(set.n_items))
    return 3;
  if (!set.unavailable.empty()) return 4;
  return 0;
}

RunOutcome run_pipeline(const RunConfig& cfg, std::shared_ptr<Backend> backend) {
  cfg.validate();
  OutputLock lock(cfg.output_dir);
  const auto items = load_items(cfg);
  RecordStore store(cfg.records_dir, dataset_label(cfg, items), cfg.generation);
  Gateway gateway(cfg.generation, store, std::move(backend));
  RunOutcome out;
  out.scores = score_items(cfg, items, gateway);
  write_score_set(out.scores, cfg.output_dir);
  std::string failures;
  for (const auto& f : out.scores.failures)
    failures += nlohmann::json{{"item_id", f.item_id}, {"message", f.message}}.dump() + "\n";
  write_text(cfg.output_dir / "failures.jsonl", failures);
  out.report = evaluate(cfg, out.scores);
  emit_report(out.report, cfg.output_dir);
  out.exit_code = exit_code_for(cfg, out.scores);
  return out;
}

}  // namespace mcqa
