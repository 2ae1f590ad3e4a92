#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mcqa/error.hpp"
#include "mcqa/http.hpp"
#include "mcqa/pipeline.hpp"
#include "mcqa/report.hpp"
#include "mcqa/studies.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mcqa;

namespace {

// Flags that override fields of the config file. Paths given here are
// relative to the working directory.
struct Overrides {
  std::string config;
  std::string mode, dataset, schema, dataset_name, records_dir, output_dir, template_name, template_file;
  std::optional<std::size_t> subsample_n;
  std::optional<std::uint64_t> subsample_seed;
  std::string backend, endpoint, model;
  std::optional<std::size_t> n_samples, max_tokens, concurrency;
  std::optional<double> temperature;
  std::optional<std::int64_t> request_seed;
  std::string p_true_mode;
  std::vector<std::string> methods;
  std::vector<double> tau;
  std::string correctness, calibration_split;
  std::optional<std::uint64_t> split_seed;
  std::optional<std::size_t> calibration_bins, ece_bins, rce_bins;
  std::optional<double> failure_threshold;
  bool replay = false;

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "Run config file (JSON, schema_version 1)");
    app->add_option("--mode", mode, "mcqa_eval | baseline");
    app->add_option("--dataset", dataset, "Normalized dataset file");
    app->add_option("--schema", schema, "Known dataset name the records must match");
    app->add_option("--dataset-name", dataset_name, "Dataset name used for records and reports");
    app->add_option("--subsample-n", subsample_n);
    app->add_option("--subsample-seed", subsample_seed);
    app->add_option("--template", template_name, "Builtin prompt template");
    app->add_option("--template-file", template_file, "Prompt template file");
    app->add_option("--records-dir", records_dir);
    app->add_option("--output-dir", output_dir);
    app->add_option("--backend", backend, "openai_compatible | sidecar | replay");
    app->add_option("--endpoint", endpoint);
    app->add_option("--model", model);
    app->add_option("--n-samples", n_samples);
    app->add_option("--temperature", temperature);
    app->add_option("--max-tokens", max_tokens);
    app->add_option("--request-seed", request_seed);
    app->add_option("--concurrency", concurrency);
    app->add_option("--p-true-mode", p_true_mode, "logprob | sampling");
    app->add_option("--methods", methods, "Method ids or labels")->delimiter(',');
    app->add_option("--tau", tau, "Similarity thresholds (baseline mode)")->delimiter(',');
    app->add_option("--correctness", correctness, "similarity | judge (baseline mode)");
    app->add_option("--calibration-split", calibration_split, "half | full");
    app->add_option("--split-seed", split_seed);
    app->add_option("--calibration-bins", calibration_bins);
    app->add_option("--ece-bins", ece_bins);
    app->add_option("--rce-bins", rce_bins);
    app->add_option("--failure-threshold", failure_threshold);
    app->add_flag("--replay", replay, "Use recorded responses only");
  }

  RunConfig build() const {
    json j = json::object();
    fs::path base = fs::current_path();
    if (!config.empty()) {
      std::ifstream in(config);
      if (!in) throw config_error("cannot read config " + config);
      try {
        j = json::parse(in);
      } catch (const json::exception& e) {
        throw config_error(config + ": " + e.what());
      }
      base = fs::absolute(config).parent_path();
    } else {
      j["schema_version"] = kRunConfigSchemaVersion;
    }
    auto path = [](const std::string& p) { return fs::absolute(p).lexically_normal().string(); };
    auto set = [&](const char* key, const std::string& v) {
      if (!v.empty()) j[key] = v;
    };
    if (!mode.empty()) j["mode"] = mode;
    if (!dataset.empty()) j["dataset"]["path"] = path(dataset);
    if (!schema.empty()) j["dataset"]["schema"] = schema;
    if (!dataset_name.empty()) j["dataset"]["name"] = dataset_name;
    if (subsample_n) j["dataset"]["subsample"]["n"] = *subsample_n;
    if (subsample_seed) j["dataset"]["subsample"]["seed"] = *subsample_seed;
    if (!template_name.empty()) j["template"] = template_name;
    if (!template_file.empty()) j["template"] = json{{"file", path(template_file)}};
    if (!records_dir.empty()) j["records_dir"] = path(records_dir);
    if (!output_dir.empty()) j["output_dir"] = path(output_dir);
    auto& g = j["generation"];
    if (g.is_null()) g = json::object();
    if (!backend.empty()) g["backend"] = backend;
    if (replay) g["backend"] = "replay";
    if (!endpoint.empty()) g["endpoint"] = endpoint;
    if (!model.empty()) g["model"] = model;
    if (n_samples) g["n_samples"] = *n_samples;
    if (temperature) g["temperature"] = *temperature;
    if (max_tokens) g["max_tokens"] = *max_tokens;
    if (request_seed) g["request_seed"] = *request_seed;
    if (concurrency) g["concurrency_limit"] = *concurrency;
    if (!p_true_mode.empty()) g["p_true_mode"] = p_true_mode;
    if (!methods.empty()) j["methods"] = methods;
    if (!tau.empty()) j["tau"] = tau;
    set("correctness", correctness);
    if (!calibration_split.empty()) j["metrics"]["calibration_split"] = calibration_split;
    if (split_seed) j["metrics"]["split_seed"] = *split_seed;
    if (calibration_bins) j["metrics"]["calibration_bins"] = *calibration_bins;
    if (ece_bins) j["metrics"]["ece_bins"] = *ece_bins;
    if (rce_bins) j["metrics"]["rce_bins"] = *rce_bins;
    if (failure_threshold) j["failure_threshold"] = *failure_threshold;
    auto cfg = run_config_from_json(j, base);
    cfg.validate();
    return cfg;
  }
};

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out.flush()) throw invalid_input("cannot write " + path.string());
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(); }

void print_summary(const ScoreSet& set) {
  std::printf("items: %zu, scored: %zu, failed: %zu, scores: %zu\n", set.n_items, set.scored_items.size(),
              set.failures.size(), set.scores.size());
  for (const auto& f : set.failures) std::fprintf(stderr, "item %s failed: %s\n", f.item_id.c_str(), f.message.c_str());
  for (const auto& [m, why] : set.unavailable)
    std::fprintf(stderr, "%s unavailable: %s\n", std::string(method_id(m)).c_str(), why.c_str());
}

int exit_for(const RunConfig& cfg, const ScoreSet& set) {
  const int code = exit_code_for(cfg, set);
  if (code == 3) std::fprintf(stderr, "too many item failures (%zu of %zu)\n", set.failures.size(), set.n_items);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Confidence-measure evaluation on multiple-choice QA"};
  app.require_subcommand(1);

  auto* ingest = app.add_subcommand("ingest", "Validate a dataset and write it in normalized form");
  std::string ingest_in, ingest_out, ingest_schema;
  std::optional<std::size_t> ingest_n;
  std::uint64_t ingest_seed = 42;
  ingest->add_option("--input", ingest_in)->required();
  ingest->add_option("--output", ingest_out)->required();
  ingest->add_option("--schema", ingest_schema);
  ingest->add_option("--subsample-n", ingest_n);
  ingest->add_option("--subsample-seed", ingest_seed);

  Overrides gen_o, score_o, eval_o, run_o;
  auto* generate = app.add_subcommand("generate", "Fill the record store from the live backend");
  gen_o.add_to(generate);
  auto* score = app.add_subcommand("score", "Score every method from recorded responses");
  score_o.add_to(score);
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Compute metrics from the scores in the output directory");
  eval_o.add_to(evaluate_cmd);
  auto* run = app.add_subcommand("run", "generate + score + evaluate + report");
  run_o.add_to(run);

  auto* sweep = app.add_subcommand("sweep-threshold", "AUROC rankings per similarity threshold");
  std::string sweep_scores, sweep_out;
  std::vector<double> sweep_tau;
  sweep->add_option("--scores", sweep_scores, "labeled_scores.jsonl from a baseline run")->required();
  sweep->add_option("--tau", sweep_tau)->required()->delimiter(',');
  sweep->add_option("--output", sweep_out, "Write the table as markdown here");

  auto* noise = app.add_subcommand("noise-study", "Ranking stability under logit noise on correctness");
  std::string noise_scores, noise_out;
  NoiseStudyConfig noise_cfg;
  std::size_t noise_seeds = noise_cfg.seeds.size();
  noise->add_option("--scores", noise_scores, "labeled_scores.jsonl with continuous correctness")->required();
  noise->add_option("--sigmas", noise_cfg.sigmas)->delimiter(',');
  noise->add_option("--seeds", noise_seeds, "Seeds 0..n-1");
  noise->add_option("--delta", noise_cfg.delta);
  noise->add_option("--threshold", noise_cfg.threshold);
  noise->add_option("--output", noise_out, "Per-run rows {sigma, seed, method, auroc, kendall_tau} as JSONL");

  auto* report = app.add_subcommand("report", "Render report.json in other formats");
  std::string report_in, report_dir;
  std::vector<std::string> report_formats{"json", "md", "csv", "roc_points"};
  report->add_option("--input", report_in, "report.json")->required();
  report->add_option("--output-dir", report_dir)->required();
  report->add_option("--format", report_formats)->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*ingest) {
      auto items = load_dataset(ingest_in, ingest_schema);
      if (ingest_n) items = subsample(items, *ingest_n, ingest_seed);
      write_dataset(items, ingest_out);
      std::printf("%zu items written to %s\n", items.size(), ingest_out.c_str());
      return 0;
    }
    if (*generate) {
      const auto cfg = gen_o.build();
      const auto items = load_items(cfg);
      RecordStore store(cfg.records_dir, dataset_label(cfg, items), cfg.generation);
      Gateway gateway(cfg.generation, store, make_backend(cfg.generation));
      const auto set = score_items(cfg, items, gateway);
      print_summary(set);
      std::printf("records: %zu in %s\n", store.size(), store.file().string().c_str());
      return exit_for(cfg, set);
    }
    if (*score) {
      const auto cfg = score_o.build();
      OutputLock lock(cfg.output_dir);
      const auto items = load_items(cfg);
      RecordStore store(cfg.records_dir, dataset_label(cfg, items), cfg.generation);
      Gateway gateway(cfg.generation, store, nullptr);
      const auto set = score_items(cfg, items, gateway);
      write_score_set(set, cfg.output_dir);
      print_summary(set);
      return exit_for(cfg, set);
    }
    if (*evaluate_cmd) {
      const auto cfg = eval_o.build();
      OutputLock lock(cfg.output_dir);
      const auto set = read_score_set(cfg.output_dir);
      const auto rep = evaluate(cfg, set);
      emit_report(rep, cfg.output_dir);
      std::cout << render_report(rep, ReportFormat::csv);
      return exit_for(cfg, set);
    }
    if (*run) {
      const auto cfg = run_o.build();
      const auto before = network_request_count();
      const auto out = run_pipeline(cfg, make_backend(cfg.generation));
      print_summary(out.scores);
      std::cout << render_report(out.report, ReportFormat::csv);
      std::printf("network requests: %zu\n", static_cast<std::size_t>(network_request_count() - before));
      if (out.exit_code == 3) std::fprintf(stderr, "too many item failures\n");
      return out.exit_code;
    }
    if (*sweep) {
      const auto scores = read_labeled_scores(sweep_scores);
      const auto table = threshold_sweep(scores, sweep_tau);
      const auto md = ranking_markdown({{"Baseline", table}});
      std::cout << md;
      if (!sweep_out.empty()) write_file(sweep_out, md);
      return 0;
    }
    if (*noise) {
      noise_cfg.seeds.clear();
      for (std::uint64_t s = 0; s < noise_seeds; ++s) noise_cfg.seeds.push_back(s);
      const auto scores = read_labeled_scores(noise_scores);
      const auto in = noise_inputs(scores);
      const auto res = noise_study(in.continuous, in.methods, in.confidences, noise_cfg);
      if (!noise_out.empty()) {
        std::string rows;
        for (const auto& r : res.runs)
          for (std::size_t m = 0; m < res.methods.size(); ++m)
            rows += json{{"sigma", r.sigma},
                         {"seed", r.seed},
                         {"method", res.methods[m]},
                         {"auroc", opt(r.auroc[m])},
                         {"kendall_tau", opt(r.kendall_tau)}}
                        .dump() +
                    "\n";
        write_file(noise_out, rows);
      }
      std::printf("sigma,n_defined,mean_kendall_tau,standard_error\n");
      for (const auto& s : res.summary)
        std::printf("%s,%zu,%s,%s\n", format_number(s.sigma).c_str(), s.n_defined,
                    format_number(s.mean_kendall_tau).c_str(), format_number(s.standard_error).c_str());
      return 0;
    }
    if (*report) {
      std::ifstream in(report_in);
      if (!in) throw invalid_input("cannot read " + report_in);
      const auto rep = report_from_json(json::parse(in));
      std::vector<ReportFormat> formats;
      for (const auto& f : report_formats) formats.push_back(report_format_from_string(f));
      emit_report(rep, report_dir, formats);
      return 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    switch (e.kind()) {
      case ErrorKind::config: return 2;
      case ErrorKind::capability: return 4;
      default: return 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
