#include "mcqa/report.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>

#include "mcqa/error.hpp"

namespace mcqa {

namespace {

std::string fixed4(const std::optional<double>& v) {
  if (!v) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

std::string csv_number(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

std::string csv_method(const MethodResult& r) {
  std::string id(method_id(r.method));
  if (r.tau) id += " (tau=" + format_tau(*r.tau) + ")";
  return id;
}

std::string render_md(const MetricReport& r) {
  std::string out = "# Confidence evaluation report\n\n";
  out += "- mode: " + std::string(to_string(r.mode)) + "\n";
  out += "- dataset: " + r.dataset + "\n";
  out += "- model: " + r.model + "\n";
  out += "- config digest: " + r.config_digest + "\n";
  out += "- items: " + std::to_string(r.n_items) + " (scored " + std::to_string(r.n_scored_items) + ", failed " +
         std::to_string(r.failures.size()) + ")\n\n";

  out += "## Metrics\n\n| Method | tau | status | AUROC | AUARC | ECE | RCE | scored | excluded |\n";
  out += "|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& m : r.results) {
    out += "| " + std::string(method_label(m.method)) + " | " + (m.tau ? format_tau(*m.tau) : "N/A") + " | " +
           m.status + " | " + fixed4(m.auroc) + " | " + fixed4(m.auarc) + " | " + fixed4(m.ece) + " | " +
           fixed4(m.rce) + " | " + std::to_string(m.n_scored) + " | " + std::to_string(m.n_excluded) + " |\n";
  }
  bool any_note = false;
  for (const auto& m : r.results) any_note = any_note || !m.note.empty();
  if (any_note) {
    out += "\nNotes:\n\n";
    for (const auto& m : r.results)
      if (!m.note.empty())
        out += "- " + std::string(method_label(m.method)) + (m.tau ? " (tau=" + format_tau(*m.tau) + ")" : "") +
               ": " + m.note + "\n";
  }

  out += "\n## AUROC ranking\n\n";
  out += ranking_markdown({{r.mode == PipelineMode::mcqa_eval ? "MCQA-Eval" : "Baseline", r.ranking}});

  out += "\n## Exclusions\n\n";
  if (r.exclusions.empty()) {
    out += "none\n";
  } else {
    out += "| reason | units |\n|---|---|\n";
    for (const auto& [k, n] : r.exclusions) out += "| " + k + " | " + std::to_string(n) + " |\n";
  }
  out += "\n## Failures\n\n";
  if (r.failures.empty()) out += "none\n";
  for (const auto& f : r.failures) out += "- " + f.item_id + ": " + f.message + "\n";

  out += "\n## Settings\n\n```json\n" + r.settings.dump(2) + "\n```\n";
  return out;
}

std::string render_csv(const MetricReport& r) {
  std::string out = "method,auroc,auarc,ece,rce,n_scored,n_excluded\n";
  for (const auto& m : r.results)
    out += csv_method(m) + "," + csv_number(m.auroc) + "," + csv_number(m.auarc) + "," + csv_number(m.ece) + "," +
           csv_number(m.rce) + "," + std::to_string(m.n_scored) + "," + std::to_string(m.n_excluded) + "\n";
  return out;
}

std::string render_roc(const MetricReport& r) {
  std::string out = "method,tau,fpr,tpr\n";
  for (const auto& m : r.results)
    for (const auto& [f, t] : m.roc)
      out += std::string(method_id(m.method)) + "," + (m.tau ? format_tau(*m.tau) : "") + "," + format_number(f) +
             "," + format_number(t) + "\n";
  return out;
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

ReportFormat report_format_from_string(std::string_view name) {
  if (name == "json") return ReportFormat::json;
  if (name == "md") return ReportFormat::md;
  if (name == "csv") return ReportFormat::csv;
  if (name == "roc_points") return ReportFormat::roc_points;
  throw config_error("unknown report format: " + std::string(name));
}

std::string report_file_name(ReportFormat format) {
  switch (format) {
    case ReportFormat::json: return "report.json";
    case ReportFormat::md: return "report.md";
    case ReportFormat::csv: return "report.csv";
    case ReportFormat::roc_points: return "roc_points.csv";
  }
  return "report";
}

std::string render_report(const MetricReport& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::json: return report_to_json(report).dump(2) + "\n";
    case ReportFormat::md: return render_md(report);
    case ReportFormat::csv: return render_csv(report);
    case ReportFormat::roc_points: return render_roc(report);
  }
  return {};
}

void emit_report(const MetricReport& report, const std::filesystem::path& dir, std::span<const ReportFormat> formats) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  for (auto f : formats) {
    const auto path = dir / report_file_name(f);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << render_report(report, f);
    if (!out.flush()) throw invalid_input("cannot write " + path.string());
  }
}

}  // namespace mcqa
