#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mcqa/pipeline.hpp"

namespace mcqa {

enum class ReportFormat { json, md, csv, roc_points };

inline constexpr std::array<ReportFormat, 4> kAllReportFormats{ReportFormat::json, ReportFormat::md,
                                                               ReportFormat::csv, ReportFormat::roc_points};

ReportFormat report_format_from_string(std::string_view name);
// report.json, report.md, report.csv, roc_points.csv
std::string report_file_name(ReportFormat format);

std::string render_report(const MetricReport& report, ReportFormat format);

// Writes one file per format into `dir`.
void emit_report(const MetricReport& report, const std::filesystem::path& dir,
                 std::span<const ReportFormat> formats = kAllReportFormats);

// Shortest decimal that round-trips to the same double.
std::string format_number(double v);

}  // namespace mcqa
