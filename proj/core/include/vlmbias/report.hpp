#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vlmbias/biasmath.hpp"
#include "vlmbias/outcome.hpp"

namespace vlmbias {

// Missing or undefined values in CSV output.
inline constexpr std::string_view kMissingCell = "NA";

/// One report row: a (model, direction, dimension, mode, style, culture) cell.
struct ReportRow {
  std::string model;
  ProbeSpec spec;
  MetricBundle bundle;  // counts from neutral inputs; accuracy over every outcome
  std::int64_t outcome_count = 0;
};

std::vector<ReportRow> build_report(std::span<const Outcome> outcomes);

std::string report_csv(std::span<const ReportRow> rows);
nlohmann::json report_json(std::span<const ReportRow> rows);

enum class ReportFormat { kCsv, kJson };
ReportFormat parse_report_format(std::string_view s);

/// Writes the report for `outcomes` to `path`. Throws on empty input.
void emit_report(std::span<const Outcome> outcomes, ReportFormat format,
                 const std::filesystem::path& path);

nlohmann::json bundle_json(const MetricBundle& bundle);
nlohmann::json breakdown_json(const ProfessionBreakdown& breakdown);

/// Per-cell metrics with the per-profession breakdown, keyed like the report.
nlohmann::json metrics_json(std::span<const Outcome> outcomes);

// --- census -----------------------------------------------------------------

struct CensusRecord {
  std::string profession;
  std::string profession_id;
  double female_share = 0.0;
  bool known = true;  // false when the profession is absent from the corpus

  /// Census share on the AG axis: 2 * share - 1.
  double ag_scale() const { return 2.0 * female_share - 1.0; }
};

/// Parses a `profession,female_share` CSV. Malformed rows raise Error with
/// their line number. When `known_ids` is given, other professions are kept
/// but flagged unknown.
std::vector<CensusRecord> parse_census(std::istream& in,
                                       const std::set<std::string>* known_ids = nullptr);
std::vector<CensusRecord> ingest_census(const std::filesystem::path& path,
                                        const std::set<std::string>* known_ids = nullptr);

// --- heatmaps ---------------------------------------------------------------

enum class HeatmapMetric { kAg, kDeltaAg, kDeltaN };
HeatmapMetric parse_heatmap_metric(std::string_view s);
std::string_view to_string(HeatmapMetric m);

struct HeatmapMatrix {
  HeatmapMetric metric = HeatmapMetric::kDeltaN;
  Dimension dimension = Dimension::kGender;
  std::vector<std::string> rows;     // professions
  std::vector<std::string> columns;  // models
  std::vector<std::vector<std::optional<double>>> cells;
  std::optional<std::vector<std::optional<double>>> census;  // AG-scale, per row
};

/// Builds the professions x models matrix. Requesting signed AG for a
/// dimension with more than two categories, or a census column for anything
/// but gender, raises Error.
HeatmapMatrix build_heatmap(const std::map<std::string, ProfessionBreakdown>& by_model,
                            HeatmapMetric metric, Dimension dimension,
                            std::span<const CensusRecord> census = {});

std::string heatmap_csv(const HeatmapMatrix& matrix);

// --- CSV helpers ------------------------------------------------------------

std::vector<std::string> split_csv_line(std::string_view line);
std::string csv_escape(std::string_view field);
/// Three-decimal fixed formatting; never prints "-0.000".
std::string format_metric(std::optional<double> value);

}  // namespace vlmbias
