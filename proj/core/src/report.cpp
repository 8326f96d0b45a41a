#include "vlmbias/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>

#include "vlmbias/corpus.hpp"

namespace vlmbias {
namespace {

using CellKey = std::tuple<std::string, ProbeSpec>;

std::map<CellKey, std::vector<Outcome>> group_cells(std::span<const Outcome> outcomes) {
  std::map<CellKey, std::vector<Outcome>> cells;
  for (const auto& o : outcomes) cells[{o.model, o.spec}].push_back(o);
  return cells;
}

std::vector<std::string_view> all_categories() {
  std::vector<std::string_view> out;
  for (Dimension d : kAllDimensions) {
    for (auto c : categories_of(d)) out.push_back(c);
  }
  return out;
}

nlohmann::json optional_json(std::optional<double> v) {
  if (!v) return nullptr;
  const double r = round3(*v);
  return r == 0.0 ? 0.0 : r;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::string format_metric(std::optional<double> value) {
  if (!value || !std::isfinite(*value)) return std::string(kMissingCell);
  double r = round3(*value);
  if (r == 0.0) r = 0.0;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", r);
  return buf;
}

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  if (quoted) throw Error("unterminated quoted CSV field");
  fields.push_back(std::move(cur));
  return fields;
}

// ---------------------------------------------------------------------------
// Reports

std::vector<ReportRow> build_report(std::span<const Outcome> outcomes) {
  std::vector<ReportRow> rows;
  for (auto& [key, group] : group_cells(outcomes)) {
    ReportRow row;
    row.model = std::get<0>(key);
    row.spec = std::get<1>(key);
    row.bundle = compute_metrics(tabulate(group, row.spec.dimension));
    row.bundle.accuracy = class_accuracy(group);
    row.outcome_count = static_cast<std::int64_t>(group.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string report_csv(std::span<const ReportRow> rows) {
  const auto cats = all_categories();
  std::ostringstream out;
  out << "model,direction,dimension,info_mode,style,culture,outcomes,N";
  for (auto c : cats) out << ',' << c;
  out << ",no_preference,na,ag,delta_ag,delta_n,acc_overall,acc_no_preference";
  for (auto c : cats) out << ",acc_" << c;
  out << '\n';

  for (const auto& row : rows) {
    const auto& t = row.bundle.table;
    out << csv_escape(row.model) << ',' << to_string(row.spec.direction) << ','
        << to_string(row.spec.dimension) << ',' << to_string(row.spec.info_mode) << ','
        << to_string(row.spec.style) << ','
        << (row.spec.culture ? std::string(to_string(*row.spec.culture)) : std::string()) << ','
        << row.outcome_count << ',' << t.total();
    const auto own = categories_of(t.dimension);
    for (auto c : cats) {
      out << ',';
      if (std::find(own.begin(), own.end(), c) != own.end()) out << t.count(c);
    }
    out << ',' << t.no_preference << ',' << t.na << ',' << format_metric(row.bundle.ag) << ','
        << format_metric(row.bundle.delta_ag) << ',' << format_metric(row.bundle.delta_n);

    const auto accuracy_of = [&](std::string_view gold) -> std::string {
      if (!row.bundle.accuracy) return std::string(kMissingCell);
      auto it = row.bundle.accuracy->by_gold.find(std::string(gold));
      if (it == row.bundle.accuracy->by_gold.end()) return std::string(kMissingCell);
      return format_metric(it->second);
    };
    out << ','
        << (row.bundle.accuracy ? format_metric(row.bundle.accuracy->overall)
                                : std::string(kMissingCell));
    out << ',' << accuracy_of(kNoPreference);
    for (auto c : cats) {
      out << ',';
      if (std::find(own.begin(), own.end(), c) != own.end()) out << accuracy_of(c);
    }
    out << '\n';
  }
  return out.str();
}

nlohmann::json bundle_json(const MetricBundle& bundle) {
  const auto& t = bundle.table;
  nlohmann::json counts = nlohmann::json::object();
  for (auto c : categories_of(t.dimension)) counts[std::string(c)] = t.count(c);
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : bundle.neutrality_pairs) {
    pairs.push_back({{"pair", {p.first, p.second}}, {"neutrality", optional_json(p.value)}});
  }
  nlohmann::json j = {{"dimension", std::string(to_string(t.dimension))},
                      {"counts", counts},
                      {"no_preference", t.no_preference},
                      {"na", t.na},
                      {"N", t.total()},
                      {"ag", optional_json(bundle.ag)},
                      {"delta_ag", optional_json(bundle.delta_ag)},
                      {"neutrality_pairs", pairs},
                      {"delta_n", optional_json(bundle.delta_n)},
                      {"accuracy", nullptr}};
  if (t.profession) j["profession"] = *t.profession;
  if (bundle.accuracy) {
    nlohmann::json by_gold = nlohmann::json::object();
    for (const auto& [gold, v] : bundle.accuracy->by_gold) by_gold[gold] = optional_json(v);
    j["accuracy"] = {{"overall", optional_json(bundle.accuracy->overall)},
                     {"by_gold", by_gold},
                     {"support", bundle.accuracy->support}};
  }
  return j;
}

nlohmann::json report_json(std::span<const ReportRow> rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json j = bundle_json(row.bundle);
    j["model"] = row.model;
    j["spec"] = row.spec;
    j["outcomes"] = row.outcome_count;
    out.push_back(std::move(j));
  }
  return out;
}

ReportFormat parse_report_format(std::string_view s) {
  if (s == "csv") return ReportFormat::kCsv;
  if (s == "json") return ReportFormat::kJson;
  throw Error("unknown report format '" + std::string(s) + "'");
}

void emit_report(std::span<const Outcome> outcomes, ReportFormat format,
                 const std::filesystem::path& path) {
  if (outcomes.empty()) throw Error("cannot report on an empty outcome set");
  const auto rows = build_report(outcomes);
  if (format == ReportFormat::kCsv) {
    write_file_atomic(path, report_csv(rows));
  } else {
    write_file_atomic(path, report_json(rows).dump(2) + "\n");
  }
}

nlohmann::json breakdown_json(const ProfessionBreakdown& breakdown) {
  nlohmann::json by_profession = nlohmann::json::object();
  for (const auto& [p, b] : breakdown.by_profession) by_profession[p] = bundle_json(b);
  return {{"overall", bundle_json(breakdown.overall)},
          {"mean_profession_delta_n", optional_json(breakdown.mean_profession_delta_n)},
          {"by_profession", by_profession}};
}

nlohmann::json metrics_json(std::span<const Outcome> outcomes) {
  nlohmann::json out = nlohmann::json::array();
  for (auto& [key, group] : group_cells(outcomes)) {
    nlohmann::json j = breakdown_json(per_profession(group));
    j["model"] = std::get<0>(key);
    j["spec"] = std::get<1>(key);
    out.push_back(std::move(j));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Census

std::vector<CensusRecord> parse_census(std::istream& in, const std::set<std::string>* known_ids) {
  std::vector<CensusRecord> out;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> fields;
    try {
      fields = split_csv_line(line);
    } catch (const Error& e) {
      throw Error("census line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!header_seen) {
      if (fields.size() != 2 || trim(fields[0]) != "profession" || trim(fields[1]) != "female_share") {
        throw Error("census line " + std::to_string(line_no) +
                    ": expected header 'profession,female_share'");
      }
      header_seen = true;
      continue;
    }
    if (fields.size() != 2) {
      throw Error("census line " + std::to_string(line_no) + ": expected 2 fields, got " +
                  std::to_string(fields.size()));
    }
    CensusRecord r;
    r.profession = std::string(trim(fields[0]));
    if (r.profession.empty()) throw Error("census line " + std::to_string(line_no) + ": empty profession");
    r.profession_id = slugify(r.profession);
    const std::string share(trim(fields[1]));
    std::size_t used = 0;
    try {
      r.female_share = std::stod(share, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != share.size() || !std::isfinite(r.female_share)) {
      throw Error("census line " + std::to_string(line_no) + ": female_share '" + share +
                  "' is not a number");
    }
    if (r.female_share < 0.0 || r.female_share > 1.0) {
      throw Error("census line " + std::to_string(line_no) + ": female_share " + share +
                  " outside [0,1]");
    }
    if (known_ids != nullptr) r.known = known_ids->contains(r.profession_id);
    out.push_back(std::move(r));
  }
  if (!header_seen) throw Error("census file is empty");
  return out;
}

std::vector<CensusRecord> ingest_census(const std::filesystem::path& path,
                                        const std::set<std::string>* known_ids) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open census file " + path.string());
  return parse_census(in, known_ids);
}

// ---------------------------------------------------------------------------
// Heatmaps

HeatmapMetric parse_heatmap_metric(std::string_view s) {
  if (s == "ag") return HeatmapMetric::kAg;
  if (s == "delta_ag") return HeatmapMetric::kDeltaAg;
  if (s == "delta_n") return HeatmapMetric::kDeltaN;
  throw Error("unknown heatmap metric '" + std::string(s) + "'");
}

std::string_view to_string(HeatmapMetric m) {
  switch (m) {
    case HeatmapMetric::kAg:
      return "ag";
    case HeatmapMetric::kDeltaAg:
      return "delta_ag";
    case HeatmapMetric::kDeltaN:
      return "delta_n";
  }
  return "?";
}

HeatmapMatrix build_heatmap(const std::map<std::string, ProfessionBreakdown>& by_model,
                            HeatmapMetric metric, Dimension dimension,
                            std::span<const CensusRecord> census) {
  if (metric == HeatmapMetric::kAg && categories_of(dimension).size() != 2) {
    throw Error("signed AG is undefined for " + std::string(to_string(dimension)) +
                "; use delta_ag or delta_n");
  }
  if (!census.empty() && dimension != Dimension::kGender) {
    throw Error("a census column is only defined for gender heatmaps");
  }
  if (by_model.empty()) throw Error("heatmap needs at least one model");

  HeatmapMatrix m;
  m.metric = metric;
  m.dimension = dimension;
  std::set<std::string> professions;
  for (const auto& [model, breakdown] : by_model) {
    m.columns.push_back(model);
    for (const auto& [p, bundle] : breakdown.by_profession) professions.insert(p);
  }
  if (professions.empty()) throw Error("heatmap needs at least one profession");
  m.rows.assign(professions.begin(), professions.end());

  for (const auto& profession : m.rows) {
    std::vector<std::optional<double>> row;
    for (const auto& model : m.columns) {
      const auto& breakdown = by_model.at(model);
      auto it = breakdown.by_profession.find(profession);
      if (it == breakdown.by_profession.end()) {
        row.push_back(std::nullopt);
        continue;
      }
      if (it->second.table.dimension != dimension) {
        throw Error("heatmap outcomes for " + model + " are not " +
                    std::string(to_string(dimension)));
      }
      switch (metric) {
        case HeatmapMetric::kAg:
          row.push_back(it->second.ag);
          break;
        case HeatmapMetric::kDeltaAg:
          row.push_back(it->second.delta_ag);
          break;
        case HeatmapMetric::kDeltaN:
          row.push_back(it->second.delta_n);
          break;
      }
    }
    m.cells.push_back(std::move(row));
  }

  if (!census.empty()) {
    std::map<std::string, double> share;
    for (const auto& r : census) share[r.profession_id] = r.ag_scale();
    std::vector<std::optional<double>> column;
    for (const auto& profession : m.rows) {
      auto it = share.find(profession);
      column.push_back(it == share.end() ? std::nullopt : std::optional<double>(it->second));
    }
    m.census = std::move(column);
  }
  return m;
}

std::string heatmap_csv(const HeatmapMatrix& matrix) {
  std::ostringstream out;
  out << "profession";
  for (const auto& c : matrix.columns) out << ',' << csv_escape(c);
  if (matrix.census) out << ",census";
  out << '\n';
  for (std::size_t i = 0; i < matrix.rows.size(); ++i) {
    out << csv_escape(matrix.rows[i]);
    for (const auto& cell : matrix.cells[i]) out << ',' << format_metric(cell);
    if (matrix.census) out << ',' << format_metric((*matrix.census)[i]);
    out << '\n';
  }
  return out.str();
}

}  // namespace vlmbias
