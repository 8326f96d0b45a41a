#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"
#include "vlmbias/report.hpp"

using namespace vlmbias;
using vlmbias::testing::slurp;
using vlmbias::testing::TempDir;

namespace {

ProbeSpec t2i(Dimension dim) {
  ProbeSpec s;
  s.direction = Direction::kTextToImage;
  s.dimension = dim;
  return s;
}

void add(std::vector<Outcome>& os, const std::string& model, const ProbeSpec& spec,
         const std::string& profession, const std::string& predicted, int times,
         const std::string& gold = "no_preference") {
  for (int i = 0; i < times; ++i) {
    Outcome o;
    o.entry_id = profession + ":0";
    o.profession_id = profession;
    o.model = model;
    o.spec = spec;
    o.input_key = "humanoid robot";
    o.sample_index = i;
    o.gold_label = gold;
    o.predicted = predicted;
    os.push_back(o);
  }
}

std::vector<Outcome> dalle3_gender() {
  std::vector<Outcome> os;
  const auto s = t2i(Dimension::kGender);
  add(os, "DALL-E-3", s, "bakers", "male", 751);
  add(os, "DALL-E-3", s, "bakers", "female", 123);
  add(os, "DALL-E-3", s, "bakers", "NA", 142);
  return os;
}

std::map<std::string, std::string> csv_row(const std::string& csv, std::size_t index) {
  std::istringstream in(csv);
  std::string header, line;
  std::getline(in, header);
  for (std::size_t i = 0; i <= index; ++i) std::getline(in, line);
  const auto names = split_csv_line(header);
  const auto values = split_csv_line(line);
  EXPECT_EQ(names.size(), values.size());
  std::map<std::string, std::string> row;
  for (std::size_t i = 0; i < names.size() && i < values.size(); ++i) row[names[i]] = values[i];
  return row;
}

}  // namespace

TEST(Report, FormatMetric) {
  EXPECT_EQ(format_metric(std::nullopt), "NA");
  EXPECT_EQ(format_metric(-0.71853), "-0.719");
  EXPECT_EQ(format_metric(-0.0001), "0.000");
  EXPECT_EQ(format_metric(1.0), "1.000");
}

TEST(Report, CsvHelpers) {
  EXPECT_EQ(csv_escape("plain"), "plain");
  EXPECT_EQ(csv_escape("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_escape("say \"hi\""), "\"say \"\"hi\"\"\"");
  const auto f = split_csv_line("a,\"b,c\",\"d\"\"e\",");
  ASSERT_EQ(f.size(), 4u);
  EXPECT_EQ(f[1], "b,c");
  EXPECT_EQ(f[2], "d\"e");
  EXPECT_EQ(f[3], "");
  EXPECT_THROW(split_csv_line("\"open"), Error);
}

TEST(Report, DalleGenderRow) {
  const auto os = dalle3_gender();
  const auto rows = build_report(os);
  ASSERT_EQ(rows.size(), 1u);
  const auto row = csv_row(report_csv(rows), 0);
  EXPECT_EQ(row.at("model"), "DALL-E-3");
  EXPECT_EQ(row.at("direction"), "text_to_image");
  EXPECT_EQ(row.at("N"), "1016");
  EXPECT_EQ(row.at("male"), "751");
  EXPECT_EQ(row.at("female"), "123");
  EXPECT_EQ(row.at("na"), "142");
  EXPECT_EQ(row.at("asian"), "");
  EXPECT_EQ(row.at("ag"), "-0.719");
  EXPECT_EQ(row.at("delta_ag"), "0.719");
  EXPECT_EQ(row.at("acc_overall"), "0.000");
  EXPECT_EQ(row.at("acc_male"), "NA");
  EXPECT_EQ(row.at("acc_asian"), "");
}

TEST(Report, AllNoPreferenceIsFullyNeutral) {
  std::vector<Outcome> os;
  add(os, "m", t2i(Dimension::kAge), "bakers", "no_preference", 20);
  const auto row = csv_row(report_csv(build_report(os)), 0);
  EXPECT_EQ(row.at("delta_n"), "1.000");
  EXPECT_EQ(row.at("delta_ag"), "NA");
  EXPECT_EQ(row.at("ag"), "NA");
}

TEST(Report, NeutralCountsExcludeCategoryInputs) {
  std::vector<Outcome> os;
  ProbeSpec s;
  s.direction = Direction::kImageToText;
  s.dimension = Dimension::kGender;
  add(os, "m", s, "bakers", "male", 3);
  add(os, "m", s, "bakers", "female", 4, "female");
  const auto row = csv_row(report_csv(build_report(os)), 0);
  EXPECT_EQ(row.at("outcomes"), "7");
  EXPECT_EQ(row.at("N"), "3");
  EXPECT_EQ(row.at("female"), "0");
  EXPECT_EQ(row.at("acc_female"), "1.000");
}

TEST(Report, CsvAndJsonAgree) {
  auto os = dalle3_gender();
  add(os, "SDXL", t2i(Dimension::kRace), "nurses", "caucasian", 901);
  add(os, "SDXL", t2i(Dimension::kRace), "nurses", "asian", 1);
  const auto rows = build_report(os);
  const auto csv = report_csv(rows);
  const auto json = report_json(rows);
  ASSERT_EQ(json.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto row = csv_row(csv, i);
    const auto& j = json[i];
    EXPECT_EQ(row.at("model"), j["model"].get<std::string>());
    EXPECT_EQ(row.at("N"), std::to_string(j["N"].get<std::int64_t>()));
    EXPECT_EQ(row.at("delta_n"), format_metric(j["delta_n"].get<double>()));
    if (j["ag"].is_null()) {
      EXPECT_EQ(row.at("ag"), "NA");
    } else {
      EXPECT_EQ(row.at("ag"), format_metric(j["ag"].get<double>()));
    }
  }
}

TEST(Report, EmitReportWritesFiles) {
  TempDir dir("report");
  const auto os = dalle3_gender();
  emit_report(os, ReportFormat::kCsv, dir / "r.csv");
  emit_report(os, ReportFormat::kJson, dir / "r.json");
  EXPECT_EQ(slurp(dir / "r.csv"), report_csv(build_report(os)));
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "r.json")).size(), 1u);
  EXPECT_THROW(emit_report({}, ReportFormat::kCsv, dir / "empty.csv"), Error);
  EXPECT_THROW(parse_report_format("xml"), Error);
}

TEST(Report, MetricsJsonHasBreakdown) {
  auto os = dalle3_gender();
  add(os, "DALL-E-3", t2i(Dimension::kGender), "nurses", "female", 10);
  const auto j = metrics_json(os);
  ASSERT_EQ(j.size(), 1u);
  const auto& by = j[0]["by_profession"];
  EXPECT_TRUE(by.contains("bakers"));
  EXPECT_TRUE(by.contains("nurses"));
  EXPECT_DOUBLE_EQ(by["nurses"]["ag"].get<double>(), 1.0);
}

TEST(Report, CensusParsing) {
  std::istringstream in("profession,female_share\nBakers,0.5\n\nNurses,1.0\nAstronauts,0\n");
  const std::set<std::string> known{"bakers", "nurses"};
  const auto rs = parse_census(in, &known);
  ASSERT_EQ(rs.size(), 3u);
  EXPECT_DOUBLE_EQ(rs[0].ag_scale(), 0.0);
  EXPECT_DOUBLE_EQ(rs[1].ag_scale(), 1.0);
  EXPECT_DOUBLE_EQ(rs[2].ag_scale(), -1.0);
  EXPECT_EQ(rs[1].profession_id, "nurses");
  EXPECT_TRUE(rs[1].known);
  EXPECT_FALSE(rs[2].known);
}

TEST(Report, CensusErrorsNameTheLine) {
  const auto error_of = [](const std::string& text) -> std::string {
    std::istringstream in(text);
    try {
      parse_census(in);
    } catch (const Error& e) {
      return e.what();
    }
    return {};
  };
  EXPECT_NE(error_of("profession,female_share\nBakers,1.2\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of("profession,female_share\nA,0.1\nB,abc\n").find("line 3"), std::string::npos);
  EXPECT_NE(error_of("profession,female_share\nA,0.1,3\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of("name,share\n").find("line 1"), std::string::npos);
  EXPECT_FALSE(error_of("").empty());
  EXPECT_FALSE(error_of("profession,female_share\nA,-0.1\n").empty());
}

TEST(Report, HeatmapWithCensus) {
  std::vector<Outcome> os;
  const auto s = t2i(Dimension::kGender);
  add(os, "A", s, "bakers", "male", 3);
  add(os, "A", s, "bakers", "female", 1);
  add(os, "A", s, "nurses", "female", 2);
  add(os, "B", s, "bakers", "female", 2);
  add(os, "B", s, "chefs", "male", 2);
  std::map<std::string, ProfessionBreakdown> by_model;
  for (const std::string m : {"A", "B"}) {
    std::vector<Outcome> mine;
    for (const auto& o : os) {
      if (o.model == m) mine.push_back(o);
    }
    by_model[m] = per_profession(mine);
  }
  const std::vector<CensusRecord> census{{"Bakers", "bakers", 0.5, true},
                                         {"Nurses", "nurses", 0.9, true}};
  const auto m = build_heatmap(by_model, HeatmapMetric::kAg, Dimension::kGender, census);
  ASSERT_EQ(m.rows, (std::vector<std::string>{"bakers", "chefs", "nurses"}));
  ASSERT_EQ(m.columns, (std::vector<std::string>{"A", "B"}));
  EXPECT_DOUBLE_EQ(*m.cells[0][0], -0.5);
  EXPECT_FALSE(m.cells[1][0].has_value());
  EXPECT_DOUBLE_EQ(*m.cells[2][0], 1.0);
  EXPECT_EQ(heatmap_csv(m),
            "profession,A,B,census\n"
            "bakers,-0.500,1.000,0.000\n"
            "chefs,NA,-1.000,NA\n"
            "nurses,1.000,NA,0.800\n");

  EXPECT_THROW(build_heatmap(by_model, HeatmapMetric::kAg, Dimension::kRace), Error);
  EXPECT_THROW(build_heatmap(by_model, HeatmapMetric::kDeltaN, Dimension::kAge, census), Error);
  EXPECT_THROW(build_heatmap(by_model, HeatmapMetric::kDeltaN, Dimension::kAge), Error);
  EXPECT_THROW(build_heatmap({}, HeatmapMetric::kDeltaN, Dimension::kGender), Error);
  EXPECT_NO_THROW(build_heatmap(by_model, HeatmapMetric::kDeltaN, Dimension::kGender));
}

TEST(Report, HeatmapMetricNames) {
  for (auto m : {HeatmapMetric::kAg, HeatmapMetric::kDeltaAg, HeatmapMetric::kDeltaN}) {
    EXPECT_EQ(parse_heatmap_metric(to_string(m)), m);
  }
  EXPECT_THROW(parse_heatmap_metric("bias"), Error);
}
