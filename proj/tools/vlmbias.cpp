// vlmbias command-line front end.
//
//   vlmbias corpus generate --config run.json --out actions.jsonl
//   vlmbias corpus filter   --config run.json --actions actions.jsonl --out corpus.jsonl
//   vlmbias corpus images   --config run.json --corpus corpus.jsonl --out corpus_img.jsonl
//   vlmbias probe run       --config run.json [--offline] [--seed N] [filters]
//   vlmbias classify        --config run.json --dimension gender --image a.png ...
//   vlmbias score           --outcomes outcomes.jsonl [filters]
//   vlmbias report          --outcomes outcomes.jsonl --format csv --out report.csv
//   vlmbias heatmap         --outcomes outcomes.jsonl --metric delta_n --dimension gender ...
//
// Exit status: 0 success, 1 configuration or input error, 2 partial endpoint failure.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "vlmbias/biasmath.hpp"
#include "vlmbias/corpus.hpp"
#include "vlmbias/outcome.hpp"
#include "vlmbias/pipeline.hpp"
#include "vlmbias/report.hpp"

namespace vb = vlmbias;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitPartial = 2;

struct FilterArgs {
  std::string direction;
  std::string dimension;
  std::string mode;
  std::string style;
  std::string culture;
  std::string model;

  void attach(CLI::App* cmd, bool with_dimension = true) {
    cmd->add_option("--direction", direction, "image_to_text, text_to_text, text_to_image, image_to_image (or i2t, t2t, t2i, i2i)");
    if (with_dimension) cmd->add_option("--dimension", dimension, "gender, race or age");
    cmd->add_option("--mode", mode, "Information mode")->check(CLI::IsMember({"blind", "informed"}));
    cmd->add_option("--style", style, "Probe style")->check(CLI::IsMember({"direct", "indirect"}));
    cmd->add_option("--culture", culture, "Actor set for indirect probes")
        ->check(CLI::IsMember({"us", "in", "ko"}));
    cmd->add_option("--model", model, "Restrict to one target model");
  }

  vb::ProbeFilter build() const {
    vb::ProbeFilter f;
    if (!direction.empty()) f.direction = vb::parse_direction(direction);
    if (!dimension.empty()) f.dimension = vb::parse_dimension(dimension);
    if (!mode.empty()) f.info_mode = vb::parse_info_mode(mode);
    if (!style.empty()) f.style = vb::parse_style(style);
    if (!culture.empty()) f.culture = vb::parse_culture(culture);
    if (!model.empty()) f.model = model;
    return f;
  }
};

std::vector<vb::Outcome> select_outcomes(const std::string& path, const vb::ProbeFilter& filter) {
  std::vector<vb::Outcome> out;
  for (auto& o : vb::read_outcomes(path)) {
    if (filter.model && o.model != *filter.model) continue;
    if (!filter.matches(o.spec)) continue;
    out.push_back(std::move(o));
  }
  if (out.empty()) throw vb::Error("no outcomes in " + path + " match the filters");
  return out;
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  vb::write_file_atomic(path, text);
  spdlog::info("wrote {}", path);
}

std::vector<vb::Profession> load_professions(const vb::PipelineConfig& config,
                                             const std::string& override_path) {
  const std::filesystem::path path =
      override_path.empty() ? config.professions : std::filesystem::path(override_path);
  if (path.empty()) throw vb::ConfigError("no profession list given (--professions or config)");
  return vb::read_profession_list(path);
}

std::string need_endpoint(const std::optional<std::string>& name, const char* role) {
  if (!name) throw vb::ConfigError(std::string("config names no ") + role + " endpoint");
  return *name;
}

// --- commands -----------------------------------------------------------------

int cmd_corpus_generate(const std::string& config_path, const std::string& professions_path,
                        const std::string& out, int retries) {
  const auto config = vb::load_config(config_path);
  const auto professions = load_professions(config, professions_path);
  vb::EndpointRegistry registry(config);
  auto& generator = registry.gateway(need_endpoint(config.generator, "generator"));

  vb::JsonlAppender sink(out, true);
  int failed = 0;
  for (const auto& p : professions) {
    try {
      for (const auto& a : vb::generate_actions(p, generator, retries)) sink.append(a);
    } catch (const vb::Error& e) {
      spdlog::error("{}: {}", p.id, e.what());
      ++failed;
    }
  }
  spdlog::info("generated actions for {}/{} professions", professions.size() - failed,
               professions.size());
  return failed == 0 ? kExitOk : kExitPartial;
}

int cmd_corpus_filter(const std::string& config_path, const std::string& professions_path,
                      const std::string& actions_path, const std::string& out,
                      const std::string& scored_out) {
  const auto config = vb::load_config(config_path);
  const auto professions = load_professions(config, professions_path);
  if (config.predictors.empty()) throw vb::ConfigError("config names no predictor endpoints");
  vb::EndpointRegistry registry(config);
  std::vector<vb::Gateway*> predictors;
  for (const auto& name : config.predictors) predictors.push_back(&registry.gateway(name));

  std::map<std::string, std::vector<vb::ActionPrompt>> by_profession;
  {
    std::ifstream in(actions_path);
    if (!in) throw vb::Error("cannot open " + actions_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto a = nlohmann::json::parse(line).get<vb::ActionPrompt>();
      by_profession[a.profession_id].push_back(std::move(a));
    }
  }

  const vb::TrigramDiceSimilarity similarity;
  std::vector<vb::CorpusEntry> entries;
  std::vector<vb::ActionPrompt> scored;
  for (const auto& p : professions) {
    auto it = by_profession.find(p.id);
    if (it == by_profession.end()) {
      spdlog::warn("{}: no actions", p.id);
      continue;
    }
    auto& actions = it->second;
    for (auto& a : actions) {
      a.quality_score = vb::score_action_quality(a, p.name, predictors, similarity);
    }
    vb::rank_actions(actions);
    entries.push_back(vb::make_entry(p, vb::select_best(actions)));
    scored.insert(scored.end(), actions.begin(), actions.end());
  }
  vb::write_corpus(out, entries);
  if (!scored_out.empty()) {
    vb::JsonlAppender sink(scored_out, true);
    for (const auto& a : scored) sink.append(a);
  }
  spdlog::info("selected {} entries", entries.size());
  return kExitOk;
}

int cmd_corpus_images(const std::string& config_path, const std::string& corpus_path,
                      const std::string& out, const std::vector<std::string>& keys) {
  const auto config = vb::load_config(config_path);
  auto entries = vb::read_corpus(corpus_path.empty() ? config.corpus
                                                    : std::filesystem::path(corpus_path));
  vb::EndpointRegistry registry(config);
  auto& imagegen = registry.gateway(need_endpoint(config.imagegen, "imagegen"));

  bool partial = false;
  for (auto& e : entries) {
    std::vector<std::string> wanted = keys;
    if (wanted.empty()) {
      for (const auto& [k, text] : e.renderings) wanted.push_back(k);
    }
    e = vb::build_image_set(std::move(e), imagegen, wanted, registry.images());
    partial = partial || !e.image_failures.empty();
  }
  vb::write_corpus(out, entries);
  return partial ? kExitPartial : kExitOk;
}

int cmd_probe_run(const std::string& config_path, const FilterArgs& filters, bool offline,
                  std::optional<std::uint64_t> seed) {
  const auto config = vb::load_config(config_path);
  vb::RunOptions options;
  options.offline = offline;
  options.seed = seed;
  options.filter = filters.build();
  const auto result = vb::run_pipeline(config, options);
  spdlog::info("{} outcomes, {} failures -> {}", result.outcomes.size(), result.failures.size(),
               config.output_dir.string());
  return result.exit_code() == 0 ? kExitOk : kExitPartial;
}

int cmd_classify(const std::string& config_path, const std::string& dimension,
                 const std::vector<std::string>& images, bool offline) {
  const auto config = vb::load_config(config_path);
  const vb::Dimension dim = vb::parse_dimension(dimension);
  vb::EndpointRegistry registry(config);
  vb::Gateway* classifier = nullptr;
  if (offline) {
    vb::EndpointConfig c;
    c.name = "offline-classifier";
    c.model = "simulated-classifier";
    c.capability = vb::Capability::kVqaClassify;
    c.rate_limit_per_min = 1'000'000;
    classifier = &registry.add(c, std::make_shared<vb::SimulatedClassifierBackend>());
  } else {
    classifier = &registry.gateway(need_endpoint(config.classifier, "classifier"));
  }
  std::cout << "image,label\n";
  for (const auto& path : images) {
    const auto ref = registry.images().put(vb::read_file(path)).ref;
    std::cout << vb::csv_escape(path) << ',' << vb::classify_attribute(*classifier, ref, dim)
              << '\n';
  }
  return kExitOk;
}

int cmd_score(const std::string& outcomes_path, const FilterArgs& filters, const std::string& out) {
  const auto outcomes = select_outcomes(outcomes_path, filters.build());
  write_output(out, vb::metrics_json(outcomes).dump(2) + "\n");
  return kExitOk;
}

int cmd_report(const std::string& outcomes_path, const FilterArgs& filters,
               const std::string& format, const std::string& out) {
  const auto outcomes = select_outcomes(outcomes_path, filters.build());
  const auto fmt = vb::parse_report_format(format);
  if (out.empty() || out == "-") {
    const auto rows = vb::build_report(outcomes);
    std::cout << (fmt == vb::ReportFormat::kCsv ? vb::report_csv(rows)
                                                 : vb::report_json(rows).dump(2) + "\n");
    return kExitOk;
  }
  vb::emit_report(outcomes, fmt, out);
  spdlog::info("wrote {}", out);
  return kExitOk;
}

int cmd_heatmap(const std::string& outcomes_path, FilterArgs filters, const std::string& metric,
                const std::string& census_path, const std::string& out) {
  if (filters.dimension.empty()) throw vb::Error("heatmap needs --dimension");
  const auto outcomes = select_outcomes(outcomes_path, filters.build());
  const vb::Dimension dim = vb::parse_dimension(filters.dimension);

  std::map<std::string, std::vector<vb::Outcome>> by_model;
  std::map<std::string, std::set<vb::ProbeSpec>> specs;
  std::set<std::string> professions;
  for (const auto& o : outcomes) {
    by_model[o.model].push_back(o);
    specs[o.model].insert(o.spec);
    professions.insert(o.profession_id);
  }
  std::map<std::string, vb::ProfessionBreakdown> breakdowns;
  for (const auto& [model, group] : by_model) {
    if (specs[model].size() != 1) {
      throw vb::Error("model '" + model + "' has outcomes for " +
                      std::to_string(specs[model].size()) +
                      " probe settings; narrow with --direction/--mode/--style/--culture");
    }
    breakdowns[model] = vb::per_profession(group);
  }

  std::vector<vb::CensusRecord> census;
  if (!census_path.empty()) {
    census = vb::ingest_census(census_path, &professions);
    for (const auto& r : census) {
      if (!r.known) spdlog::warn("census profession '{}' is not in the outcomes", r.profession);
    }
  }
  const auto matrix = vb::build_heatmap(breakdowns, vb::parse_heatmap_metric(metric), dim, census);
  write_output(out, vb::heatmap_csv(matrix));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("vlmbias"));
  spdlog::set_pattern("[%l] %v");

  CLI::App app{"Probe vision-language models for social bias and score the outcomes"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  std::string config_path;
  std::string professions_path;
  std::string out;

  // corpus
  auto* corpus = app.add_subcommand("corpus", "Build the prompt corpus");
  corpus->require_subcommand(1);

  int retries = 3;
  auto* gen = corpus->add_subcommand("generate", "Generate action templates per profession");
  gen->add_option("--config", config_path, "Run config")->required()->check(CLI::ExistingFile);
  gen->add_option("--professions", professions_path, "Profession list (overrides config)");
  gen->add_option("--retries", retries, "Regeneration budget")->check(CLI::NonNegativeNumber);
  gen->add_option("-o,--out", out, "Actions JSONL")->required();

  std::string actions_path;
  std::string scored_out;
  auto* filt = corpus->add_subcommand("filter", "Score actions and keep the best per profession");
  filt->add_option("--config", config_path, "Run config")->required()->check(CLI::ExistingFile);
  filt->add_option("--professions", professions_path, "Profession list (overrides config)");
  filt->add_option("--actions", actions_path, "Actions JSONL")->required()->check(CLI::ExistingFile);
  filt->add_option("--scored", scored_out, "Also write every scored action here");
  filt->add_option("-o,--out", out, "Corpus JSONL")->required();

  std::string corpus_path;
  std::vector<std::string> keys;
  auto* imgs = corpus->add_subcommand("images", "Generate input images for corpus renderings");
  imgs->add_option("--config", config_path, "Run config")->required()->check(CLI::ExistingFile);
  imgs->add_option("--corpus", corpus_path, "Corpus JSONL (overrides config)");
  imgs->add_option("--key", keys, "Rendering keys to generate (default: all)");
  imgs->add_option("-o,--out", out, "Corpus JSONL with image references")->required();

  // probe
  FilterArgs filters;
  bool offline = false;
  std::optional<std::uint64_t> seed;
  auto* probe = app.add_subcommand("probe", "Run probes against target models");
  probe->require_subcommand(1);
  auto* run = probe->add_subcommand("run", "Probe, normalize, classify and report");
  run->add_option("--config", config_path, "Run config")->required()->check(CLI::ExistingFile);
  run->add_flag("--offline", offline, "Replace every model with the seeded simulator");
  run->add_option("--seed", seed, "Simulator seed (overrides config)");
  filters.attach(run);

  // classify
  std::string dimension;
  std::vector<std::string> images;
  auto* cls = app.add_subcommand("classify", "Label the subject of images with a VQA endpoint");
  cls->add_option("--config", config_path, "Run config")->required()->check(CLI::ExistingFile);
  cls->add_option("--dimension", dimension, "gender, race or age")->required();
  cls->add_option("--image", images, "Image files")->required()->check(CLI::ExistingFile);
  cls->add_flag("--offline", offline, "Use the simulated classifier");

  // score / report / heatmap
  std::string outcomes_path;
  auto* score = app.add_subcommand("score", "Metric bundles with per-profession breakdown");
  score->add_option("--outcomes", outcomes_path, "Outcomes JSONL")->required()->check(CLI::ExistingFile);
  score->add_option("-o,--out", out, "Output file (default stdout)");
  filters.attach(score);

  std::string format = "csv";
  auto* report = app.add_subcommand("report", "One row per model and probe setting");
  report->add_option("--outcomes", outcomes_path, "Outcomes JSONL")->required()->check(CLI::ExistingFile);
  report->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  report->add_option("-o,--out", out, "Output file (default stdout)");
  filters.attach(report);

  std::string metric = "delta_n";
  std::string census_path;
  auto* heat = app.add_subcommand("heatmap", "Professions x models matrix of one metric");
  heat->add_option("--outcomes", outcomes_path, "Outcomes JSONL")->required()->check(CLI::ExistingFile);
  heat->add_option("--metric", metric, "ag, delta_ag or delta_n")
      ->check(CLI::IsMember({"ag", "delta_ag", "delta_n"}));
  heat->add_option("--census", census_path, "profession,female_share CSV")->check(CLI::ExistingFile);
  heat->add_option("-o,--out", out, "Output file (default stdout)");
  filters.attach(heat);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  if (verbose) spdlog::set_level(spdlog::level::debug);

  try {
    if (*gen) return cmd_corpus_generate(config_path, professions_path, out, retries);
    if (*filt) return cmd_corpus_filter(config_path, professions_path, actions_path, out, scored_out);
    if (*imgs) return cmd_corpus_images(config_path, corpus_path, out, keys);
    if (*run) return cmd_probe_run(config_path, filters, offline, seed);
    if (*cls) return cmd_classify(config_path, dimension, images, offline);
    if (*score) return cmd_score(outcomes_path, filters, out);
    if (*report) return cmd_report(outcomes_path, filters, format, out);
    if (*heat) return cmd_heatmap(outcomes_path, filters, metric, census_path, out);
  } catch (const vb::EndpointError& e) {
    spdlog::error("{}", e.what());
    return kExitPartial;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  }
  return kExitConfig;
}
