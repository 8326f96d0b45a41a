#include "vlmbias/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <ctime>
#include <fstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "vlmbias/digest.hpp"
#include "vlmbias/http_backend.hpp"
#include "vlmbias/report.hpp"

namespace vlmbias {
namespace {

// Local backends never need throttling.
constexpr int kUnthrottled = 1'000'000;

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.empty() || path.is_absolute() || base.empty()) return path;
  return base / path;
}

SimulatorProfile default_profile() {
  SimulatorProfile p;
  for (Dimension d : kAllDimensions) {
    const auto cats = categories_of(d);
    const double share = 1.0 / static_cast<double>(cats.size() + 1);
    Distribution dist;
    for (auto c : cats) dist[std::string(c)] = share;
    dist[std::string(kNoPreference)] = 1.0 - share * static_cast<double>(cats.size());
    p.by_dimension[d] = dist;
  }
  return p;
}

EndpointSpec parse_endpoint(const nlohmann::json& j, const std::filesystem::path& base) {
  EndpointSpec spec;
  spec.kind = parse_backend_kind(j.value("backend", std::string("http")));
  const std::string name = j.at("name").get<std::string>();
  nlohmann::json cfg = j;
  if (spec.kind != BackendKind::kHttp) {
    if (!cfg.contains("model")) cfg["model"] = name;
    if (!cfg.contains("rate_limit_per_min")) cfg["rate_limit_per_min"] = kUnthrottled;
  }
  switch (spec.kind) {
    case BackendKind::kHttp:
      if (!j.contains("base_url")) throw ConfigError("endpoint '" + name + "' needs base_url");
      break;
    case BackendKind::kSimulator:
      cfg["capability"] = "chat";
      if (j.contains("profile")) spec.profile = j["profile"].get<SimulatorProfile>();
      break;
    case BackendKind::kSimulatorClassifier:
      cfg["capability"] = "vqa_classify";
      break;
    case BackendKind::kScripted:
      if (!cfg.contains("capability")) cfg["capability"] = "chat";
      if (!j.contains("script")) throw ConfigError("scripted endpoint '" + name + "' needs a script");
      if (j["script"].is_string()) {
        const auto path = resolve(base, j["script"].get<std::string>());
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open script " + path.string());
        spec.script = nlohmann::json::parse(in);
      } else {
        spec.script = j["script"];
      }
      break;
  }
  spec.config = cfg.get<EndpointConfig>();
  spec.config.name = name;
  return spec;
}

std::vector<Direction> servable(Capability c) {
  switch (c) {
    case Capability::kChat:
      return {Direction::kImageToText, Direction::kTextToText};
    case Capability::kImageGen:
      return {Direction::kTextToImage};
    case Capability::kImageEdit:
      return {Direction::kImageToImage};
    case Capability::kVqaClassify:
      return {};
  }
  return {};
}

struct Cell {
  std::size_t target = 0;
  RenderedProbe probe;
};

}  // namespace

std::string_view to_string(BackendKind k) {
  switch (k) {
    case BackendKind::kHttp:
      return "http";
    case BackendKind::kSimulator:
      return "simulator";
    case BackendKind::kSimulatorClassifier:
      return "simulator_classifier";
    case BackendKind::kScripted:
      return "scripted";
  }
  return "?";
}

BackendKind parse_backend_kind(std::string_view s) {
  if (s == "http") return BackendKind::kHttp;
  if (s == "simulator") return BackendKind::kSimulator;
  if (s == "simulator_classifier") return BackendKind::kSimulatorClassifier;
  if (s == "scripted") return BackendKind::kScripted;
  throw ConfigError("unknown backend '" + std::string(s) + "'");
}

std::vector<std::string> default_inputs(const ProbeSpec& spec) {
  std::vector<std::string> inputs{std::string(kNeutralSubject)};
  if (has_image_input(spec.direction)) {
    for (auto c : categories_of(spec.dimension)) {
      inputs.emplace_back(subject_for(spec.dimension, c));
    }
  }
  return inputs;
}

bool ProbeFilter::matches(const ProbeSpec& spec) const {
  if (direction && spec.direction != *direction) return false;
  if (dimension && spec.dimension != *dimension) return false;
  if (info_mode && spec.info_mode != *info_mode) return false;
  if (style && spec.style != *style) return false;
  if (culture && spec.culture != culture) return false;
  return true;
}

void PipelineConfig::validate() const {
  if (run_id.empty()) throw ConfigError("run_id is empty");
  if (samples_per_probe < 1) throw ConfigError("samples_per_probe must be at least 1");
  if (concurrency < 1) throw ConfigError("concurrency must be at least 1");
  for (const auto& t : targets) {
    if (!endpoints.contains(t.endpoint)) {
      throw ConfigError("target '" + t.name + "' uses unknown endpoint '" + t.endpoint + "'");
    }
  }
  for (const auto* name : {&classifier, &generator, &imagegen}) {
    if (*name && !endpoints.contains(**name)) {
      throw ConfigError("unknown endpoint '" + **name + "'");
    }
  }
  for (const auto& p : predictors) {
    if (!endpoints.contains(p)) throw ConfigError("unknown predictor endpoint '" + p + "'");
  }
  for (const auto& m : probe_matrix) {
    try {
      m.spec.validate();
      for (const auto& input : m.inputs) subject_variant(input);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(std::string("probe matrix: ") + e.what());
    }
  }
  simulator.validate();
}

PipelineConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  PipelineConfig c;
  try {
    c.snapshot = j;
    c.run_id = j.value("run_id", c.run_id);
    c.seed = j.value("seed", c.seed);
    c.corpus = resolve(base_dir, j.value("corpus", std::string()));
    c.professions = resolve(base_dir, j.value("professions", std::string()));
    c.output_dir = resolve(base_dir, j.value("output_dir", c.output_dir.string()));
    c.cache_dir = resolve(base_dir, j.value("cache_dir", c.cache_dir.string()));
    c.image_dir = resolve(base_dir, j.value("image_dir", c.image_dir.string()));
    c.samples_per_probe = j.value("samples_per_probe", c.samples_per_probe);
    c.concurrency = j.value("concurrency", c.concurrency);

    for (const auto& e : j.value("endpoints", nlohmann::json::array())) {
      EndpointSpec spec = parse_endpoint(e, base_dir);
      const std::string name = spec.config.name;
      if (!c.endpoints.emplace(name, std::move(spec)).second) {
        throw ConfigError("duplicate endpoint '" + name + "'");
      }
    }
    for (const auto& t : j.value("targets", nlohmann::json::array())) {
      TargetSpec target;
      target.endpoint = t.at("endpoint").get<std::string>();
      target.name = t.value("name", target.endpoint);
      for (const auto& d : t.value("directions", nlohmann::json::array())) {
        target.directions.push_back(parse_direction(d.get<std::string>()));
      }
      c.targets.push_back(std::move(target));
    }

    const nlohmann::json matrix = j.value("probe_matrix", nlohmann::json("all"));
    if (matrix.is_string()) {
      if (matrix.get<std::string>() != "all") throw ConfigError("probe_matrix must be a list or \"all\"");
      for (const auto& spec : legal_probe_specs()) c.probe_matrix.push_back({spec, {}});
    } else {
      for (const auto& m : matrix) {
        MatrixEntry entry;
        entry.spec = m.get<ProbeSpec>();
        entry.inputs = m.value("inputs", std::vector<std::string>{});
        c.probe_matrix.push_back(std::move(entry));
      }
    }

    if (j.contains("classifier")) c.classifier = j["classifier"].get<std::string>();
    if (j.contains("generator")) c.generator = j["generator"].get<std::string>();
    if (j.contains("imagegen")) c.imagegen = j["imagegen"].get<std::string>();
    c.predictors = j.value("predictors", std::vector<std::string>{});
    c.simulator = j.contains("simulator") ? j["simulator"].get<SimulatorProfile>() : default_profile();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(j, path.parent_path());
}

// ---------------------------------------------------------------------------

EndpointRegistry::EndpointRegistry(const PipelineConfig& config, std::unique_ptr<Clock> clock)
    : cache_(config.cache_dir),
      images_(config.image_dir),
      clock_(clock ? std::move(clock) : std::make_unique<SystemClock>()) {
  for (const auto& [name, spec] : config.endpoints) {
    if (spec.kind == BackendKind::kSimulator) continue;
    add(spec.config, make_backend(spec));
  }
}

Gateway& EndpointRegistry::gateway(const std::string& name) {
  auto it = gateways_.find(name);
  if (it == gateways_.end()) throw ConfigError("no gateway for endpoint '" + name + "'");
  return *it->second;
}

Gateway& EndpointRegistry::add(EndpointConfig config, std::shared_ptr<Backend> backend) {
  const std::string name = config.name;
  auto gw = std::make_unique<Gateway>(std::move(config), std::move(backend),
                                      Gateway::Resources{&cache_, &images_, clock_.get()});
  auto& slot = gateways_[name];
  slot = std::move(gw);
  return *slot;
}

std::shared_ptr<Backend> make_backend(const EndpointSpec& spec) {
  switch (spec.kind) {
    case BackendKind::kHttp:
      return std::make_shared<HttpBackend>(
          spec.config, std::shared_ptr<Transport>(
                           make_httplib_transport(spec.config.base_url, spec.config.timeout)));
    case BackendKind::kSimulatorClassifier:
      return std::make_shared<SimulatedClassifierBackend>();
    case BackendKind::kScripted:
      return ScriptedBackend::from_json(spec.script);
    case BackendKind::kSimulator:
      break;
  }
  throw ConfigError("endpoint '" + spec.config.name + "' has no network backend");
}

std::string sample_nonce(int sample_index) {
  return sample_index == 0 ? std::string() : "sample-" + std::to_string(sample_index);
}

RawResponse GatewayResponder::respond(const RenderedProbe& probe) {
  const std::string nonce = sample_nonce(probe.sample_index);
  switch (probe.spec.direction) {
    case Direction::kImageToText:
    case Direction::kTextToText: {
      ChatRequest request;
      request.messages.push_back({"user", probe.prompt_text});
      request.image = probe.image_ref;
      request.nonce = nonce;
      return gateway_.chat(request);
    }
    case Direction::kTextToImage:
      return gateway_.generate_image(probe.prompt_text, nonce);
    case Direction::kImageToImage:
      return gateway_.edit_image(*probe.image_ref, probe.prompt_text, nonce);
  }
  throw Error("unknown direction");
}

bool GatewayResponder::supports(Direction direction) const {
  const auto dirs = servable(gateway_.config().capability);
  return std::find(dirs.begin(), dirs.end(), direction) != dirs.end();
}

Outcome resolve_outcome(const RenderedProbe& probe, const std::string& model,
                        const RawResponse& response, Gateway* classifier) {
  Outcome o;
  o.entry_id = probe.entry_id;
  o.profession_id = probe.profession_id;
  o.model = model;
  o.spec = probe.spec;
  o.input_key = probe.input_key;
  o.sample_index = probe.sample_index;
  o.gold_label = probe.gold_label;
  o.predicted = std::string(kNotApplicable);

  if (response.refused) {
    o.raw_text = response.refusal_reason.empty() ? "refused" : response.refusal_reason;
    return o;
  }
  if (has_text_output(probe.spec.direction)) {
    o.raw_text = response.text;
    o.predicted = normalize_response(response.text, probe.spec);
    return o;
  }
  if (!response.image) return o;
  if (classifier == nullptr) throw Error("image outputs need a classifier endpoint");
  try {
    const RawResponse answer = classifier->ask_attribute(*response.image, probe.spec.dimension);
    o.raw_text = answer.refused ? answer.refusal_reason : answer.text;
    if (!answer.refused) o.predicted = normalize_attribute_answer(answer.text, probe.spec.dimension);
  } catch (const EndpointError& e) {
    spdlog::error("classifier '{}' failed on {}: {}", classifier->config().name,
                  response.image->sha256, e.what());
  }
  return o;
}

void to_json(nlohmann::json& j, const CellFailure& f) {
  j = nlohmann::json{{"model", f.model},          {"entry_id", f.entry_id},
                     {"probe", f.probe_key},      {"input_key", f.input_key},
                     {"sample_index", f.sample_index}, {"error", f.error}};
}

void to_json(nlohmann::json& j, const RunManifest& m) {
  j = nlohmann::json{{"run_id", m.run_id},
                     {"config", m.config},
                     {"corpus_sha256", m.corpus_sha256},
                     {"endpoints", m.endpoints},
                     {"specs", m.specs},
                     {"started_at", m.started_at},
                     {"finished_at", m.finished_at},
                     {"outputs", m.outputs},
                     {"outcome_count", m.outcome_count},
                     {"failure_count", m.failure_count},
                     {"offline", m.offline}};
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void attach_placeholder_images(std::vector<CorpusEntry>& entries, ImageStore& images) {
  for (auto& entry : entries) {
    for (const auto& [key, text] : entry.renderings) {
      if (entry.image_refs.contains(key) && images.contains(entry.image_refs[key])) continue;
      const std::string png =
          make_tagged_png({{"vlmbias:subject", key}, {"vlmbias:entry", entry.id}});
      entry.image_refs[key] = images.put(png).ref;
    }
  }
}

RunResult run_pipeline(const PipelineConfig& config, const RunOptions& options,
                       std::unique_ptr<Clock> clock) {
  RunResult result;
  RunManifest& manifest = result.manifest;
  manifest.run_id = config.run_id;
  manifest.config = config.snapshot;
  manifest.offline = options.offline;
  manifest.started_at = utc_timestamp();

  // Everything that can fail without touching the network happens first.
  if (config.corpus.empty()) throw ConfigError("config names no corpus file");
  if (!std::filesystem::exists(config.corpus)) {
    throw ConfigError("corpus file " + config.corpus.string() + " does not exist");
  }
  std::vector<CorpusEntry> corpus;
  try {
    corpus = read_corpus(config.corpus);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (corpus.empty()) throw ConfigError("corpus " + config.corpus.string() + " is empty");
  manifest.corpus_sha256 = sha256_hex(read_file(config.corpus));

  std::vector<const TargetSpec*> targets;
  for (const auto& t : config.targets) {
    if (!options.filter.model || *options.filter.model == t.name) targets.push_back(&t);
  }
  if (targets.empty()) throw ConfigError("no target models selected");

  EndpointRegistry registry(config, std::move(clock));
  const std::uint64_t seed = options.seed.value_or(config.seed);

  std::vector<std::unique_ptr<ProbeResponder>> responders;
  bool all_simulated = true;
  for (const auto* t : targets) {
    const EndpointSpec& ep = config.endpoints.at(t->endpoint);
    if (options.offline || ep.kind == BackendKind::kSimulator) {
      SimulatorProfile profile = ep.profile.value_or(config.simulator);
      profile.seed = seed;
      responders.push_back(std::make_unique<SimulatorResponder>(profile, registry.images()));
    } else {
      all_simulated = false;
      responders.push_back(std::make_unique<GatewayResponder>(registry.gateway(t->endpoint)));
    }
    manifest.endpoints.push_back(t->name + "=" + (options.offline ? "simulator" : t->endpoint));
  }

  if (all_simulated) attach_placeholder_images(corpus, registry.images());

  std::vector<Cell> cells;
  std::vector<ProbeSpec> specs;
  bool needs_classifier = false;
  for (std::size_t ti = 0; ti < targets.size(); ++ti) {
    for (const auto& m : config.probe_matrix) {
      if (!options.filter.matches(m.spec)) continue;
      const auto& allowed = targets[ti]->directions;
      if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), m.spec.direction) == allowed.end()) {
        continue;
      }
      if (!responders[ti]->supports(m.spec.direction)) continue;
      if (std::find(specs.begin(), specs.end(), m.spec) == specs.end()) specs.push_back(m.spec);
      if (!has_text_output(m.spec.direction)) needs_classifier = true;
      const auto inputs = m.inputs.empty() ? default_inputs(m.spec) : m.inputs;
      for (const auto& entry : corpus) {
        for (const auto& input : inputs) {
          for (int s = 0; s < config.samples_per_probe; ++s) {
            try {
              cells.push_back({ti, render_probe(entry, m.spec, input, s)});
            } catch (const Error& e) {
              throw ConfigError(std::string("cannot render probe: ") + e.what());
            }
          }
        }
      }
    }
  }
  if (cells.empty()) throw ConfigError("the probe matrix selects no cells");
  std::sort(specs.begin(), specs.end());
  manifest.specs = specs;

  Gateway* classifier = nullptr;
  if (needs_classifier) {
    if (options.offline) {
      EndpointConfig c;
      c.name = "offline-classifier";
      c.model = "simulated-classifier";
      c.capability = Capability::kVqaClassify;
      c.rate_limit_per_min = kUnthrottled;
      classifier = &registry.add(c, std::make_shared<SimulatedClassifierBackend>());
    } else if (config.classifier) {
      classifier = &registry.gateway(*config.classifier);
    } else {
      throw ConfigError("image-output probes need a classifier endpoint");
    }
    if (classifier->config().capability != Capability::kVqaClassify) {
      throw ConfigError("classifier endpoint must have capability vqa_classify");
    }
  }

  std::vector<std::optional<Outcome>> outcomes(cells.size());
  std::vector<std::optional<CellFailure>> failures(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const Cell& cell = cells[i];
      const std::string& model = targets[cell.target]->name;
      try {
        const RawResponse response = responders[cell.target]->respond(cell.probe);
        outcomes[i] = resolve_outcome(cell.probe, model, response, classifier);
      } catch (const std::exception& e) {
        spdlog::error("{} {} {}: {}", model, cell.probe.entry_id, cell.probe.spec.key(), e.what());
        failures[i] = CellFailure{model,
                                  cell.probe.entry_id,
                                  cell.probe.spec.key(),
                                  cell.probe.input_key,
                                  cell.probe.sample_index,
                                  e.what()};
      }
    }
  };
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(config.concurrency), cells.size());
  std::vector<std::jthread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  pool.clear();

  for (auto& o : outcomes) {
    if (o) result.outcomes.push_back(std::move(*o));
  }
  for (auto& f : failures) {
    if (f) result.failures.push_back(std::move(*f));
  }

  const auto& dir = config.output_dir;
  std::filesystem::create_directories(dir);
  write_outcomes(dir / "outcomes.jsonl", result.outcomes);
  manifest.outputs["outcomes"] = "outcomes.jsonl";
  {
    std::string text;
    for (const auto& f : result.failures) text += nlohmann::json(f).dump() + "\n";
    write_file_atomic(dir / "failures.jsonl", text);
    manifest.outputs["failures"] = "failures.jsonl";
  }
  if (!result.outcomes.empty()) {
    emit_report(result.outcomes, ReportFormat::kCsv, dir / "report.csv");
    emit_report(result.outcomes, ReportFormat::kJson, dir / "report.json");
    write_file_atomic(dir / "metrics.json", metrics_json(result.outcomes).dump(2) + "\n");
    manifest.outputs["report_csv"] = "report.csv";
    manifest.outputs["report_json"] = "report.json";
    manifest.outputs["metrics"] = "metrics.json";
  }
  manifest.outcome_count = result.outcomes.size();
  manifest.failure_count = result.failures.size();
  manifest.finished_at = utc_timestamp();
  manifest.outputs["manifest"] = "manifest.json";
  write_file_atomic(dir / "manifest.json", nlohmann::json(manifest).dump(2) + "\n");
  return result;
}

// ---------------------------------------------------------------------------

void rank_actions(std::vector<ActionPrompt>& actions) {
  std::vector<std::size_t> order(actions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double sa = actions[a].quality_score.value_or(0.0);
    const double sb = actions[b].quality_score.value_or(0.0);
    if (sa != sb) return sa > sb;
    return actions[a].template_text < actions[b].template_text;
  });
  for (std::size_t r = 0; r < order.size(); ++r) actions[order[r]].rank = static_cast<int>(r + 1);
}

CorpusBuild build_corpus(std::span<const Profession> professions, Gateway& generator,
                         std::span<Gateway* const> predictors,
                         const SimilarityProvider& similarity, int retry_budget) {
  CorpusBuild build;
  for (const auto& profession : professions) {
    std::vector<ActionPrompt> actions = generate_actions(profession, generator, retry_budget);
    for (auto& a : actions) {
      a.quality_score = score_action_quality(a, profession.name, predictors, similarity);
    }
    rank_actions(actions);
    build.entries.push_back(make_entry(profession, select_best(actions)));
    build.actions.insert(build.actions.end(), actions.begin(), actions.end());
  }
  return build;
}

}  // namespace vlmbias
