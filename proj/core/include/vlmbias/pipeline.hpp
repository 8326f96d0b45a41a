#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlmbias/corpus.hpp"
#include "vlmbias/modelgate.hpp"
#include "vlmbias/outcome.hpp"
#include "vlmbias/probekit.hpp"
#include "vlmbias/simulator.hpp"

namespace vlmbias {

/// Raised for configuration problems; the CLI maps it to exit code 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class BackendKind { kHttp, kSimulator, kSimulatorClassifier, kScripted };

std::string_view to_string(BackendKind k);
BackendKind parse_backend_kind(std::string_view s);

struct EndpointSpec {
  BackendKind kind = BackendKind::kHttp;
  EndpointConfig config;
  std::optional<SimulatorProfile> profile;  // simulator
  nlohmann::json script;                    // scripted
};

struct TargetSpec {
  std::string name;      // model column in reports
  std::string endpoint;
  std::vector<Direction> directions;  // empty: every direction the endpoint can serve
};

struct MatrixEntry {
  ProbeSpec spec;
  std::vector<std::string> inputs;  // empty: default_inputs(spec)
};

struct PipelineConfig {
  std::string run_id = "run";
  std::uint64_t seed = 0;
  std::filesystem::path corpus;
  std::filesystem::path professions;
  std::filesystem::path output_dir = "out";
  std::filesystem::path cache_dir = "cache";
  std::filesystem::path image_dir = "images";
  int samples_per_probe = 1;
  int concurrency = 4;
  std::map<std::string, EndpointSpec> endpoints;
  std::vector<TargetSpec> targets;
  std::vector<MatrixEntry> probe_matrix;
  std::optional<std::string> classifier;
  std::optional<std::string> generator;
  std::vector<std::string> predictors;
  std::optional<std::string> imagegen;
  SimulatorProfile simulator;
  nlohmann::json snapshot;  // the document as loaded

  void validate() const;
};

/// Relative paths resolve against `base_dir`. Throws ConfigError.
PipelineConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);

/// Inputs probed when a matrix entry lists none: the neutral subject, plus the
/// category subjects for image-input directions.
std::vector<std::string> default_inputs(const ProbeSpec& spec);

/// Restricts a run; unset fields match everything.
struct ProbeFilter {
  std::optional<Direction> direction;
  std::optional<Dimension> dimension;
  std::optional<InfoMode> info_mode;
  std::optional<Style> style;
  std::optional<Culture> culture;
  std::optional<std::string> model;

  bool matches(const ProbeSpec& spec) const;
};

struct RunOptions {
  bool offline = false;  // every target and the classifier become simulators
  std::optional<std::uint64_t> seed;
  ProbeFilter filter;
};

/// Owns the cache, image store, clock and one gateway per configured endpoint.
class EndpointRegistry {
 public:
  EndpointRegistry(const PipelineConfig& config, std::unique_ptr<Clock> clock = nullptr);

  Gateway& gateway(const std::string& name);
  bool has(const std::string& name) const { return gateways_.contains(name); }
  ImageStore& images() { return images_; }
  ResponseCache& cache() { return cache_; }
  Clock& clock() { return *clock_; }

  /// Registers an extra gateway, e.g. the offline classifier.
  Gateway& add(EndpointConfig config, std::shared_ptr<Backend> backend);

 private:
  ResponseCache cache_;
  ImageStore images_;
  std::unique_ptr<Clock> clock_;
  std::map<std::string, std::unique_ptr<Gateway>> gateways_;
};

std::shared_ptr<Backend> make_backend(const EndpointSpec& spec);

/// Something that answers rendered probes for one target model.
class ProbeResponder {
 public:
  virtual ~ProbeResponder() = default;
  virtual RawResponse respond(const RenderedProbe& probe) = 0;
  virtual bool supports(Direction direction) const = 0;
};

class GatewayResponder final : public ProbeResponder {
 public:
  explicit GatewayResponder(Gateway& gateway) : gateway_(gateway) {}
  RawResponse respond(const RenderedProbe& probe) override;
  bool supports(Direction direction) const override;

 private:
  Gateway& gateway_;
};

class SimulatorResponder final : public ProbeResponder {
 public:
  SimulatorResponder(SimulatorProfile profile, ImageStore& images)
      : profile_(std::move(profile)), images_(images) {}
  RawResponse respond(const RenderedProbe& probe) override { return simulate(profile_, probe, &images_); }
  bool supports(Direction) const override { return true; }

 private:
  SimulatorProfile profile_;
  ImageStore& images_;
};

/// Nonce separating repeated samples of one probe; empty for sample 0.
std::string sample_nonce(int sample_index);

/// Turns a response into an outcome. Image outputs go through `classifier`;
/// refusals and classifier failures become NA.
Outcome resolve_outcome(const RenderedProbe& probe, const std::string& model,
                        const RawResponse& response, Gateway* classifier);

struct CellFailure {
  std::string model;
  std::string entry_id;
  std::string probe_key;
  std::string input_key;
  int sample_index = 0;
  std::string error;
};

void to_json(nlohmann::json& j, const CellFailure& f);

struct RunManifest {
  std::string run_id;
  nlohmann::json config;
  std::string corpus_sha256;
  std::vector<std::string> endpoints;
  std::vector<ProbeSpec> specs;
  std::string started_at;
  std::string finished_at;
  std::map<std::string, std::string> outputs;  // role -> file name inside output_dir
  std::size_t outcome_count = 0;
  std::size_t failure_count = 0;
  bool offline = false;
};

void to_json(nlohmann::json& j, const RunManifest& m);

struct RunResult {
  RunManifest manifest;
  std::vector<Outcome> outcomes;
  std::vector<CellFailure> failures;

  /// 0 when every cell produced an outcome, 2 when some endpoint failed.
  int exit_code() const { return failures.empty() ? 0 : 2; }
};

/// Loads the corpus, probes every (target, spec, entry, input, sample) cell
/// once, and writes outcomes.jsonl, failures.jsonl, report.csv, report.json,
/// metrics.json and manifest.json into the output directory.
RunResult run_pipeline(const PipelineConfig& config, const RunOptions& options = {},
                       std::unique_ptr<Clock> clock = nullptr);

// --- corpus stages -------------------------------------------------------------

/// Gives every entry without images a synthetic tagged PNG per rendering so
/// image-input probes can run offline.
void attach_placeholder_images(std::vector<CorpusEntry>& entries, ImageStore& images);

/// generate -> score -> select -> render for each profession. Actions keep
/// their scores and ranks; the entry uses the best one.
struct CorpusBuild {
  std::vector<ActionPrompt> actions;
  std::vector<CorpusEntry> entries;
};

CorpusBuild build_corpus(std::span<const Profession> professions, Gateway& generator,
                         std::span<Gateway* const> predictors,
                         const SimilarityProvider& similarity, int retry_budget = 3);

/// Ranks `actions` of one profession in place (1 = best) by quality score.
void rank_actions(std::vector<ActionPrompt>& actions);

std::string utc_timestamp();

}  // namespace vlmbias
