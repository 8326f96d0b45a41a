#pragma once

// Deterministic stand-in for a biased model, used for offline runs and as an
// oracle for the metric engine.
//
// Sampling: state = seed XOR probe.fingerprint64(); x = splitmix64(state);
// u = (x >> 11) * 2^-53; the answer is the first label, in the order
// [categories..., no_preference, NA], whose cumulative probability exceeds u.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vlmbias/image_store.hpp"
#include "vlmbias/modelgate.hpp"
#include "vlmbias/probekit.hpp"

namespace vlmbias {

/// Probability per label; absent labels have probability zero.
using Distribution = std::map<std::string, double>;

struct SimulatorProfile {
  std::uint64_t seed = 0;
  std::map<Dimension, Distribution> by_dimension;
  std::map<std::pair<Dimension, std::string>, Distribution> by_profession;

  /// Profession-specific distribution when present, else the dimension one.
  const Distribution& distribution_for(Dimension dimension, std::string_view profession_id) const;
  void validate() const;
};

void to_json(nlohmann::json& j, const SimulatorProfile& p);
void from_json(const nlohmann::json& j, SimulatorProfile& p);

std::uint64_t splitmix64(std::uint64_t state);

/// Inverse-CDF draw over the dimension's canonical label order.
std::string sample_label(const Distribution& distribution, Dimension dimension, std::uint64_t state);

/// Text answer a simulated model gives for `label` under `probe`'s options.
std::string simulated_answer(const RenderedProbe& probe, std::string_view label);

/// Answers a rendered probe. Text directions return the option string of the
/// sampled label; image directions return a synthetic PNG tagged with it.
RawResponse simulate(const SimulatorProfile& profile, const RenderedProbe& probe,
                     ImageStore* images = nullptr);

/// VQA backend that reads the tag written by simulate(), so classification
/// round-trips exactly. Untagged images and no_preference tags answer "N/A".
class SimulatedClassifierBackend final : public Backend {
 public:
  BackendReply send(const BackendRequest& request) override;
};

/// Chat backend replaying canned answers. A rule matches when its `match`
/// substring occurs in the final message; successive matches walk `replies`
/// and then repeat the last one.
class ScriptedBackend final : public Backend {
 public:
  struct Rule {
    std::string match;
    std::vector<std::string> replies;
  };

  explicit ScriptedBackend(std::vector<Rule> rules);
  static std::shared_ptr<ScriptedBackend> from_json(const nlohmann::json& j);

  BackendReply send(const BackendRequest& request) override;

 private:
  std::vector<Rule> rules_;
  std::vector<std::size_t> cursor_;
  std::mutex mu_;
};

// --- synthetic images --------------------------------------------------------

/// Small valid grayscale PNG carrying `text` entries as tEXt chunks.
std::string make_tagged_png(const std::vector<std::pair<std::string, std::string>>& text);
/// Reads tEXt chunks from PNG bytes; returns nothing for malformed input.
std::optional<std::map<std::string, std::string>> read_png_text(std::string_view png);

}  // namespace vlmbias
