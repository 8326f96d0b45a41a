#include "vlmbias/simulator.hpp"

#include <cmath>

#include "vlmbias/outcome.hpp"

namespace vlmbias {
namespace {

constexpr std::string_view kTagPrefix = "vlmbias:";

std::vector<std::string_view> canonical_labels(Dimension dimension) {
  std::vector<std::string_view> labels(categories_of(dimension).begin(),
                                       categories_of(dimension).end());
  labels.push_back(kNoPreference);
  labels.push_back(kNotApplicable);
  return labels;
}

void validate_distribution(const Distribution& d, Dimension dimension, std::string_view where) {
  double sum = 0.0;
  for (const auto& [label, p] : d) {
    if (!is_legal_label(dimension, label)) {
      throw Error(std::string(where) + ": '" + label + "' is not a " +
                  std::string(to_string(dimension)) + " label");
    }
    if (!(p >= 0.0)) throw Error(std::string(where) + ": negative probability for " + label);
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw Error(std::string(where) + ": probabilities sum to " + std::to_string(sum));
  }
}

Distribution parse_distribution(const nlohmann::json& j) {
  Distribution d;
  for (const auto& [label, p] : j.items()) d[label] = p.get<double>();
  return d;
}

}  // namespace

const Distribution& SimulatorProfile::distribution_for(Dimension dimension,
                                                       std::string_view profession_id) const {
  if (auto it = by_profession.find({dimension, std::string(profession_id)});
      it != by_profession.end()) {
    return it->second;
  }
  if (auto it = by_dimension.find(dimension); it != by_dimension.end()) return it->second;
  throw Error("simulator profile has no " + std::string(to_string(dimension)) + " distribution");
}

void SimulatorProfile::validate() const {
  for (const auto& [dim, d] : by_dimension) validate_distribution(d, dim, to_string(dim));
  for (const auto& [key, d] : by_profession) {
    validate_distribution(d, key.first, key.second + "/" + std::string(to_string(key.first)));
  }
}

void to_json(nlohmann::json& j, const SimulatorProfile& p) {
  j = nlohmann::json{{"seed", p.seed},
                     {"distributions", nlohmann::json::object()},
                     {"professions", nlohmann::json::object()}};
  for (const auto& [dim, d] : p.by_dimension) j["distributions"][std::string(to_string(dim))] = d;
  for (const auto& [key, d] : p.by_profession) {
    j["professions"][key.second][std::string(to_string(key.first))] = d;
  }
}

void from_json(const nlohmann::json& j, SimulatorProfile& p) {
  p = SimulatorProfile{};
  p.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("distributions")) {
    for (const auto& [dim, d] : j["distributions"].items()) {
      p.by_dimension[parse_dimension(dim)] = parse_distribution(d);
    }
  }
  if (j.contains("professions")) {
    for (const auto& [profession, dims] : j["professions"].items()) {
      for (const auto& [dim, d] : dims.items()) {
        p.by_profession[{parse_dimension(dim), profession}] = parse_distribution(d);
      }
    }
  }
  p.validate();
}

std::uint64_t splitmix64(std::uint64_t state) {
  std::uint64_t z = state + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string sample_label(const Distribution& distribution, Dimension dimension,
                         std::uint64_t state) {
  const double u = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
  double cumulative = 0.0;
  std::string_view last_positive;
  for (std::string_view label : canonical_labels(dimension)) {
    auto it = distribution.find(std::string(label));
    if (it == distribution.end() || it->second <= 0.0) continue;
    cumulative += it->second;
    last_positive = label;
    if (u < cumulative) return std::string(label);
  }
  if (last_positive.empty()) throw Error("distribution has no positive mass");
  return std::string(last_positive);
}

std::string simulated_answer(const RenderedProbe& probe, std::string_view label) {
  if (label == kNotApplicable) {
    return "I'm sorry, but I can't determine that from the information provided.";
  }
  for (const auto& o : option_entries(probe.spec.dimension, probe.spec.style, probe.spec.culture)) {
    if (o.label == label) return std::string(o.text);
  }
  throw Error("no option for label '" + std::string(label) + "'");
}

RawResponse simulate(const SimulatorProfile& profile, const RenderedProbe& probe,
                     ImageStore* images) {
  const Distribution& distribution =
      profile.distribution_for(probe.spec.dimension, probe.profession_id);
  const std::string fingerprint = probe.fingerprint();
  const std::uint64_t state = profile.seed ^ probe.fingerprint64();
  const std::string label = sample_label(distribution, probe.spec.dimension, state);

  RawResponse r;
  r.model = "simulator";
  r.fingerprint = fingerprint;
  if (has_text_output(probe.spec.direction)) {
    r.kind = RawResponse::Kind::kText;
    r.text = simulated_answer(probe, label);
    return r;
  }
  if (images == nullptr) throw Error("simulated image output needs an image store");
  r.kind = RawResponse::Kind::kImage;
  r.format = "png";
  const std::string png = make_tagged_png(
      {{std::string(kTagPrefix) + std::string(to_string(probe.spec.dimension)), label},
       {std::string(kTagPrefix) + "probe", fingerprint}});
  r.image = images->put(png).ref;
  return r;
}

BackendReply SimulatedClassifierBackend::send(const BackendRequest& request) {
  BackendReply reply;
  if (request.capability != Capability::kVqaClassify || !request.attribute) {
    reply.status = BackendReply::Status::kFailed;
    reply.detail = "simulated classifier only answers attribute questions";
    return reply;
  }
  reply.status = BackendReply::Status::kOk;
  reply.text = "N/A";
  if (!request.image) return reply;
  const auto tags = read_png_text(*request.image);
  if (!tags) return reply;
  auto it = tags->find(std::string(kTagPrefix) + std::string(to_string(*request.attribute)));
  if (it == tags->end()) return reply;
  const std::string& label = it->second;
  if (label == kNoPreference || label == kNotApplicable) return reply;
  reply.text = std::string(category_display(*request.attribute, label));
  return reply;
}

ScriptedBackend::ScriptedBackend(std::vector<Rule> rules)
    : rules_(std::move(rules)), cursor_(rules_.size(), 0) {}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_json(const nlohmann::json& j) {
  std::vector<Rule> rules;
  for (const auto& r : j.at("rules")) {
    Rule rule;
    rule.match = r.at("match").get<std::string>();
    if (r.contains("replies")) {
      rule.replies = r["replies"].get<std::vector<std::string>>();
    } else {
      rule.replies.push_back(r.at("reply").get<std::string>());
    }
    if (rule.replies.empty()) throw Error("scripted rule '" + rule.match + "' has no replies");
    rules.push_back(std::move(rule));
  }
  return std::make_shared<ScriptedBackend>(std::move(rules));
}

BackendReply ScriptedBackend::send(const BackendRequest& request) {
  BackendReply reply;
  const std::string& last = request.messages.empty() ? request.prompt : request.messages.back().text;
  std::lock_guard lock(mu_);
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    if (last.find(rules_[i].match) == std::string::npos) continue;
    const auto& replies = rules_[i].replies;
    reply.text = replies[std::min(cursor_[i], replies.size() - 1)];
    ++cursor_[i];
    reply.status = BackendReply::Status::kOk;
    return reply;
  }
  reply.status = BackendReply::Status::kFailed;
  reply.detail = "no scripted reply matches the request";
  return reply;
}

}  // namespace vlmbias
