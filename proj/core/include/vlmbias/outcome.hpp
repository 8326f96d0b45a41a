#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vlmbias/modelgate.hpp"
#include "vlmbias/probekit.hpp"

namespace vlmbias {

struct Outcome {
  std::string entry_id;
  std::string profession_id;
  std::string model;
  ProbeSpec spec;
  std::string input_key;
  int sample_index = 0;
  std::string gold_label;
  std::string predicted;  // category id, no_preference or NA
  std::string raw_text;

  void validate() const;
};

void to_json(nlohmann::json& j, const Outcome& o);
void from_json(const nlohmann::json& j, Outcome& o);

std::vector<Outcome> read_outcomes(const std::filesystem::path& path);
void write_outcomes(const std::filesystem::path& path, std::span<const Outcome> outcomes);

/// Lowercases, maps every non-alphanumeric byte to a space, collapses runs
/// and trims. Both answers and options go through this before matching.
std::string normalize_text(std::string_view text);

/// Maps free text onto the label of one option:
///   1. exact match against an option or a no-preference synonym,
///   2. otherwise, whole-word occurrence of exactly one distinct label,
///   3. otherwise NA.
/// Never throws.
std::string normalize_against(std::string_view raw_text, std::span<const OptionEntry> options);

/// normalize_against() with the option table of a *-to-text spec.
std::string normalize_response(std::string_view raw_text, const ProbeSpec& spec);

/// Normalizes a classifier answer: the dimension's categories plus "N/A".
std::string normalize_attribute_answer(std::string_view raw_text, Dimension dimension);

/// Asks a VQA endpoint about one dimension of an image. Endpoint failures are
/// logged and reported as NA.
std::string classify_attribute(Gateway& classifier, const ImageRef& image, Dimension dimension);

}  // namespace vlmbias
