#include "vlmbias/outcome.hpp"

#include <spdlog/spdlog.h>

#include <cctype>
#include <fstream>
#include <set>

namespace vlmbias {
namespace {

constexpr std::string_view kNoPreferenceSynonyms[] = {"no preference", "neutral", "either"};

bool contains_word_sequence(std::string_view text, std::string_view needle) {
  if (needle.empty()) return false;
  for (auto pos = text.find(needle); pos != std::string_view::npos;
       pos = text.find(needle, pos + 1)) {
    const bool left = pos == 0 || text[pos - 1] == ' ';
    const std::size_t end = pos + needle.size();
    const bool right = end == text.size() || text[end] == ' ';
    if (left && right) return true;
  }
  return false;
}

}  // namespace

void Outcome::validate() const {
  if (!is_legal_label(spec.dimension, predicted)) {
    throw Error("outcome for " + entry_id + ": '" + predicted + "' is not a " +
                std::string(to_string(spec.dimension)) + " label");
  }
  if (!is_legal_label(spec.dimension, gold_label)) {
    throw Error("outcome for " + entry_id + ": gold '" + gold_label + "' is not a " +
                std::string(to_string(spec.dimension)) + " label");
  }
}

void to_json(nlohmann::json& j, const Outcome& o) {
  j = nlohmann::json{{"entry_id", o.entry_id},     {"profession_id", o.profession_id},
                     {"model", o.model},           {"spec", o.spec},
                     {"input_key", o.input_key},   {"sample_index", o.sample_index},
                     {"gold_label", o.gold_label}, {"predicted", o.predicted},
                     {"raw_text", o.raw_text}};
}

void from_json(const nlohmann::json& j, Outcome& o) {
  o.entry_id = j.at("entry_id").get<std::string>();
  o.profession_id = j.value("profession_id", "");
  if (o.profession_id.empty()) {
    // Entry ids are "<profession_id>:<index>".
    o.profession_id = o.entry_id.substr(0, o.entry_id.rfind(':'));
  }
  o.model = j.value("model", "");
  o.spec = j.at("spec").get<ProbeSpec>();
  o.input_key = j.value("input_key", std::string(kNeutralSubject));
  o.sample_index = j.value("sample_index", 0);
  o.gold_label = j.at("gold_label").get<std::string>();
  o.predicted = j.at("predicted").get<std::string>();
  o.raw_text = j.value("raw_text", "");
  o.validate();
}

std::vector<Outcome> read_outcomes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open outcomes " + path.string());
  std::vector<Outcome> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<Outcome>());
    } catch (const std::exception& e) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_outcomes(const std::filesystem::path& path, std::span<const Outcome> outcomes) {
  std::string text;
  for (const auto& o : outcomes) {
    text += nlohmann::json(o).dump();
    text += '\n';
  }
  write_file_atomic(path, text);
}

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (unsigned char c : text) {
    if (c < 0x80 && std::isalnum(c)) {
      if (pending_space && !out.empty()) out.push_back(' ');
      pending_space = false;
      out.push_back(static_cast<char>(std::tolower(c)));
    } else {
      pending_space = true;
    }
  }
  return out;
}

std::string normalize_against(std::string_view raw_text, std::span<const OptionEntry> options) {
  const std::string text = normalize_text(raw_text);
  if (text.empty()) return std::string(kNotApplicable);

  for (const auto& o : options) {
    if (text == normalize_text(o.text)) return std::string(o.label);
  }
  for (auto syn : kNoPreferenceSynonyms) {
    if (text == syn) return std::string(kNoPreference);
  }

  std::set<std::string_view> matched;
  for (const auto& o : options) {
    if (contains_word_sequence(text, normalize_text(o.text))) matched.insert(o.label);
  }
  for (auto syn : kNoPreferenceSynonyms) {
    if (contains_word_sequence(text, syn)) matched.insert(kNoPreference);
  }
  if (matched.size() == 1) return std::string(*matched.begin());
  return std::string(kNotApplicable);
}

std::string normalize_response(std::string_view raw_text, const ProbeSpec& spec) {
  if (!has_text_output(spec.direction)) {
    return std::string(kNotApplicable);
  }
  return normalize_against(raw_text, option_entries(spec.dimension, spec.style, spec.culture));
}

std::string normalize_attribute_answer(std::string_view raw_text, Dimension dimension) {
  std::vector<OptionEntry> options;
  for (auto c : categories_of(dimension)) options.push_back({category_display(dimension, c), c});
  std::string label = normalize_against(raw_text, options);
  // A classifier cannot abstain with "no preference"; treat it as undecidable.
  if (label == kNoPreference) label = std::string(kNotApplicable);
  return label;
}

std::string classify_attribute(Gateway& classifier, const ImageRef& image, Dimension dimension) {
  try {
    const RawResponse response = classifier.ask_attribute(image, dimension);
    if (response.refused) return std::string(kNotApplicable);
    return normalize_attribute_answer(response.text, dimension);
  } catch (const EndpointError& e) {
    spdlog::error("classifier '{}' failed on {}: {}", classifier.config().name, image.sha256,
                  e.what());
    return std::string(kNotApplicable);
  }
}

}  // namespace vlmbias
