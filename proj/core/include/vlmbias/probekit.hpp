#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vlmbias/corpus.hpp"
#include "vlmbias/image_store.hpp"
#include "vlmbias/types.hpp"

namespace vlmbias {

inline constexpr std::string_view kNoPreferenceOption = "no preference";

/// One answer option and the label it stands for.
struct OptionEntry {
  std::string_view text;
  std::string_view label;
};

struct BiasDimension {
  Dimension id;
  std::span<const std::string_view> categories;
  std::span<const OptionEntry> direct_options;
  // Actor proxies per culture set. Gender has us/in/ko; race and age only us.
  std::map<Culture, std::span<const OptionEntry>> indirect_options;
};

const BiasDimension& bias_dimension(Dimension d);

/// Options in presentation order, with their labels. Throws for combinations
/// that do not exist (e.g. indirect race with the Korean culture set).
std::span<const OptionEntry> option_entries(Dimension dimension, Style style,
                                            std::optional<Culture> culture = std::nullopt);
std::vector<std::string> options_for(Dimension dimension, Style style,
                                     std::optional<Culture> culture = std::nullopt);

/// Display phrase of a category for classifier prompts, e.g. "18-44 years".
std::string_view category_display(Dimension dimension, std::string_view category);

/// Renders options as a Python-style list: ['male', 'female', 'no preference'].
std::string format_options(std::span<const std::string> options);

struct ProbeSpec {
  Direction direction = Direction::kImageToText;
  Dimension dimension = Dimension::kGender;
  InfoMode info_mode = InfoMode::kInformed;
  Style style = Style::kDirect;
  std::optional<Culture> culture;  // indirect probes only

  /// Throws Error when the combination is outside the legal probe matrix.
  void validate() const;
  bool is_valid() const;
  /// "image_to_text/gender/blind/indirect/us"
  std::string key() const;

  friend bool operator==(const ProbeSpec&, const ProbeSpec&) = default;
  friend auto operator<=>(const ProbeSpec&, const ProbeSpec&) = default;
};

/// Every legal spec, in a fixed order.
std::vector<ProbeSpec> legal_probe_specs();

void to_json(nlohmann::json& j, const ProbeSpec& s);
void from_json(const nlohmann::json& j, ProbeSpec& s);

enum class TemplateId {
  kImageToTextBlindDirect,
  kImageToTextInformedDirect,
  kImageToTextBlindIndirect,
  kImageToTextInformedIndirect,
  kTextToTextInformedIndirect,
  kTextToTextInformedDirectGender,
  kTextToTextInformedDirectAge,
  kTextToTextInformedDirectRace,
  kTextToImage,
  kImageToImage,
};

inline constexpr TemplateId kAllTemplates[] = {
    TemplateId::kImageToTextBlindDirect,      TemplateId::kImageToTextInformedDirect,
    TemplateId::kImageToTextBlindIndirect,    TemplateId::kImageToTextInformedIndirect,
    TemplateId::kTextToTextInformedIndirect,  TemplateId::kTextToTextInformedDirectGender,
    TemplateId::kTextToTextInformedDirectAge, TemplateId::kTextToTextInformedDirectRace,
    TemplateId::kTextToImage,                 TemplateId::kImageToImage,
};

/// Stem of the golden fixture file, e.g. "i2t_blind_direct".
std::string_view template_name(TemplateId id);
std::string_view template_text(TemplateId id);
TemplateId template_for(const ProbeSpec& spec);

/// Substitutes {occupation}, {action} and {options_string}. Throws if any
/// placeholder is left unresolved.
std::string fill_template(std::string_view tmpl, std::string_view occupation,
                          std::string_view action, std::string_view options_string);

struct RenderedProbe {
  ProbeSpec spec;
  std::string entry_id;
  std::string profession_id;
  std::string input_key;
  std::string prompt_text;
  std::optional<ImageRef> image_ref;
  std::vector<std::string> options;
  std::string gold_label;
  int sample_index = 0;

  /// Identity of the probe cell; seeds the simulator.
  std::string fingerprint() const;
  std::uint64_t fingerprint64() const;
};

void to_json(nlohmann::json& j, const RenderedProbe& p);

RenderedProbe render_probe(const CorpusEntry& entry, const ProbeSpec& spec,
                           std::string_view input_key, int sample_index = 0);

}  // namespace vlmbias
