#include "vlmbias/types.hpp"

#include <array>
#include <utility>

namespace vlmbias {
namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::array<std::pair<std::string_view, Enum>, N>& table,
                std::string_view what) {
  for (const auto& [name, value] : table) {
    if (name == s) return value;
  }
  throw Error("unknown " + std::string(what) + ": '" + std::string(s) + "'");
}

constexpr std::array<std::pair<std::string_view, Dimension>, 3> kDimensionNames{{
    {"gender", Dimension::kGender},
    {"race", Dimension::kRace},
    {"age", Dimension::kAge},
}};
constexpr std::array<std::pair<std::string_view, Direction>, 4> kDirectionNames{{
    {"image_to_text", Direction::kImageToText},
    {"text_to_text", Direction::kTextToText},
    {"text_to_image", Direction::kTextToImage},
    {"image_to_image", Direction::kImageToImage},
}};
constexpr std::array<std::pair<std::string_view, InfoMode>, 2> kInfoModeNames{{
    {"blind", InfoMode::kBlind},
    {"informed", InfoMode::kInformed},
}};
constexpr std::array<std::pair<std::string_view, Style>, 2> kStyleNames{{
    {"direct", Style::kDirect},
    {"indirect", Style::kIndirect},
}};
constexpr std::array<std::pair<std::string_view, Culture>, 3> kCultureNames{{
    {"us", Culture::kUs},
    {"in", Culture::kIn},
    {"ko", Culture::kKo},
}};

template <typename Enum, std::size_t N>
std::string_view name_of(Enum v, const std::array<std::pair<std::string_view, Enum>, N>& table) {
  for (const auto& [name, value] : table) {
    if (value == v) return name;
  }
  return "?";
}

}  // namespace

std::string_view to_string(Dimension d) { return name_of(d, kDimensionNames); }
std::string_view to_string(Direction d) { return name_of(d, kDirectionNames); }
std::string_view to_string(InfoMode m) { return name_of(m, kInfoModeNames); }
std::string_view to_string(Style s) { return name_of(s, kStyleNames); }
std::string_view to_string(Culture c) { return name_of(c, kCultureNames); }

Dimension parse_dimension(std::string_view s) { return parse_enum(s, kDimensionNames, "dimension"); }
Direction parse_direction(std::string_view s) {
  static constexpr std::array<std::pair<std::string_view, Direction>, 4> kShort{{
      {"i2t", Direction::kImageToText},
      {"t2t", Direction::kTextToText},
      {"t2i", Direction::kTextToImage},
      {"i2i", Direction::kImageToImage},
  }};
  for (const auto& [name, value] : kShort) {
    if (name == s) return value;
  }
  return parse_enum(s, kDirectionNames, "direction");
}
InfoMode parse_info_mode(std::string_view s) { return parse_enum(s, kInfoModeNames, "info mode"); }
Style parse_style(std::string_view s) { return parse_enum(s, kStyleNames, "style"); }
Culture parse_culture(std::string_view s) { return parse_enum(s, kCultureNames, "culture set"); }

std::span<const std::string_view> categories_of(Dimension d) {
  static constexpr std::string_view kGender[] = {"male", "female"};
  static constexpr std::string_view kRace[] = {"african_american", "caucasian", "asian"};
  static constexpr std::string_view kAge[] = {"under_18", "18_44", "45_64", "over_65"};
  switch (d) {
    case Dimension::kGender:
      return kGender;
    case Dimension::kRace:
      return kRace;
    case Dimension::kAge:
      return kAge;
  }
  return {};
}

bool is_legal_label(Dimension d, std::string_view label) {
  if (label == kNoPreference || label == kNotApplicable) return true;
  for (auto c : categories_of(d)) {
    if (c == label) return true;
  }
  return false;
}

bool has_text_output(Direction d) {
  return d == Direction::kImageToText || d == Direction::kTextToText;
}

bool has_image_input(Direction d) {
  return d == Direction::kImageToText || d == Direction::kImageToImage;
}

}  // namespace vlmbias
