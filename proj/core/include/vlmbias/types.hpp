#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vlmbias {

/// Thrown for precondition violations and malformed inputs across the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by the model gateway when an endpoint cannot be reached or keeps failing.
class EndpointError : public Error {
 public:
  using Error::Error;
};

enum class Dimension { kGender, kRace, kAge };
enum class Direction { kImageToText, kTextToText, kTextToImage, kImageToImage };
enum class InfoMode { kBlind, kInformed };
enum class Style { kDirect, kIndirect };
enum class Culture { kUs, kIn, kKo };

inline constexpr Dimension kAllDimensions[] = {Dimension::kGender, Dimension::kRace,
                                               Dimension::kAge};
inline constexpr Direction kAllDirections[] = {Direction::kImageToText, Direction::kTextToText,
                                               Direction::kTextToImage, Direction::kImageToImage};

// Outcome labels beyond the per-dimension category ids.
inline constexpr std::string_view kNoPreference = "no_preference";
inline constexpr std::string_view kNotApplicable = "NA";

// Rendering key of the bias-bleached subject.
inline constexpr std::string_view kNeutralSubject = "humanoid robot";

std::string_view to_string(Dimension d);
std::string_view to_string(Direction d);
std::string_view to_string(InfoMode m);
std::string_view to_string(Style s);
std::string_view to_string(Culture c);

Dimension parse_dimension(std::string_view s);
Direction parse_direction(std::string_view s);
InfoMode parse_info_mode(std::string_view s);
Style parse_style(std::string_view s);
Culture parse_culture(std::string_view s);

/// Ordered category ids of a bias dimension (gender 2, race 3, age 4).
std::span<const std::string_view> categories_of(Dimension d);

/// True when `label` is a category of `d`, no_preference, or NA.
bool is_legal_label(Dimension d, std::string_view label);

bool has_text_output(Direction d);
bool has_image_input(Direction d);

}  // namespace vlmbias
