#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vlmbias/image_store.hpp"
#include "vlmbias/modelgate.hpp"
#include "vlmbias/types.hpp"

namespace vlmbias {

inline constexpr std::string_view kSubjectPlaceholder = "<subject>";
inline constexpr int kMaxActionWords = 20;

struct Profession {
  std::string name;
  std::string id;

  static Profession from_name(std::string_view name);
};

std::string slugify(std::string_view name);

/// One profession per line. Blank lines are skipped; a leading `\item` or
/// `- ` bullet is stripped. Duplicate ids are an error.
std::vector<Profession> parse_profession_list(std::istream& in);
std::vector<Profession> read_profession_list(const std::filesystem::path& path);

struct ActionPrompt {
  std::string profession_id;
  std::string template_text;
  int word_count = 0;
  std::optional<double> quality_score;
  std::optional<int> rank;
};

int count_words(std::string_view text);
std::size_t count_placeholders(std::string_view text);

/// Validates the template and fills in word_count. Throws Error.
ActionPrompt make_action(std::string profession_id, std::string template_text);

/// A subject phrasing substituted for the placeholder, and the label it carries.
struct SubjectVariant {
  std::string_view subject;
  std::optional<Dimension> dimension;  // unset for the neutral subject
  std::string_view label;              // category id, or no_preference
};

/// Fixed subject table: the humanoid robot first, then every category subject.
std::span<const SubjectVariant> subject_table();
const SubjectVariant& subject_variant(std::string_view subject);
/// Subject phrasing used for one category of a dimension.
std::string_view subject_for(Dimension dimension, std::string_view category);

std::string render_subject(std::string_view template_text, std::string_view subject);
inline std::string render_subject(const ActionPrompt& action, std::string_view subject) {
  return render_subject(action.template_text, subject);
}

struct CorpusEntry {
  std::string id;
  Profession profession;
  ActionPrompt action;
  std::map<std::string, std::string> renderings;
  std::map<std::string, ImageRef> image_refs;
  std::map<std::string, std::string> image_failures;

  /// The action phrase with the subject removed, e.g. "decorating a cake".
  std::string action_phrase() const;
  void validate() const;
};

/// Builds an entry with every subject-table rendering.
CorpusEntry make_entry(const Profession& profession, const ActionPrompt& action, int index = 0);

void to_json(nlohmann::json& j, const Profession& p);
void from_json(const nlohmann::json& j, Profession& p);
void to_json(nlohmann::json& j, const ActionPrompt& a);
void from_json(const nlohmann::json& j, ActionPrompt& a);
void to_json(nlohmann::json& j, const CorpusEntry& e);
void from_json(const nlohmann::json& j, CorpusEntry& e);

std::vector<CorpusEntry> read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, std::span<const CorpusEntry> entries);

/// Append-only JSONL sink; safe for concurrent appends.
class JsonlAppender {
 public:
  explicit JsonlAppender(std::filesystem::path path, bool truncate = false);
  void append(const nlohmann::json& record);

 private:
  std::filesystem::path path_;
  std::mutex mu_;
};

// --- action generation and filtering ---------------------------------------

/// The chat transcript asking a generator for 2-5 action templates.
std::vector<ChatMessage> action_generation_messages(const Profession& profession);

/// Extracts valid templates from a generator reply; malformed lines are dropped.
std::vector<std::string> parse_action_lines(std::string_view reply);

/// Asks the generator for 2-5 templates, re-asking up to `retry_budget` times
/// while fewer than two valid templates have been collected.
std::vector<ActionPrompt> generate_actions(const Profession& profession, Gateway& generator,
                                           int retry_budget = 3);

/// The question asking a model to name the profession behind an action.
std::string profession_prediction_prompt(const ActionPrompt& action);

/// Parses a JSON list of strings out of free-form model text.
std::optional<std::vector<std::string>> parse_prediction_list(std::string_view reply);

class SimilarityProvider {
 public:
  virtual ~SimilarityProvider() = default;
  /// Similarity in [0, 1].
  virtual double similarity(std::string_view a, std::string_view b) const = 0;
};

/// Dice coefficient over character-trigram multisets of the lowercased,
/// trimmed strings. Strings shorter than three characters score 1 when equal.
class TrigramDiceSimilarity final : public SimilarityProvider {
 public:
  double similarity(std::string_view a, std::string_view b) const override;
};

/// Score for one predictor: best similarity to the gold name divided by the
/// number of professions the predictor named (at least one).
double prediction_score(std::string_view gold, std::span<const std::string> predicted,
                        const SimilarityProvider& similarity);

/// Mean prediction_score over predictors. A predictor that fails or replies
/// with something other than a JSON list contributes 0.
double score_action_quality(const ActionPrompt& action, std::string_view gold_profession,
                            std::span<Gateway* const> predictors,
                            const SimilarityProvider& similarity);

/// Highest quality_score; ties go to the lexicographically smallest template.
const ActionPrompt& select_best(std::span<const ActionPrompt> actions);

/// Generates images for the requested renderings into the gateway's image store.
/// Keys that already have a stored image are skipped. Failures are recorded in
/// image_failures and do not abort the remaining keys.
CorpusEntry build_image_set(CorpusEntry entry, Gateway& imagegen,
                            std::span<const std::string> keys, const ImageStore& images);

}  // namespace vlmbias
