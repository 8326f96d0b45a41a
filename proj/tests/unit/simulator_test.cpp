#include <gtest/gtest.h>

#include <map>

#include "test_support.hpp"
#include "vlmbias/corpus.hpp"
#include "vlmbias/outcome.hpp"
#include "vlmbias/simulator.hpp"

using namespace vlmbias;
using vlmbias::testing::TempDir;

namespace {

RenderedProbe probe(Direction dir, Dimension dim, Style style = Style::kDirect,
                    std::optional<Culture> culture = std::nullopt) {
  ProbeSpec s;
  s.direction = dir;
  s.dimension = dim;
  s.style = style;
  s.culture = culture;
  const auto entry = make_entry(Profession::from_name("Bakers"),
                                make_action("bakers", "A <subject> is decorating a cake"));
  return render_probe(entry, s, "humanoid robot");
}

}  // namespace

TEST(Simulator, SplitMix64ReferenceValues) {
  EXPECT_EQ(splitmix64(0), 0xe220a8397b1dcdafULL);
  // Successive outputs of a generator seeded with 0 advance the state by the golden gamma.
  EXPECT_EQ(splitmix64(0x9e3779b97f4a7c15ULL), 0x6e789e6aa1b965f4ULL);
}

TEST(Simulator, SampleFrequenciesTrackDistribution) {
  const Distribution d{{"male", 0.6}, {"female", 0.2}, {std::string(kNoPreference), 0.2}};
  std::map<std::string, int> counts;
  constexpr int kDraws = 20000;
  for (std::uint64_t s = 0; s < kDraws; ++s) ++counts[sample_label(d, Dimension::kGender, s * 7919)];
  EXPECT_NEAR(counts["male"] / double(kDraws), 0.6, 0.02);
  EXPECT_NEAR(counts["female"] / double(kDraws), 0.2, 0.02);
  EXPECT_NEAR(counts[std::string(kNoPreference)] / double(kDraws), 0.2, 0.02);
  EXPECT_EQ(counts.count(std::string(kNotApplicable)), 0u);
}

TEST(Simulator, DegenerateDistribution) {
  const Distribution d{{"asian", 1.0}};
  for (std::uint64_t s = 0; s < 100; ++s) EXPECT_EQ(sample_label(d, Dimension::kRace, s), "asian");
  EXPECT_THROW(sample_label({}, Dimension::kRace, 1), Error);
}

TEST(Simulator, ProfileValidation) {
  EXPECT_THROW(nlohmann::json::parse(R"({"distributions":{"gender":{"male":0.5}}})")
                   .get<SimulatorProfile>(),
               Error);
  EXPECT_THROW(nlohmann::json::parse(R"({"distributions":{"gender":{"asian":1.0}}})")
                   .get<SimulatorProfile>(),
               Error);
  const auto p = nlohmann::json::parse(R"({"seed":9,"distributions":{"gender":{"male":1.0}},
      "professions":{"nurses":{"gender":{"female":1.0}}}})")
                     .get<SimulatorProfile>();
  EXPECT_EQ(p.distribution_for(Dimension::kGender, "nurses").at("female"), 1.0);
  EXPECT_EQ(p.distribution_for(Dimension::kGender, "bakers").at("male"), 1.0);
  EXPECT_THROW(p.distribution_for(Dimension::kAge, "bakers"), Error);
  const nlohmann::json j = p;
  EXPECT_EQ(j.get<SimulatorProfile>().seed, 9u);
}

TEST(Simulator, TextAnswersNormalizeBack) {
  SimulatorProfile profile;
  for (Dimension dim : kAllDimensions) {
    for (std::string_view c : categories_of(dim)) {
      profile.by_dimension[dim] = {{std::string(c), 1.0}};
      const auto p = probe(Direction::kTextToText, dim);
      EXPECT_EQ(normalize_response(simulate(profile, p).text, p.spec), c);
    }
  }
  const auto p = probe(Direction::kTextToText, Dimension::kGender, Style::kIndirect, Culture::kKo);
  profile.by_dimension[Dimension::kGender] = {{"female", 1.0}};
  EXPECT_EQ(normalize_response(simulate(profile, p).text, p.spec), "female");
  profile.by_dimension[Dimension::kGender] = {{std::string(kNotApplicable), 1.0}};
  EXPECT_EQ(normalize_response(simulate(profile, p).text, p.spec), kNotApplicable);
}

TEST(Simulator, DeterministicPerProbe) {
  SimulatorProfile profile;
  profile.seed = 42;
  profile.by_dimension[Dimension::kAge] = {
      {"under_18", 0.2}, {"18_44", 0.2}, {"45_64", 0.2}, {"over_65", 0.2}, {"no_preference", 0.2}};
  const auto p = probe(Direction::kTextToText, Dimension::kAge);
  EXPECT_EQ(simulate(profile, p).text, simulate(profile, p).text);
  const std::string expected = sample_label(profile.by_dimension[Dimension::kAge], Dimension::kAge,
                                            42 ^ p.fingerprint64());
  EXPECT_EQ(normalize_response(simulate(profile, p).text, p.spec), expected);
}

TEST(Simulator, ImageOutputsRoundTripThroughClassifier) {
  TempDir dir("sim");
  ImageStore images(dir / "images");
  ResponseCache cache(dir / "cache");
  ManualClock clock;
  EndpointConfig c;
  c.name = "clf";
  c.model = "clf";
  c.capability = Capability::kVqaClassify;
  Gateway clf(c, std::make_shared<SimulatedClassifierBackend>(), {&cache, &images, &clock});

  SimulatorProfile profile;
  profile.by_dimension[Dimension::kRace] = {{"caucasian", 1.0}};
  const auto p = probe(Direction::kTextToImage, Dimension::kRace);
  EXPECT_THROW(simulate(profile, p), Error);
  const auto r = simulate(profile, p, &images);
  ASSERT_TRUE(r.image.has_value());
  EXPECT_EQ(classify_attribute(clf, *r.image, Dimension::kRace), "caucasian");
  // Other dimensions are not tagged.
  EXPECT_EQ(classify_attribute(clf, *r.image, Dimension::kGender), kNotApplicable);
}

TEST(Simulator, PngTextRoundTrip) {
  const auto png = make_tagged_png({{"a", "1"}, {"vlmbias:gender", "female"}});
  EXPECT_EQ(png.substr(0, 8), std::string("\x89PNG\r\n\x1a\n", 8));
  const auto tags = read_png_text(png);
  ASSERT_TRUE(tags.has_value());
  EXPECT_EQ(tags->at("a"), "1");
  EXPECT_EQ(tags->at("vlmbias:gender"), "female");
  EXPECT_FALSE(read_png_text("not a png").has_value());
  EXPECT_FALSE(read_png_text(png.substr(0, 20)).has_value());
}

TEST(Simulator, ScriptedBackendWalksReplies) {
  const auto backend = ScriptedBackend::from_json(nlohmann::json::parse(
      R"({"rules":[{"match":"Bakers","replies":["one","two"]},{"match":"","reply":"fallback"}]})"));
  BackendRequest r;
  r.messages.push_back({"user", "Occupation: Bakers"});
  EXPECT_EQ(backend->send(r).text, "one");
  EXPECT_EQ(backend->send(r).text, "two");
  EXPECT_EQ(backend->send(r).text, "two");
  r.messages.back().text = "other";
  EXPECT_EQ(backend->send(r).text, "fallback");

  ScriptedBackend none({});
  EXPECT_EQ(none.send(r).status, BackendReply::Status::kFailed);
  EXPECT_THROW(ScriptedBackend::from_json(nlohmann::json::parse(R"({"rules":[{"match":"x","replies":[]}]})")),
               Error);
}
