#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "test_support.hpp"
#include "vlmbias/biasmath.hpp"

using namespace vlmbias;
using vlmbias::testing::Gen;

namespace {

CountTable random_table(Gen& g, Dimension dim) {
  CountTable t = CountTable::empty(dim);
  for (auto& c : t.counts) c = g.count();
  t.no_preference = g.count();
  t.na = g.count();
  if (t.total() == 0) t.no_preference = 1;
  return t;
}

Dimension random_dimension(Gen& g) { return kAllDimensions[g.uniform(0, 2)]; }

}  // namespace

TEST(BiasMathProperty, RangesHold) {
  Gen g(1);
  for (int i = 0; i < 2000; ++i) {
    const auto t = random_table(g, random_dimension(g));
    const auto b = compute_metrics(t);
    ASSERT_TRUE(b.delta_n.has_value());
    EXPECT_GE(*b.delta_n, 0.0);
    EXPECT_LE(*b.delta_n, 1.0);
    for (const auto& p : b.neutrality_pairs) {
      EXPECT_GE(p.value, 0.0);
      EXPECT_LE(p.value, 1.0);
    }
    if (b.delta_ag) {
      EXPECT_GE(*b.delta_ag, 0.0);
      EXPECT_LE(*b.delta_ag, 1.0);
    }
    if (b.ag) {
      EXPECT_GE(*b.ag, -1.0);
      EXPECT_LE(*b.ag, 1.0);
    }
  }
}

TEST(BiasMathProperty, PermutationInvariance) {
  Gen g(2);
  for (int i = 0; i < 1000; ++i) {
    const Dimension dim = g.coin() ? Dimension::kRace : Dimension::kAge;
    const auto t = random_table(g, dim);
    auto shuffled = t;
    std::shuffle(shuffled.counts.begin(), shuffled.counts.end(), g.engine());
    EXPECT_EQ(exact::delta_n(t), exact::delta_n(shuffled));
    EXPECT_EQ(exact::delta_ag(t), exact::delta_ag(shuffled));
  }
}

TEST(BiasMathProperty, AgAntisymmetry) {
  Gen g(3);
  for (int i = 0; i < 1000; ++i) {
    auto t = random_table(g, Dimension::kGender);
    auto swapped = t;
    std::swap(swapped.counts[0], swapped.counts[1]);
    const auto a = exact::ag(t);
    const auto b = exact::ag(swapped);
    ASSERT_EQ(a.has_value(), b.has_value());
    if (a) EXPECT_EQ(*a, -*b);
  }
}

TEST(BiasMathProperty, BalancedSplitMaximizesNeutrality) {
  for (std::int64_t s = 0; s <= 30; ++s) {
    for (std::int64_t n = 0; n <= 5; ++n) {
      const std::int64_t total = s + n + 2;
      Fraction best = -1;
      std::int64_t best_min = -1;
      for (std::int64_t ci = 0; ci <= s; ++ci) {
        const Fraction v = exact::neutrality_pair(ci, s - ci, n, total);
        const std::int64_t lo = std::min(ci, s - ci);
        if (v > best) {
          best = v;
          best_min = lo;
        }
      }
      EXPECT_EQ(best_min, s / 2) << "s=" << s << " n=" << n;
    }
  }
}

TEST(BiasMathProperty, MoreNoPreferenceNeverLowersNeutrality) {
  Gen g(4);
  for (int i = 0; i < 1000; ++i) {
    auto t = random_table(g, random_dimension(g));
    const Fraction before = exact::delta_n(t);
    t.no_preference += 1;
    EXPECT_GE(exact::delta_n(t), before);
  }
}

TEST(BiasMathProperty, PooledCountsAreAdditive) {
  Gen g(5);
  for (int i = 0; i < 200; ++i) {
    const Dimension dim = random_dimension(g);
    auto a = random_table(g, dim);
    const auto b = random_table(g, dim);
    const auto total = a.total() + b.total();
    a += b;
    EXPECT_EQ(a.total(), total);
  }
}
