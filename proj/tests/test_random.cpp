#include "dlrt/random.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

namespace {

using dlrt::SplitMix64;

TEST(SplitMix64, MatchesReferenceSequence) {
  // First outputs of the reference C implementation seeded with 1234567.
  SplitMix64 rng(1234567);
  EXPECT_EQ(rng(), 6457827717110365317ULL);
  EXPECT_EQ(rng(), 3203168211198807973ULL);
  EXPECT_EQ(rng(), 9817491932198370423ULL);
}

TEST(SplitMix64, BelowStaysInRangeAndCoversIt) {
  SplitMix64 rng(42);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70'000; ++i) {
    const auto x = rng.below(7);
    ASSERT_LT(x, 7u);
    ++counts[x];
  }
  for (int c : counts) {
    EXPECT_NEAR(c, 10'000, 500);
  }
  EXPECT_EQ(rng.below(1), 0u);
}

TEST(SplitMix64, DerivedSeedsDiffer) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t tag = 0; tag < 100; ++tag) {
    seen.insert(dlrt::derive_seed(7, tag));
  }
  EXPECT_EQ(seen.size(), 100u);
  EXPECT_EQ(dlrt::derive_seed(7, 3), dlrt::derive_seed(7, 3));
}

TEST(Shuffle, IsADeterministicPermutation) {
  std::vector<int> a(100);
  std::iota(a.begin(), a.end(), 0);
  std::vector<int> b = a;
  SplitMix64 r1(5);
  SplitMix64 r2(5);
  dlrt::shuffle(a, r1);
  dlrt::shuffle(b, r2);
  EXPECT_EQ(a, b);
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
  }
  EXPECT_FALSE(std::is_sorted(a.begin(), a.end()));
}

TEST(GaussianMatrix, HasRoughlyStandardMoments) {
  SplitMix64 rng(11);
  const dlrt::Matrix g = dlrt::gaussian_matrix(200, 200, rng);
  EXPECT_NEAR(g.mean(), 0.0, 0.02);
  EXPECT_NEAR(g.squaredNorm() / g.size(), 1.0, 0.02);
}

}  // namespace
