#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "softreach/rng.hpp"

namespace softreach {
namespace {

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DifferentSeedsDiffer) {
  Rng a(1), b(2);
  EXPECT_NE(a.next_u64(), b.next_u64());
}

TEST(Rng, DrawIsFunctionOfKeyAndCounter) {
  Rng a(7);
  for (int i = 0; i < 5; ++i) a.next_u64();
  Rng b = a;
  const auto x = a.next_u64();
  EXPECT_EQ(b.next_u64(), x);
}

TEST(Rng, SplitsAreIndependentOfParentDraws) {
  Rng a(3);
  Rng child_before = a.split(9);
  a.next_u64();
  a.next_u64();
  Rng child_after = a.split(9);
  EXPECT_EQ(child_before.next_u64(), child_after.next_u64());
  EXPECT_NE(a.split(1).next_u64(), a.split(2).next_u64());
}

TEST(Rng, UniformIsOpenUnitInterval) {
  Rng r(5);
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, NormalMoments) {
  Rng r(11);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  const double m = s / n;
  const double var = s2 / n - m * m;
  EXPECT_NEAR(m, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(var, 1.0, 0.02);
}

TEST(Rng, PermutationIsAPermutation) {
  Rng r(0);
  auto p = permutation(1000, r);
  std::vector<std::size_t> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
  Rng r2(0);
  EXPECT_EQ(permutation(1000, r2), p);
}

TEST(Rng, IndexCoversRange) {
  Rng r(8);
  std::set<std::size_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto k = r.index(7);
    ASSERT_LT(k, 7u);
    seen.insert(k);
  }
  EXPECT_EQ(seen.size(), 7u);
}

}  // namespace
}  // namespace softreach
