#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "dasmil/errors.hpp"
#include "dasmil/rng.hpp"
#include "dasmil/tensor.hpp"

using namespace dasmil;

TEST(Tensor, SizeMatchesShapeProduct) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(shape_string(t.shape()), "[2x3x4]");
}

TEST(Tensor, RejectsZeroExtentsAndMismatchedValues) {
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor(Shape{}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor::matrix({{1, 2}, {3}}), DimensionError);
}

TEST(Tensor, MatrixLiteralIsRowMajor) {
  const Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.at(1, 0), 4.0);
  EXPECT_EQ(m[2], 3.0);
  EXPECT_EQ(m.reshaped({3, 2}).at(1, 1), 4.0);
  EXPECT_THROW(m.reshaped({4, 2}), DimensionError);
}

TEST(Tensor, ItemNeedsSingleValue) {
  EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
  EXPECT_THROW(Tensor({2}).item(), DimensionError);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs |= x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, DerivedStreamsDependOnPath) {
  EXPECT_EQ(Rng::derive(7, {1, 2}).next_u64(), Rng::derive(7, {1, 2}).next_u64());
  EXPECT_NE(Rng::derive(7, {1, 2}).next_u64(), Rng::derive(7, {2, 1}).next_u64());
  EXPECT_NE(Rng::derive(7, {1}).next_u64(), Rng::derive(8, {1}).next_u64());
}

TEST(Rng, UniformIsTopBitsOfEngine) {
  Rng a(5), b(5);
  for (int i = 0; i < 20; ++i) {
    const double u = a.uniform();
    EXPECT_EQ(u, static_cast<double>(b.next_u64() >> 11) / 9007199254740992.0);
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(Rng, IndexIsInRangeAndCoversAllValues) {
  Rng rng(3);
  std::set<std::size_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto k = rng.index(7);
    ASSERT_LT(k, 7u);
    seen.insert(k);
  }
  EXPECT_EQ(seen.size(), 7u);
  EXPECT_EQ(rng.index(1), 0u);
}

TEST(Rng, NormalMomentsAreClose) {
  Rng rng(11);
  const int n = 200000;
  double s = 0.0, ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal(3.0, 2.0);
    s += x;
    ss += x * x;
  }
  const double mean = s / n;
  const double var = ss / n - mean * mean;
  EXPECT_NEAR(mean, 3.0, 0.02);
  EXPECT_NEAR(var, 4.0, 0.05);
}

TEST(Rng, ShuffleIsAPermutation) {
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  Rng rng(1);
  rng.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  std::vector<int> w(50);
  std::iota(w.begin(), w.end(), 0);
  EXPECT_NE(v, w);
}

TEST(Rng, SplitMixReferenceValue) {
  // First output of the reference SplitMix64 generator seeded with 0.
  EXPECT_EQ(splitmix64(0), 0xE220A8397B1DCDAFULL);
}
