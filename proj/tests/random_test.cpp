#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "mal/random.hpp"

namespace mal {
namespace {

// Known-answer vectors for Philox4x32-10 from the Random123 distribution.
TEST(Philox, KnownAnswers) {
  using C = Philox4x32::Counter;
  EXPECT_EQ(Philox4x32::block(C{0, 0, 0, 0}, {0, 0}), (C{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(Philox4x32::block(C{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}),
            (C{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  EXPECT_EQ(Philox4x32::block(C{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}),
            (C{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(RandomStream, SameCoordinatesSameSequence) {
  RandomStream a(42, StreamTag::UserLatent, 3);
  RandomStream b(42, StreamTag::UserLatent, 3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(RandomStream, StreamsDiffer) {
  std::set<std::uint64_t> firsts;
  for (std::uint64_t idx = 0; idx < 50; ++idx) firsts.insert(RandomStream(1, StreamTag::AdLatent, idx).next_u64());
  firsts.insert(RandomStream(1, StreamTag::UserLatent, 0).next_u64());
  firsts.insert(RandomStream(2, StreamTag::AdLatent, 0).next_u64());
  EXPECT_EQ(firsts.size(), 52u);
}

TEST(RandomStream, UniformAndNormalMoments) {
  RandomStream r(5, StreamTag::Test, 0);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = r.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 0.005);
  EXPECT_NEAR(sn / n, 0.0, 0.01);
  EXPECT_NEAR(sn2 / n, 1.0, 0.01);
}

TEST(RandomStream, BelowStaysInRangeAndCoversIt) {
  RandomStream r(9, StreamTag::Test, 1);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const auto v = r.below(7);
    ASSERT_LT(v, 7u);
    ++hits[v];
  }
  for (const int h : hits) EXPECT_NEAR(h, 10000, 500);
}

// Oracle: count Bernoulli(1/mean) trials to the first success with an unrelated engine.
TEST(RandomStream, ShiftedGeometricMatchesTrialSimulation) {
  for (const double mean : {1.0, 1.3, 2.5, 6.0}) {
    RandomStream r(3, StreamTag::Test, 2);
    std::mt19937_64 engine(17);
    std::bernoulli_distribution success(1.0 / mean);
    const int n = 100000;
    double ours = 0, oracle = 0;
    for (int i = 0; i < n; ++i) {
      const auto k = r.shifted_geometric(mean);
      ASSERT_GE(k, 1u);
      ours += static_cast<double>(k);
      int trials = 1;
      while (!success(engine)) ++trials;
      oracle += trials;
    }
    EXPECT_NEAR(ours / n, oracle / n, 0.05 * mean) << "mean " << mean;
    EXPECT_NEAR(ours / n, mean, 0.05 * mean) << "mean " << mean;
  }
}

TEST(RandomStream, ShuffleIsAPermutation) {
  std::vector<int> v(100);
  for (int i = 0; i < 100; ++i) v[i] = i;
  RandomStream r(1, StreamTag::Shuffle, 0);
  r.shuffle(std::span<int>(v));
  std::set<int> s(v.begin(), v.end());
  EXPECT_EQ(s.size(), 100u);
  EXPECT_NE(v[0] + v[1] * 100, 0 + 1 * 100);
}

TEST(Fnv1a, KnownValues) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

}  // namespace
}  // namespace mal
