#include <gtest/gtest.h>

#include <cmath>

#include "mal/error.hpp"
#include "mal/metrics.hpp"
#include "mal/random.hpp"
#include "test_support.hpp"

namespace mal {
namespace {

// O(M^2) definition of weighted AUC.
double pairwise_auc(const std::vector<ScoredSample>& s) {
  double num = 0, wp = 0, wn = 0;
  for (const auto& p : s) (p.label > 0 ? wp : wn) += p.weight;
  for (const auto& p : s) {
    if (p.label <= 0) continue;
    for (const auto& n : s) {
      if (n.label > 0) continue;
      num += p.weight * n.weight * (p.score > n.score ? 1.0 : p.score == n.score ? 0.5 : 0.0);
    }
  }
  return num / (wp * wn);
}

std::vector<ScoredSample> random_instance(RandomStream& r, std::size_t m, bool unit_weights) {
  std::vector<ScoredSample> s(m);
  const auto levels = 1 + r.below(50);
  for (std::size_t i = 0; i < m; ++i) {
    s[i].score = static_cast<double>(r.below(levels)) / 7.0;
    s[i].label = r.bernoulli(0.3) ? 1.0 : 0.0;
    s[i].weight = unit_weights ? 1.0 : r.uniform(0.05, 3.0);
    s[i].user_id = r.below(5);
  }
  s[0].label = 1.0;
  s[1].label = 0.0;
  return s;
}

TEST(WeightedAuc, MatchesPairwiseOracle) {
  RandomStream r(11, StreamTag::Test, 0);
  for (int i = 0; i < 300; ++i) {
    const auto s = random_instance(r, 2 + r.below(600), i % 2 == 0);
    ASSERT_NEAR(weighted_auc(s), pairwise_auc(s), 1e-12) << "instance " << i;
  }
}

TEST(WeightedAuc, TrivialCases) {
  std::vector<ScoredSample> s{{0.9, 1, 1}, {0.8, 1, 2}, {0.1, 0, 1}, {0.2, 0, 3}};
  EXPECT_EQ(weighted_auc(s), 1.0);
  for (auto& x : s) x.score = 0.5;
  EXPECT_EQ(weighted_auc(s), 0.5);
  std::vector<ScoredSample> one{{0.1, 1, 1}, {0.2, 1, 1}};
  try {
    weighted_auc(one);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UndefinedMetric);
  }
  s[0].weight = 0;
  EXPECT_THROW(weighted_auc(s), Error);
}

TEST(WeightedAuc, Invariances) {
  RandomStream r(12, StreamTag::Test, 0);
  for (int i = 0; i < 50; ++i) {
    auto s = random_instance(r, 200, false);
    const double a = weighted_auc(s);
    auto t = s;
    for (auto& x : t) x.score = std::exp(3 * x.score) - 2;
    EXPECT_NEAR(weighted_auc(t), a, 1e-12);
    for (auto& x : t) x.weight *= 4.5;
    EXPECT_NEAR(weighted_auc(t), a, 1e-12);
    for (auto& x : t) x.score = -x.score;
    EXPECT_NEAR(weighted_auc(t) + a, 1.0, 1e-12);
  }
}

TEST(Gauc, HandExample) {
  const std::vector<UserAuc> users{{1, 1.0, 3}, {2, 0.5, 1}};
  EXPECT_EQ(gauc_reduce(users), 0.875);
}

TEST(Gauc, FromSamples) {
  // User 1: perfect, 3 clicks. User 2: tied, 2 clicks. User 3: one class only.
  const std::vector<ScoredSample> s{{0.9, 1, 1, 1}, {0.1, 0, 1, 1}, {0.2, 0, 1, 1},
                                    {0.5, 1, 1, 2}, {0.5, 0, 1, 2}, {0.4, 1, 1, 3}};
  const auto g = gauc(s);
  EXPECT_DOUBLE_EQ(g.gauc, (3 * 1.0 + 2 * 0.5) / 5);
  EXPECT_EQ(g.users_counted, 2u);
  EXPECT_EQ(g.users_skipped, 1u);
  const std::vector<ScoredSample> single(s.begin(), s.begin() + 3);
  EXPECT_EQ(gauc(single).gauc, 1.0);
  const std::vector<ScoredSample> none{{0.4, 1, 1, 3}};
  EXPECT_THROW(gauc(none), Error);
}

TEST(Gauc, PerUserMonotoneTransformInvariance) {
  RandomStream r(13, StreamTag::Test, 0);
  auto s = random_instance(r, 400, false);
  const double a = gauc(s).gauc;
  for (auto& x : s) x.score = x.score * static_cast<double>(x.user_id + 1) + static_cast<double>(x.user_id) * 10;
  EXPECT_NEAR(gauc(s).gauc, a, 1e-12);
}

TEST(Spearman, Values) {
  const std::vector<double> x{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{4, 3, 2, 1}), -1.0);
  // Ranks of y: 1, 2.5, 2.5, 4.
  const double r = spearman(x, std::vector<double>{1, 5, 5, 9});
  EXPECT_NEAR(r, 0.9486832980505138, 1e-12);
  EXPECT_THROW(spearman(x, std::vector<double>{1, 1, 1, 1}), Error);
}

TEST(GroupLift, IdenticalModelsGiveZeroDelta) {
  RandomStream r(14, StreamTag::Test, 0);
  auto s = random_instance(r, 2000, false);
  for (auto& x : s) {
    x.user_id = r.below(200);
    x.industry_id = static_cast<std::uint32_t>(r.below(4));
  }
  std::map<std::uint64_t, std::uint64_t> gains;
  for (std::uint64_t u = 0; u < 200; ++u) gains[u] = u % 7;
  const auto users = user_gain_lift(s, s, gains);
  EXPECT_EQ(users.rows.size(), 5u);
  EXPECT_EQ(users.rows[3].key, "3-4");
  EXPECT_EQ(users.rows[4].key, "5+");
  for (const auto& row : users.rows) EXPECT_EQ(row.delta, 0.0);
  const auto ind = industry_lift(s, s);
  EXPECT_EQ(ind.rows.size(), 4u);
  for (const auto& row : ind.rows) EXPECT_EQ(row.delta, 0.0);
  EXPECT_NE(to_csv(users).find("key"), std::string::npos);
}

TEST(GroupLift, EmptyGroupsAreDroppedAndCounted) {
  std::vector<ScoredSample> s{{0.9, 1, 1, 1}, {0.1, 0, 1, 1}};
  std::map<std::uint64_t, std::uint64_t> gains{{1, 0}};
  const auto t = user_gain_lift(s, s, gains);
  EXPECT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.dropped, 4u);
}

TEST(GroupLift, RejectsUnpairedInputs) {
  std::vector<ScoredSample> a{{0.9, 1, 1, 1}, {0.1, 0, 1, 1}};
  auto b = a;
  b[1].user_id = 2;
  EXPECT_THROW(industry_lift(a, b), Error);
}

TEST(PositiveGain, TrailingWindow) {
  using testing::make_journey;
  JourneyLog log;
  // User 0: early 3-click conversion (outside window), late 2-click conversion.
  auto early = make_journey(0, {0, 10, 20}, 30);
  auto late = make_journey(1, {1000, 1010}, 1020);
  late.user_id = 0;
  log.journeys = {early, late};
  std::vector<Mechanism> mechs(2);
  mechs[1].tag = MechanismTag::Linear;
  const auto set = build_samples(log, mechs, MechanismTag::LastClick, LabelMode::Binary);
  const auto gains = user_positive_gain(set, 0.4);
  EXPECT_EQ(gains.at(0), 1u);
  EXPECT_EQ(user_positive_gain(set, 1.0).at(0), 3u);
}

}  // namespace
}  // namespace mal
