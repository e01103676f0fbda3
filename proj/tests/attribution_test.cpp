#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mal/attribution.hpp"
#include "mal/error.hpp"
#include "test_support.hpp"

namespace mal {
namespace {

using testing::make_journey;

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::shared_ptr<const MtaModel> toy_mta() {
  auto m = std::make_shared<MtaModel>();
  m->n_industries = 2;
  m->bias = -1.0;
  m->theta.assign(m->feature_count(), 0.0);
  m->theta[0] = 0.4;                   // industry 0
  m->theta[2 + 0] = 0.3;               // position 0
  m->theta[2 + 1] = -0.2;              // position 1
  m->theta[2 + 2] = 0.5;               // position 2
  m->theta[2 + kPositionBuckets] = 0.1;  // recency bucket 0
  for (std::size_t b = 1; b < kRecencyBuckets; ++b) m->theta[2 + kPositionBuckets + b] = 0.05 * static_cast<double>(b);
  return m;
}

std::vector<Mechanism> all_six(std::shared_ptr<const MtaModel> mta) {
  std::vector<Mechanism> out;
  for (const auto tag : {MechanismTag::LastClick, MechanismTag::FirstClick, MechanismTag::Linear,
                         MechanismTag::TimeDecay, MechanismTag::RemovalEffectMTA, MechanismTag::ShapleyMTA}) {
    Mechanism m;
    m.tag = tag;
    m.half_life_seconds = 3600;
    if (is_mta(tag)) m.mta = mta;
    out.push_back(m);
  }
  return out;
}

TEST(Mechanism, ParseAndNames) {
  EXPECT_EQ(parse_mechanism("Linear"), MechanismTag::Linear);
  EXPECT_EQ(to_string(MechanismTag::RemovalEffectMTA), "RemovalEffectMTA");
  EXPECT_THROW(parse_mechanism("Nope"), Error);
}

TEST(Attribute, RuleBasedHandValues) {
  const Journey j = make_journey(1, {0, 3600, 7200}, 10800);
  Mechanism m;
  m.tag = MechanismTag::LastClick;
  EXPECT_EQ(attribute(m, j).credits, (std::vector<double>{0, 0, 1}));
  m.tag = MechanismTag::FirstClick;
  EXPECT_EQ(attribute(m, j).credits, (std::vector<double>{1, 0, 0}));
  m.tag = MechanismTag::Linear;
  for (const double c : attribute(m, j).credits) EXPECT_NEAR(c, 1.0 / 3, 1e-15);
  // Half-life equal to the click spacing: raw weights 1/8, 1/4, 1/2.
  m.tag = MechanismTag::TimeDecay;
  m.half_life_seconds = 3600;
  const auto td = attribute(m, j).credits;
  EXPECT_NEAR(td[0], 1.0 / 7, 1e-12);
  EXPECT_NEAR(td[1], 2.0 / 7, 1e-12);
  EXPECT_NEAR(td[2], 4.0 / 7, 1e-12);
  m.half_life_seconds = 0;
  EXPECT_THROW(attribute(m, j), Error);
}

TEST(Attribute, RemovalEffectHandValue) {
  const auto mta = toy_mta();
  const Journey j = make_journey(1, {0, 100}, 500);
  const double c0 = mta->contribution(j, 0);
  const double c1 = mta->contribution(j, 1);
  EXPECT_NEAR(c0, 0.4 + 0.3 + 0.1, 1e-15);
  const double s = mta->bias + c0 + c1;
  const double r0 = sig(s) - sig(s - c0);
  const double r1 = sig(s) - sig(s - c1);
  Mechanism m;
  m.tag = MechanismTag::RemovalEffectMTA;
  m.mta = mta;
  const auto credits = attribute(m, j).credits;
  EXPECT_NEAR(credits[0], r0 / (r0 + r1), 1e-12);
  EXPECT_NEAR(credits[1], r1 / (r0 + r1), 1e-12);
}

// Oracle: average marginal contribution over all k! orderings.
std::vector<double> shapley_by_permutation(const MtaModel& model, const Journey& j) {
  const std::size_t k = j.clicks.size();
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> phi(k, 0.0);
  double count = 0;
  do {
    double s = model.bias;
    for (const auto i : order) {
      const double before = sig(s);
      s += model.contribution(j, i);
      phi[i] += sig(s) - before;
    }
    ++count;
  } while (std::next_permutation(order.begin(), order.end()));
  for (auto& p : phi) p /= count;
  return phi;
}

TEST(Attribute, ShapleyMatchesPermutationOracle) {
  const auto mta = toy_mta();
  const Journey j = make_journey(1, {0, 10, 5000, 9000, 9001, 30000}, 40000);
  const auto exact = shapley_values(*mta, j);
  const auto oracle = shapley_by_permutation(*mta, j);
  for (std::size_t i = 0; i < exact.size(); ++i) EXPECT_NEAR(exact[i], oracle[i], 1e-12);
  // Efficiency.
  double total = 0;
  for (const double p : exact) total += p;
  EXPECT_NEAR(total, mta->predict(j) - sig(mta->bias), 1e-12);
}

TEST(Attribute, ShapleyCapacityLimit) {
  std::vector<std::int64_t> ts(kMaxShapleyClicks + 1);
  std::iota(ts.begin(), ts.end(), 1);
  EXPECT_THROW(shapley_values(*toy_mta(), make_journey(1, ts, 100)), Error);
}

TEST(Attribute, ConservationAcrossMechanisms) {
  auto g = testing::small_gen(1500);
  const auto log = generate_dataset(g);
  auto mta = std::make_shared<const MtaModel>(fit_mta_model(log, g.n_industries, {}).model);
  std::size_t converting = 0;
  for (const auto& m : all_six(mta)) {
    for (const auto& j : log.journeys) {
      if (m.tag == MechanismTag::ShapleyMTA && j.clicks.size() > kMaxShapleyClicks) continue;
      const auto c = attribute(m, j).credits;
      ASSERT_EQ(c.size(), j.clicks.size());
      double sum = 0;
      for (const double x : c) {
        ASSERT_GE(x, 0.0);
        ASSERT_LE(x, 1.0);
        sum += x;
      }
      if (j.converted()) {
        ASSERT_NEAR(sum, 1.0, 1e-9) << to_string(m.tag) << " journey " << j.journey_id;
        ++converting;
      } else {
        ASSERT_EQ(sum, 0.0);
      }
    }
  }
  EXPECT_GT(converting, 1000u);
}

TEST(Cat, ExhaustiveRoundTrip) {
  for (std::size_t n = 1; n <= 6; ++n) {
    for (std::uint32_t label = 0; label < (1u << n); ++label) {
      const auto bits = decode_cat(label, n);
      ASSERT_EQ(bits.size(), n);
      ASSERT_EQ(cat_label(bits), label);
    }
  }
}

TEST(Cat, WorkedExample) {
  const std::vector<int> bits{1, 0, 1, 1};
  EXPECT_EQ(cat_label(bits), 13u);
  EXPECT_THROW(decode_cat(16, 4), Error);
  const std::vector<int> bad{1, 2};
  EXPECT_THROW(cat_label(bad), Error);
}

TEST(Samples, LabelsWeightsAndCat) {
  const Journey conv = make_journey(1, {0, 100, 200}, 300);
  const Journey none = make_journey(2, {0, 50}, std::nullopt);
  JourneyLog log;
  log.journeys = {conv, none};
  std::vector<Mechanism> mechs(3);
  mechs[0].tag = MechanismTag::LastClick;
  mechs[1].tag = MechanismTag::FirstClick;
  mechs[2].tag = MechanismTag::Linear;
  const auto set = build_samples(log, mechs, MechanismTag::LastClick, LabelMode::Binary);
  ASSERT_EQ(set.samples.size(), 5u);
  const auto& first = set.samples[0];
  EXPECT_EQ(first.targets[0], (LabelWeight{0.0, 1.0}));
  EXPECT_EQ(first.targets[1], (LabelWeight{1.0, 1.0}));
  EXPECT_EQ(first.targets[2].l, 1.0);
  EXPECT_NEAR(first.targets[2].w, 1.0 / 3, 1e-15);
  EXPECT_EQ(first.cat_class, 0b110u);
  EXPECT_EQ(set.samples[2].cat_class, 0b101u);
  EXPECT_EQ(set.samples[1].cat_class, 0b100u);
  for (std::size_t i = 3; i < 5; ++i) {
    EXPECT_EQ(set.samples[i].cat_class, 0u);
    for (const auto& t : set.samples[i].targets) EXPECT_EQ(t, (LabelWeight{0.0, 1.0}));
  }
  EXPECT_EQ(set.samples[2].features.position, 2u);
  EXPECT_EQ(set.samples[2].features.count, 2u);

  const auto frac = build_samples(log, mechs, MechanismTag::LastClick, LabelMode::Fractional);
  EXPECT_NEAR(frac.samples[0].targets[2].l, 1.0 / 3, 1e-15);
  EXPECT_EQ(frac.samples[0].targets[2].w, 1.0);

  const auto ratios = positive_ratio_report(set, MechanismTag::LastClick);
  EXPECT_EQ(ratios[2].positives, 3u);
  EXPECT_DOUBLE_EQ(ratios[2].ratio, 3.0);
}

TEST(Samples, RejectsBadMechanismLists) {
  JourneyLog log;
  log.journeys = {make_journey(1, {0}, 5)};
  std::vector<Mechanism> dup(2);
  EXPECT_THROW(build_samples(log, dup, MechanismTag::LastClick, LabelMode::Binary), Error);
  std::vector<Mechanism> one(1);
  EXPECT_THROW(build_samples(log, one, MechanismTag::Linear, LabelMode::Binary), Error);
  std::vector<Mechanism> mta(1);
  mta[0].tag = MechanismTag::RemovalEffectMTA;
  EXPECT_THROW(build_samples(log, mta, MechanismTag::RemovalEffectMTA, LabelMode::Binary), Error);
}

TEST(Samples, FileRoundTrip) {
  const auto dir = testing::scratch_dir("samples-roundtrip");
  auto g = testing::small_gen(100);
  const auto log = generate_dataset(g);
  auto mta = std::make_shared<const MtaModel>(fit_mta_model(log, g.n_industries, {}).model);
  auto mechs = all_six(mta);
  mechs.pop_back();
  const auto set = build_samples(log, mechs, MechanismTag::RemovalEffectMTA, LabelMode::Binary);
  write_samples(set, dir / "s.jsonl");
  EXPECT_EQ(read_samples(dir / "s.jsonl"), set);
}

TEST(Buckets, Boundaries) {
  EXPECT_EQ(position_bucket(0), 0u);
  EXPECT_EQ(position_bucket(3), 3u);
  EXPECT_EQ(position_bucket(30), 3u);
  EXPECT_EQ(count_bucket(0), 0u);
  EXPECT_EQ(count_bucket(1), 1u);
  EXPECT_EQ(count_bucket(3), 2u);
  EXPECT_EQ(count_bucket(7), 3u);
  EXPECT_EQ(count_bucket(8), 4u);
  const Journey j = make_journey(1, {0, 1, 1000000000}, std::nullopt);
  EXPECT_EQ(recency_bucket(j, 0), 0u);
  EXPECT_EQ(recency_bucket(j, 1), 1u);
  EXPECT_EQ(recency_bucket(j, 2), kRecencyBuckets - 1);
}

TEST(MtaFit, LowersLossAndIsDeterministic) {
  auto g = testing::small_gen(800);
  const auto log = generate_dataset(g);
  MtaModel zero;
  zero.n_industries = g.n_industries;
  zero.theta.assign(zero.feature_count(), 0.0);
  const auto a = fit_mta_model(log, g.n_industries, {});
  const auto b = fit_mta_model(log, g.n_industries, {});
  EXPECT_LT(a.data_loss, mta_log_loss(zero, log));
  EXPECT_EQ(a.model.theta, b.model.theta);
  JourneyLog all_conv;
  all_conv.journeys = {make_journey(1, {0}, 5)};
  EXPECT_THROW(fit_mta_model(all_conv, 1, {}), Error);
}

}  // namespace
}  // namespace mal
