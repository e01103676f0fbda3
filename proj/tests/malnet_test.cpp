#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "mal/error.hpp"
#include "mal/malnet.hpp"
#include "mal/numcore/grad_check.hpp"
#include "test_support.hpp"

namespace mal {
namespace {

using numcore::Graph;
using testing::kFourMechanisms;

VocabSizes small_vocab() {
  VocabSizes v;
  v.users = 20;
  v.ads = 30;
  v.industries = 4;
  return v;
}

MalModel model_for(Variant variant, std::uint64_t seed = 3, std::vector<MechanismTag> order = kFourMechanisms) {
  ArchConfig arch;
  arch.variant = variant;
  return build_model(arch, small_vocab(), std::move(order), MechanismTag::LastClick, seed);
}

numcore::LossFn loss_fn(const MalModel& model, const Batch& batch) {
  return [&model, &batch](numcore::ParamStore& store, bool grads) {
    Graph g(store);
    const auto out = forward(g, model, batch);
    const auto terms = total_loss(g, out, batch, model);
    if (grads) g.backward(terms.total);
    return g.scalar(terms.total);
  };
}

SampleSet small_samples(std::uint64_t users, std::vector<MechanismTag> order = kFourMechanisms) {
  const auto g = testing::small_gen(users);
  const auto log = generate_dataset(g);
  auto mta = std::make_shared<const MtaModel>(fit_mta_model(log, g.n_industries, {}).model);
  std::vector<Mechanism> mechs;
  for (const auto tag : order) mechs.push_back(Mechanism{tag, 86400.0, is_mta(tag) ? mta : nullptr});
  auto set = build_samples(log, mechs, MechanismTag::LastClick, LabelMode::Binary);
  // Fold ids into the unit-test vocabulary.
  for (auto& s : set.samples) {
    s.features.user %= 20;
    s.features.ad %= 30;
  }
  return set;
}

class VariantGradients : public ::testing::TestWithParam<Variant> {};

TEST_P(VariantGradients, FiniteDifferences) {
  MalModel model = model_for(GetParam());
  testing::redraw_embeddings(model, 5);
  for (const std::size_t rows : {4u, 16u}) {
    const Batch batch = testing::random_batch(model, rows, rows);
    const auto r = numcore::grad_check(loss_fn(model, batch), model.params, 1e-5, 2);
    EXPECT_LT(r.max_relative_error, 1e-4) << to_string(GetParam()) << " rows " << rows << " worst " << r.worst_param;
  }
}

INSTANTIATE_TEST_SUITE_P(AllVariants, VariantGradients,
                         ::testing::Values(Variant::MAL, Variant::MAL_noCAT, Variant::MAL_noMultiAttr, Variant::Base,
                                           Variant::SharedBottomMTL),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(MalNet, InjectedBugIsDetected) {
  MalModel model = model_for(Variant::MAL);
  testing::redraw_embeddings(model, 5);
  const Batch batch = testing::random_batch(model, 8, 1);
  auto broken = [&](numcore::ParamStore& store, bool grads) {
    Graph g(store, numcore::GraphOptions{numcore::OpKind::Relu});
    const auto terms = total_loss(g, forward(g, model, batch), batch, model);
    if (grads) g.backward(terms.total);
    return g.scalar(terms.total);
  };
  EXPECT_GT(numcore::grad_check(broken, model.params, 1e-5, 2).max_relative_error, 1e-2);
}

// With every parameter zero each logit is 0: ln 2 for the primary head,
// ln 2 per AKA tower and ln 16 for the uniform CAT softmax.
TEST(MalNet, ZeroParameterLossByHand) {
  MalModel model = model_for(Variant::MAL);
  for (auto& [_, e] : model.params.entries()) e.value.fill(0.0);
  Batch batch = testing::random_batch(model, 1, 4);
  for (auto& w : batch.weights) w[0] = 1.0;
  Graph g(model.params);
  const auto terms = total_loss(g, forward(g, model, batch), batch, model);
  EXPECT_NEAR(g.scalar(terms.total), std::log(2.0) + 4 * std::log(2.0) + std::log(16.0), 1e-12);
  EXPECT_NEAR(g.scalar(terms.primary), std::log(2.0), 1e-15);
  ASSERT_TRUE(terms.cat);
  EXPECT_NEAR(g.scalar(*terms.cat), std::log(16.0), 1e-15);
}

TEST(MalNet, LambdaScalesAuxTerms) {
  ArchConfig arch;
  arch.lambda_aux = 0.5;
  arch.lambda_cat = 0.25;
  MalModel model = build_model(arch, small_vocab(), kFourMechanisms, MechanismTag::LastClick, 3);
  const Batch batch = testing::random_batch(model, 6, 2);
  Graph g(model.params);
  const auto t = total_loss(g, forward(g, model, batch), batch, model);
  double aux = 0;
  for (const auto a : t.aux) aux += g.scalar(a);
  EXPECT_NEAR(g.scalar(t.total), g.scalar(t.primary) + 0.5 * aux + 0.25 * g.scalar(*t.cat), 1e-12);
}

TEST(MalNet, SharedBottomMtlUsesPrimaryTower) {
  MalModel model = model_for(Variant::SharedBottomMTL);
  const Batch batch = testing::random_batch(model, 5, 2);
  Graph g(model.params);
  const auto out = forward(g, model, batch);
  EXPECT_EQ(out.primary_logit, out.mechanism_logits[model.primary_index()]);
  const auto t = total_loss(g, out, batch, model);
  EXPECT_EQ(t.aux.size(), 3u);
  EXPECT_FALSE(t.cat);
  EXPECT_FALSE(model.params.contains("head.W"));
}

TEST(MalNet, NoMultiAttrSupervisesWithPrimaryOnly) {
  MalModel a = model_for(Variant::MAL_noMultiAttr);
  Batch batch = testing::random_batch(a, 6, 2);
  Batch scrambled = batch;
  for (std::size_t k = 1; k < scrambled.labels.size(); ++k) {
    for (auto& l : scrambled.labels[k]) l = 1.0 - l;
  }
  for (auto& c : scrambled.cat) c ^= 0b1110;
  Graph g1(a.params), g2(a.params);
  const double l1 = g1.scalar(total_loss(g1, forward(g1, a, batch), batch, a).total);
  const double l2 = g2.scalar(total_loss(g2, forward(g2, a, scrambled), scrambled, a).total);
  EXPECT_EQ(l1, l2);
}

TEST(MalNet, ParameterCounts) {
  const auto base = model_for(Variant::Base);
  // emb (20+30+4+4+8+5)*8, shared 48x64+64 and 64x32+32, ptp 32x32+32, head 32+1.
  EXPECT_EQ(base.parameter_count(), 568u + 3136u + 2080u + 1056u + 33u);
  const auto mal = model_for(Variant::MAL);
  const auto no_multi = model_for(Variant::MAL_noMultiAttr);
  const auto no_cat = model_for(Variant::MAL_noCAT);
  EXPECT_EQ(mal.parameter_count(), no_multi.parameter_count());
  // CAT tower 32x16+16, 16x8+8, 8x16+16; projection grows by 8 inputs.
  EXPECT_EQ(mal.parameter_count() - no_cat.parameter_count(), 528u + 136u + 144u + 8u * 32u);
  EXPECT_EQ(mal.knowledge_dim(), 5u * 8u);
}

TEST(MalNet, SharedNamesShareInitialValues) {
  const auto base = model_for(Variant::Base);
  const auto mal = model_for(Variant::MAL);
  for (const auto& name : base.params.names()) EXPECT_EQ(base.params.value(name), mal.params.value(name)) << name;
  EXPECT_NE(model_for(Variant::MAL, 4).params.value("shared.0.W"), mal.params.value("shared.0.W"));
}

TEST(MalNet, StopGradientZeroesPrimaryGradientIntoTowers) {
  for (const bool stop : {false, true}) {
    ArchConfig arch;
    arch.stop_gradient_at_K = stop;
    MalModel model = build_model(arch, small_vocab(), kFourMechanisms, MechanismTag::LastClick, 3);
    const Batch batch = testing::random_batch(model, 8, 3);
    Graph g(model.params);
    const auto terms = total_loss(g, forward(g, model, batch), batch, model);
    g.backward(terms.primary);
    double tower = 0, proj = 0;
    for (const auto& [name, e] : model.params.entries()) {
      double s = 0;
      for (const double x : e.grad.values()) s += std::abs(x);
      if (name.rfind("tower.", 0) == 0) tower += s;
      if (name.rfind("proj.", 0) == 0) proj += s;
    }
    EXPECT_GT(proj, 0.0);
    if (stop) {
      EXPECT_EQ(tower, 0.0);
    } else {
      EXPECT_GT(tower, 0.0);
    }
  }
}

// lambda = 0 with a zero, frozen projection leaves only the Base path.
TEST(MalNet, ZeroLambdaZeroProjectionMatchesBase) {
  const SampleSet set = small_samples(150);
  MalModel base = build_model(ArchConfig{.variant = Variant::Base}, small_vocab(), kFourMechanisms,
                              MechanismTag::LastClick, 9);
  ArchConfig arch;
  arch.lambda_aux = 0;
  arch.lambda_cat = 0;
  MalModel mal = build_model(arch, small_vocab(), kFourMechanisms, MechanismTag::LastClick, 9);
  mal.params.value("proj.W").fill(0.0);
  mal.params.value("proj.b").fill(0.0);
  TrainConfig tc;
  tc.seed = 1;
  tc.batch_size = 64;
  train(base, set, tc);
  tc.frozen_prefixes = {"proj."};
  train(mal, set, tc);
  const auto pb = predict_primary(base, set);
  const auto pm = predict_primary(mal, set);
  ASSERT_EQ(pb.size(), pm.size());
  for (std::size_t i = 0; i < pb.size(); ++i) ASSERT_NEAR(pb[i], pm[i], 1e-12) << i;
  EXPECT_TRUE(mal.params.entry("proj.W").trainable);
}

TEST(MalNet, TrainingIsDeterministicAndLearns) {
  const SampleSet set = small_samples(300);
  TrainConfig tc;
  tc.seed = 2;
  tc.batch_size = 32;
  tc.epochs = 3;
  tc.log_every = 10;
  MalModel a = model_for(Variant::MAL, 2);
  MalModel b = model_for(Variant::MAL, 2);
  const auto sa = train(a, set, tc);
  const auto sb = train(b, set, tc);
  EXPECT_EQ(sa, sb);
  for (const auto& name : a.params.names()) ASSERT_EQ(a.params.value(name), b.params.value(name));
  ASSERT_GE(sa.windows.size(), 2u);
  EXPECT_LT(sa.windows.back().total, sa.windows.front().total);
  EXPECT_EQ(sa.windows.front().aux.size(), 4u);
}

TEST(MalNet, TrainRejectsMismatchedSamples) {
  const SampleSet set = small_samples(50, {MechanismTag::LastClick, MechanismTag::Linear});
  MalModel model = model_for(Variant::MAL);
  EXPECT_THROW(train(model, set, {}), Error);
}

TEST(MalNet, SaveLoadRoundTrip) {
  const auto dir = testing::scratch_dir("malnet-save");
  MalModel model = model_for(Variant::MAL_noCAT, 6);
  testing::redraw_embeddings(model, 1);
  save_model(model, dir / "m");
  const MalModel back = load_model(dir / "m");
  EXPECT_EQ(back.arch.variant, Variant::MAL_noCAT);
  EXPECT_EQ(back.mechanism_order, model.mechanism_order);
  EXPECT_EQ(arch_descriptor(back), arch_descriptor(model));
  const Batch batch = testing::random_batch(model, 12, 3);
  EXPECT_EQ(predict_primary(back, batch), predict_primary(model, batch));

  std::filesystem::remove(dir / "m" / "arch.json");
  try {
    load_model(dir / "m");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Dependency);
  }
}

TEST(ArchConfig, Validation) {
  ArchConfig a;
  EXPECT_NO_THROW(a.validate(4));
  EXPECT_THROW(a.validate(0), Error);
  EXPECT_THROW(a.validate(11), Error);
  a.projection_dim = 16;
  EXPECT_THROW(a.validate(4), Error);
  a = ArchConfig{};
  a.lambda_aux = -1;
  EXPECT_THROW(a.validate(4), Error);
  a = ArchConfig{};
  a.variant = Variant::Base;
  a.stop_gradient_at_K = true;
  EXPECT_THROW(a.validate(4), Error);
  EXPECT_EQ(parse_variant("MAL_noCAT"), Variant::MAL_noCAT);
  EXPECT_THROW(parse_variant("MMoE"), Error);
}

}  // namespace
}  // namespace mal
