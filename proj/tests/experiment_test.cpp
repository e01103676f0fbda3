#include <gtest/gtest.h>

#include "mal/error.hpp"
#include "mal/experiment.hpp"

namespace mal {
namespace {

ErrorKind kind_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::Io;
}

TEST(Config, DefaultsAreValid) { EXPECT_NO_THROW(ExperimentConfig::defaults().validate()); }

TEST(Config, PrintedConfigRoundTrips) {
  const auto d = ExperimentConfig::defaults();
  const auto back = parse_config(d.to_ini());
  EXPECT_EQ(back.to_ini(), d.to_ini());
  EXPECT_EQ(back.gen.digest(), d.gen.digest());
}

TEST(Config, OverridesApplyOverDefaults) {
  const auto c = parse_config(
      "[gen]\nn_users = 123\nn_industries = 2\ncarryover_gamma = 0.9, 0.1\nmean_clicks = 2, 1\n"
      "[attribution]\nmechanism_order = LastClick, Linear\nprimary_tag = Linear\n"
      "[run]\nseeds = 4, 9\nvariants = Base, MAL\n[train]\nlr = 0.01\n");
  EXPECT_EQ(c.gen.n_users, 123u);
  ASSERT_EQ(c.gen.industry_path_profile.size(), c.gen.n_industries);
  EXPECT_EQ(c.attribution.primary_tag, MechanismTag::Linear);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{4, 9}));
  EXPECT_EQ(c.variants, (std::vector<Variant>{Variant::Base, Variant::MAL}));
  EXPECT_EQ(c.train.adam.lr, 0.01);
  EXPECT_EQ(c.arch.embedding_dim, ExperimentConfig::defaults().arch.embedding_dim);
}

TEST(Config, ErrorsAreConfigErrors) {
  EXPECT_EQ(kind_of("[gen]\nno_such_key = 1\n"), ErrorKind::Config);
  EXPECT_EQ(kind_of("[nope]\nx = 1\n"), ErrorKind::Config);
  EXPECT_EQ(kind_of("[gen]\nn_users = many\n"), ErrorKind::Config);
  EXPECT_EQ(kind_of("[gen]\nn_users = 0\n"), ErrorKind::Config);
  EXPECT_EQ(kind_of("[run]\nseeds =\n"), ErrorKind::Config);
  EXPECT_EQ(kind_of("[run]\nvariants = MAL, MAL\n"), ErrorKind::Config);
  EXPECT_EQ(kind_of("[attribution]\nprimary_tag = TimeDecay\n"), ErrorKind::Config);
  EXPECT_EQ(kind_of("[paths]\nsamples = data\n"), ErrorKind::Config);
  EXPECT_EQ(kind_of("[report]\ngain_edges = 1, 2\n"), ErrorKind::Config);
  EXPECT_EQ(kind_of("[gen\n"), ErrorKind::Config);
  try {
    parse_config("[gen]\nbogus = 1\n", "exp.ini");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("exp.ini"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos);
  }
}

TEST(Config, StageKeysTrackTheirInputs) {
  const auto a = ExperimentConfig::defaults();
  auto b = a;
  b.gen.seed += 1;
  EXPECT_NE(a.data_key(), b.data_key());
  b = a;
  b.attribution.half_life_seconds *= 2;
  EXPECT_EQ(a.data_key(), b.data_key());
  EXPECT_NE(a.attribution_key(), b.attribution_key());
  b = a;
  b.train.adam.lr *= 2;
  EXPECT_EQ(a.attribution_key(), b.attribution_key());
  EXPECT_NE(a.model_key(), b.model_key());
  b = a;
  b.report.trailing_fraction = 0.5;
  EXPECT_EQ(a.model_key(), b.model_key());
  EXPECT_NE(a.report_key(), b.report_key());
  b = a;
  b.paths.workdir = "elsewhere";
  EXPECT_EQ(a.model_key(), b.model_key());
}

}  // namespace
}  // namespace mal
