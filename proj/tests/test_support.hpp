#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mal/attribution.hpp"
#include "mal/journey.hpp"
#include "mal/malnet.hpp"
#include "mal/random.hpp"

namespace mal::testing {

// Two long-path and two short-path industries; small enough for unit tests.
inline GenConfig small_gen(std::uint64_t users = 400, std::uint64_t seed = 7) {
  GenConfig g;
  g.n_users = users;
  g.n_ads = 80;
  g.n_industries = 4;
  g.latent_dim = 4;
  g.journeys_per_user_mean = 3.0;
  g.industry_path_profile = {{2.5, 0.9}, {1.2, 0.1}, {2.0, 0.85}, {1.1, 0.2}};
  g.conv_bias = -1.5;
  g.affinity_scale = 1.5;
  g.seed = seed;
  return g;
}

inline Journey make_journey(std::uint64_t id, std::vector<std::int64_t> ts, std::optional<std::int64_t> conversion,
                            std::uint32_t industry = 0) {
  Journey j;
  j.user_id = id;
  j.journey_id = id;
  j.industry_id = industry;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    j.clicks.push_back(Touchpoint{i, industry, ts[i], static_cast<std::uint32_t>(i)});
  }
  if (conversion) j.conversion = Conversion{*conversion};
  return j;
}

// Random batch with unit-scale embeddings, the regime used for finite differences.
inline Batch random_batch(const MalModel& model, std::size_t rows, std::uint64_t seed) {
  RandomStream r(seed, StreamTag::Test, 99);
  Batch b;
  const auto& v = model.vocab;
  for (std::size_t i = 0; i < rows; ++i) {
    b.user.push_back(static_cast<std::uint32_t>(r.below(v.users)));
    b.ad.push_back(static_cast<std::uint32_t>(r.below(v.ads)));
    b.industry.push_back(static_cast<std::uint32_t>(r.below(v.industries)));
    b.position.push_back(static_cast<std::uint32_t>(r.below(v.positions)));
    b.recency.push_back(static_cast<std::uint32_t>(r.below(v.recency)));
    b.count.push_back(static_cast<std::uint32_t>(r.below(v.count)));
  }
  const std::size_t n = model.mechanism_order.size();
  b.labels.assign(n, std::vector<double>(rows));
  b.weights.assign(n, std::vector<double>(rows));
  b.cat.assign(rows, 0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t m = 0; m < n; ++m) {
      const bool bit = r.bernoulli(0.4);
      b.labels[m][i] = bit ? 1.0 : 0.0;
      b.weights[m][i] = bit ? r.uniform(0.2, 1.0) : 1.0;
      if (bit) b.cat[i] |= 1u << m;
    }
  }
  return b;
}

inline void redraw_embeddings(MalModel& model, std::uint64_t seed) {
  RandomStream r(seed, StreamTag::GradCheck, 1);
  for (const auto& name : model.params.names()) {
    if (name.rfind("emb.", 0) != 0) continue;
    for (auto& x : model.params.value(name).values()) x = r.normal();
  }
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mal-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline const std::vector<MechanismTag> kFourMechanisms{MechanismTag::LastClick, MechanismTag::FirstClick,
                                                       MechanismTag::Linear, MechanismTag::RemovalEffectMTA};

}  // namespace mal::testing
