#include <benchmark/benchmark.h>

#include "mal/attribution.hpp"
#include "mal/journey.hpp"
#include "mal/metrics.hpp"
#include "mal/random.hpp"

namespace {

using namespace mal;

GenConfig bench_gen(std::uint64_t users) {
  GenConfig g;
  g.n_users = users;
  g.n_ads = 2000;
  g.n_industries = 4;
  g.latent_dim = 8;
  g.journeys_per_user_mean = 2.0;
  g.industry_path_profile = {{2.0, 0.9}, {1.1, 0.2}, {2.0, 0.9}, {1.1, 0.2}};
  g.conv_bias = -2.0;
  g.affinity_scale = 1.5;
  g.seed = 1;
  return g;
}

void BM_Generate(benchmark::State& state) {
  const GenConfig g = bench_gen(static_cast<std::uint64_t>(state.range(0)));
  std::size_t journeys = 0;
  for (auto _ : state) {
    const auto log = generate_dataset(g);
    journeys = log.journeys.size();
    benchmark::DoNotOptimize(log.journeys.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(journeys));
}
BENCHMARK(BM_Generate)->Arg(10000)->Unit(benchmark::kMillisecond);

Journey bench_journey(std::size_t clicks) {
  Journey j;
  for (std::size_t i = 0; i < clicks; ++i) {
    j.clicks.push_back(Touchpoint{i, 0, static_cast<std::int64_t>(i * 1000 + 7 * i * i), static_cast<std::uint32_t>(i)});
  }
  j.conversion = Conversion{static_cast<std::int64_t>(clicks * 2000)};
  return j;
}

void BM_Attribute(benchmark::State& state) {
  auto mta = std::make_shared<MtaModel>();
  mta->n_industries = 1;
  mta->theta.assign(mta->feature_count(), 0.1);
  mta->bias = -1;
  Mechanism m;
  m.tag = static_cast<MechanismTag>(state.range(0));
  m.mta = mta;
  const Journey j = bench_journey(static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(attribute(m, j));
  state.SetLabel(std::string(to_string(m.tag)));
}
BENCHMARK(BM_Attribute)
    ->Args({static_cast<int>(MechanismTag::Linear), 8})
    ->Args({static_cast<int>(MechanismTag::TimeDecay), 8})
    ->Args({static_cast<int>(MechanismTag::RemovalEffectMTA), 8})
    ->Args({static_cast<int>(MechanismTag::ShapleyMTA), 8})
    ->Args({static_cast<int>(MechanismTag::ShapleyMTA), 12});

std::vector<ScoredSample> scored(std::size_t n) {
  RandomStream r(3, StreamTag::Test, 0);
  std::vector<ScoredSample> s(n);
  for (auto& x : s) {
    x.score = r.uniform();
    x.label = r.bernoulli(0.2) ? 1.0 : 0.0;
    x.weight = r.uniform(0.1, 1.0);
    x.user_id = r.below(n / 20 + 1);
  }
  return s;
}

void BM_WeightedAuc(benchmark::State& state) {
  const auto s = scored(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(weighted_auc(s));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_WeightedAuc)->Arg(1000)->Arg(100000)->Unit(benchmark::kMicrosecond);

void BM_Gauc(benchmark::State& state) {
  const auto s = scored(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(gauc(s));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Gauc)->Arg(100000)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
