#include <benchmark/benchmark.h>

#include "mal/malnet.hpp"
#include "mal/random.hpp"

namespace {

using namespace mal;

MalModel bench_model(Variant variant) {
  ArchConfig arch;
  arch.variant = variant;
  VocabSizes vocab;
  vocab.users = 50000;
  vocab.ads = 10000;
  vocab.industries = 8;
  return build_model(arch, vocab, kDefaultMechanismOrder, MechanismTag::LastClick, 1);
}

Batch bench_batch(const MalModel& model, std::size_t rows) {
  RandomStream r(1, StreamTag::Test, 0);
  Batch b;
  for (std::size_t i = 0; i < rows; ++i) {
    b.user.push_back(static_cast<std::uint32_t>(r.below(model.vocab.users)));
    b.ad.push_back(static_cast<std::uint32_t>(r.below(model.vocab.ads)));
    b.industry.push_back(static_cast<std::uint32_t>(r.below(model.vocab.industries)));
    b.position.push_back(static_cast<std::uint32_t>(r.below(model.vocab.positions)));
    b.recency.push_back(static_cast<std::uint32_t>(r.below(model.vocab.recency)));
    b.count.push_back(static_cast<std::uint32_t>(r.below(model.vocab.count)));
  }
  const std::size_t n = model.mechanism_order.size();
  b.labels.assign(n, std::vector<double>(rows));
  b.weights.assign(n, std::vector<double>(rows, 1.0));
  b.cat.assign(rows, 0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t m = 0; m < n; ++m) {
      if (r.bernoulli(0.1)) {
        b.labels[m][i] = 1.0;
        b.cat[i] |= 1u << m;
      }
    }
  }
  return b;
}

void BM_TrainStep(benchmark::State& state) {
  MalModel model = bench_model(static_cast<Variant>(state.range(0)));
  const Batch batch = bench_batch(model, 256);
  for (auto _ : state) {
    numcore::Graph g(model.params);
    const auto terms = total_loss(g, forward(g, model, batch), batch, model);
    g.backward(terms.total);
    numcore::adam_step(model.params, {});
    benchmark::DoNotOptimize(g.scalar(terms.total));
  }
  state.SetItemsProcessed(state.iterations() * 256);
  state.SetLabel(std::string(to_string(model.arch.variant)));
}
BENCHMARK(BM_TrainStep)
    ->Arg(static_cast<int>(Variant::Base))
    ->Arg(static_cast<int>(Variant::MAL))
    ->Unit(benchmark::kMicrosecond);

void BM_Predict(benchmark::State& state) {
  const MalModel model = bench_model(Variant::MAL);
  const Batch batch = bench_batch(model, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(predict_primary(model, batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Predict)->Arg(256)->Arg(4096)->Unit(benchmark::kMicrosecond);

void BM_Philox(benchmark::State& state) {
  RandomStream r(1, StreamTag::Test, 0);
  for (auto _ : state) benchmark::DoNotOptimize(r.next_u64());
}
BENCHMARK(BM_Philox);

}  // namespace
