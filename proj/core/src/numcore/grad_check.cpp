#include "mal/numcore/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mal/error.hpp"
#include "mal/random.hpp"

namespace mal::numcore {

GradCheckResult grad_check(const LossFn& loss, ParamStore& store, double eps, std::uint64_t seed) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) fail(ErrorKind::Domain, "grad_check: eps must be in [1e-7, 1e-3]");
  loss(store, true);
  struct Probe {
    std::string name;
    std::size_t index;
    double analytic;
  };
  std::vector<Probe> probes;
  const std::size_t total = store.parameter_count();
  const double fraction = total > 0 ? std::max(0.01, std::min(1.0, 50.0 / static_cast<double>(total))) : 0.0;
  RandomStream rng(seed, StreamTag::GradCheck, 0);
  for (const auto& [name, e] : store.entries()) {
    const std::size_t n = e.value.size();
    const std::size_t take = std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n))));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    // Partial Fisher-Yates: the first `take` entries are a uniform sample.
    for (std::size_t i = 0; i < take; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    for (std::size_t i = 0; i < take; ++i) probes.push_back({name, idx[i], e.grad[idx[i]]});
  }

  GradCheckResult result;
  result.coordinates = probes.size();
  for (const auto& probe : probes) {
    double& x = store.value(probe.name)[probe.index];
    const double saved = x;
    x = saved + eps;
    const double up = loss(store, false);
    x = saved - eps;
    const double down = loss(store, false);
    x = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(probe.analytic), std::abs(numeric), 1e-8});
    const double rel = std::abs(probe.analytic - numeric) / denom;
    if (rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_param = probe.name;
      result.worst_index = probe.index;
    }
  }
  return result;
}

}  // namespace mal::numcore
