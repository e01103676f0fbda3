#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "mal/numcore/param_store.hpp"

namespace mal::numcore {

// Evaluates the scalar loss at the store's current values. When
// `with_gradients` is set it must also leave d(loss)/d(param) in the store.
using LossFn = std::function<double(ParamStore& store, bool with_gradients)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

// Central differences on a random 1% of each tensor's coordinates (at least 50
// overall); relative error uses max(|analytic|, |numeric|, 1e-8).
GradCheckResult grad_check(const LossFn& loss, ParamStore& store, double eps, std::uint64_t seed = 0);

}  // namespace mal::numcore
