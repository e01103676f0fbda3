#pragma once

#include "mal/numcore/param_store.hpp"

namespace mal::numcore {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update over every trainable parameter.
void adam_step(ParamStore& store, const AdamConfig& config);

}  // namespace mal::numcore
