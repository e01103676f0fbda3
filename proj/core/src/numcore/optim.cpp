#include "mal/numcore/optim.hpp"

#include <cmath>

namespace mal::numcore {

void adam_step(ParamStore& store, const AdamConfig& config) {
  ++store.step;
  const double t = static_cast<double>(store.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (auto& [_, e] : store.entries()) {
    if (!e.trainable) continue;
    double* value = e.value.data();
    const double* grad = e.grad.data();
    double* m = e.moment1.data();
    double* v = e.moment2.data();
    for (std::size_t i = 0, n = e.value.size(); i < n; ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      value[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

}  // namespace mal::numcore
