#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pcgkit/autograd/tensor.hpp"

namespace pcgkit::ag {

/// A trainable tensor with its Adam moments.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  std::vector<T> m;
  std::vector<T> v;
  long step = 0;

  Parameter(std::string n, Tensor<T> t) : name(std::move(n)), tensor(std::move(t)) {
    tensor.set_requires_grad(true);
    m.assign(tensor.numel(), T(0));
    v.assign(tensor.numel(), T(0));
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update; `step` is the 1-based count after this update.
template <class T>
void adam_step(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, long step,
               double lr, const AdamConfig& cfg = {}) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw ShapeError("adam_step: gradient/state shape mismatch");
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i];
    m[i] = b1 * m[i] + (T(1) - b1) * g;
    v[i] = b2 * v[i] + (T(1) - b2) * g * g;
    const double m_hat = static_cast<double>(m[i]) / c1;
    const double v_hat = static_cast<double>(v[i]) / c2;
    param[i] -= static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
  }
}

template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(std::vector<Parameter<T>*>& params, double lr) const {
    for (auto* p : params) {
      ++p->step;
      if (!p->tensor.has_grad()) {
        // No gradient reached this tensor: treat as zero gradient.
        p->tensor.grad();
      }
      adam_step<T>(p->tensor.data(), std::span<const T>(p->tensor.grad()), p->m, p->v, p->step, lr, cfg_);
    }
  }

 private:
  AdamConfig cfg_;
};

/// Step decay that switches on once validation MAE first drops below a trigger.
/// The activation epoch keeps the base rate; the rate is then
/// base * gamma^floor(epochs_since_activation / step_size).
struct StepScheduler {
  double base_lr = 1e-3;
  int step_size = 2;
  double gamma = 0.1;
  double trigger_mae = 2.0;
  bool enabled = true;
  bool activated = false;
  int epochs_since_activation = 0;

  double lr() const {
    if (!enabled || !activated) return base_lr;
    return base_lr * std::pow(gamma, epochs_since_activation / step_size);
  }

  /// Call once per epoch after validation; returns the rate for the next epoch.
  double update(double val_mae) {
    if (!enabled) return base_lr;
    if (activated) {
      ++epochs_since_activation;
    } else if (val_mae < trigger_mae) {
      activated = true;
      epochs_since_activation = 0;
    }
    return lr();
  }
};

}  // namespace pcgkit::ag
