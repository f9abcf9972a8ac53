#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "pcgkit/autograd/tensor.hpp"

namespace pcgkit::ag {

enum class Reduction { Sum, Mean };

/// Task weights of the multi-task objective L = w_hr * CE + w_mm * BCE.
struct LossWeights {
  double w_hr = 1.0;
  double w_mm = 1.0;
  std::vector<double> class_weights;  // empty = uniform

  void validate(std::size_t classes) const {
    if (!(w_hr >= 0.0) || !(w_mm >= 0.0)) throw ConfigError("loss weights must be non-negative");
    if (!class_weights.empty()) {
      if (class_weights.size() != classes) throw ConfigError("class weight vector has wrong length");
      for (double w : class_weights) {
        if (!(w >= 0.0)) throw ConfigError("class weights must be non-negative");
      }
    }
  }
};

/// weight * sum_a -cw[y_a] log softmax(logits_a)[y_a]. Mean reduction divides by A.
template <class T>
Tensor<T> weighted_softmax_ce(const Tensor<T>& logits, std::span<const int> targets, double weight,
                              std::span<const double> class_weights = {},
                              Reduction reduction = Reduction::Sum) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw ShapeError("softmax CE: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  const std::size_t a = logits.dim(0), k = logits.dim(1);
  if (!class_weights.empty() && class_weights.size() != k) throw ShapeError("softmax CE: class weight length");
  auto probs = std::make_shared<std::vector<T>>(a * k);
  auto coef = std::make_shared<std::vector<T>>(a);
  const T norm = reduction == Reduction::Mean && a > 0 ? T(1) / static_cast<T>(a) : T(1);
  T total = 0;
  for (std::size_t r = 0; r < a; ++r) {
    const int y = targets[r];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ValidationError("softmax CE: target " + std::to_string(y) + " out of range");
    }
    const T* z = logits.data().data() + r * k;
    T mx = z[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, z[j]);
    T sum = 0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - mx);
    const T lse = mx + std::log(sum);
    for (std::size_t j = 0; j < k; ++j) (*probs)[r * k + j] = std::exp(z[j] - lse);
    const T cw = class_weights.empty() ? T(1) : static_cast<T>(class_weights[static_cast<std::size_t>(y)]);
    (*coef)[r] = static_cast<T>(weight) * cw * norm;
    total += (*coef)[r] * (lse - z[y]);
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  return Tensor<T>::make_result({1}, {total}, {logits}, [probs, coef, tgt, k](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      const T up = self.grad[0];
      for (std::size_t r = 0; r < tgt.size(); ++r) {
        const T c = (*coef)[r] * up;
        for (std::size_t j = 0; j < k; ++j) g[r * k + j] += c * (*probs)[r * k + j];
        g[r * k + static_cast<std::size_t>(tgt[r])] -= c;
      }
    }
  });
}

/// weight * sum over unmasked b of BCE(sigmoid(logit_b), y_b), using the
/// log-sum-exp form. Targets are 0/1; std::nullopt entries are masked out.
/// Mean reduction divides by the number of unmasked entries.
template <class T>
Tensor<T> masked_sigmoid_bce(const Tensor<T>& logits, std::span<const std::optional<int>> targets, double weight,
                             Reduction reduction = Reduction::Sum) {
  if (logits.numel() != targets.size()) {
    throw ShapeError("sigmoid BCE: " + std::to_string(logits.numel()) + " logits vs " +
                     std::to_string(targets.size()) + " targets");
  }
  std::size_t count = 0;
  for (const auto& t : targets) {
    if (t) {
      if (*t != 0 && *t != 1) throw ValidationError("sigmoid BCE: targets must be 0 or 1");
      ++count;
    }
  }
  const T norm = reduction == Reduction::Mean && count > 0 ? T(1) / static_cast<T>(count) : T(1);
  const T scale = static_cast<T>(weight) * norm;
  T total = 0;
  std::vector<T> dz(targets.size(), T(0));
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!targets[i]) continue;
    const T z = logits.data()[i];
    const T y = static_cast<T>(*targets[i]);
    total += scale * (std::max(z, T(0)) - z * y + std::log1p(std::exp(-std::abs(z))));
    const T p = z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
    dz[i] = scale * (p - y);
  }
  return Tensor<T>::make_result({1}, {total}, {logits}, [dz = std::move(dz)](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < dz.size(); ++i) g[i] += self.grad[0] * dz[i];
    }
  });
}

}  // namespace pcgkit::ag
