#pragma once

// Finite-difference gradient cases shared by the unit tests and the
// acceptance binary. Each case draws fresh random inputs from `rng` and
// returns the worst relative error over every input coordinate.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pcgkit/autograd/loss.hpp"
#include "pcgkit/autograd/ops.hpp"
#include "pcgkit/random.hpp"
#include "support.hpp"

namespace testing_support {

using T64 = pcgkit::ag::Tensor<double>;

struct GradCase {
  std::string name;
  double tolerance;
  std::function<double(pcgkit::Rng&)> run;
};

inline T64 random_tensor(pcgkit::ag::Shape shape, pcgkit::Rng& rng, double scale = 1.0) {
  std::vector<double> v(pcgkit::ag::numel(shape));
  for (auto& x : v) x = scale * rng.uniform(-1.0, 1.0);
  return T64(std::move(shape), std::move(v), true);
}

/// sum_i r_i y_i with fixed random r, so every output element feeds the scalar.
inline std::function<T64(const T64&)> random_projection(std::size_t n, pcgkit::Rng& rng) {
  auto r = random_tensor({1, n}, rng);
  r.set_requires_grad(false);
  return [r](const T64& y) {
    namespace ag = pcgkit::ag;
    return ag::linear(ag::reshape(y, {1, y.numel()}), r, T64({1}, {0.0}));
  };
}

inline std::vector<GradCase> gradient_cases() {
  namespace ag = pcgkit::ag;
  std::vector<GradCase> cases;

  cases.push_back({"conv1d", 1e-4, [](pcgkit::Rng& rng) {
    auto x = random_tensor({2, 3, 9}, rng), w = random_tensor({4, 3, 3}, rng), b = random_tensor({4}, rng);
    auto proj = random_projection(2 * 4 * 5, rng);
    return gradcheck([&] { return proj(ag::conv1d(x, w, b, 2, 1)); }, {x, w, b});
  }});

  cases.push_back({"conv2d", 1e-4, [](pcgkit::Rng& rng) {
    auto x = random_tensor({1, 1, 5, 5}, rng), w = random_tensor({1, 1, 3, 3}, rng), b = random_tensor({1}, rng);
    auto proj = random_projection(9, rng);
    return gradcheck([&] { return proj(ag::conv2d(x, w, b)); }, {x, w, b});
  }});

  cases.push_back({"conv2d_strided_padded", 1e-4, [](pcgkit::Rng& rng) {
    auto x = random_tensor({2, 2, 6, 7}, rng), w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
    const ag::Conv2dOptions opt{2, 1, 1, 1};
    auto proj = random_projection(2 * 3 * 3 * 7, rng);
    return gradcheck([&] { return proj(ag::conv2d(x, w, b, opt)); }, {x, w, b});
  }});

  cases.push_back({"maxpool2d", 1e-4, [](pcgkit::Rng& rng) {
    auto x = random_tensor({2, 2, 4, 6}, rng);
    auto proj = random_projection(2 * 2 * 2 * 3, rng);
    return gradcheck([&] { return proj(ag::maxpool2d(x, 2, 2, 2, 2)); }, {x});
  }});

  cases.push_back({"linear", 1e-4, [](pcgkit::Rng& rng) {
    auto x = random_tensor({3, 5}, rng), w = random_tensor({4, 5}, rng), b = random_tensor({4}, rng);
    auto proj = random_projection(12, rng);
    return gradcheck([&] { return proj(ag::linear(x, w, b)); }, {x, w, b});
  }});

  cases.push_back({"relu", 1e-4, [](pcgkit::Rng& rng) {
    auto x = random_tensor({4, 6}, rng);
    auto proj = random_projection(24, rng);
    return gradcheck([&] { return proj(ag::relu(x)); }, {x});
  }});

  cases.push_back({"dropout_eval", 1e-4, [](pcgkit::Rng& rng) {
    auto x = random_tensor({3, 4}, rng);
    auto proj = random_projection(12, rng);
    pcgkit::Rng drop(1);
    return gradcheck([&] { return proj(ag::dropout(x, 0.5, false, drop)); }, {x});
  }});

  cases.push_back({"dropout_train_fixed_mask", 1e-4, [](pcgkit::Rng& rng) {
    auto x = random_tensor({3, 4}, rng);
    auto proj = random_projection(12, rng);
    const auto seed = rng.next();
    return gradcheck([&] {
      pcgkit::Rng drop(seed);
      return proj(ag::dropout(x, 0.3, true, drop));
    }, {x});
  }});

  cases.push_back({"lstm_3step_2layer", 1e-3, [](pcgkit::Rng& rng) {
    const std::size_t c = 3, h = 4;
    auto x = random_tensor({2, 3, c}, rng);
    auto wi1 = random_tensor({4 * h, c}, rng, 0.6), wh1 = random_tensor({4 * h, h}, rng, 0.6),
         b1 = random_tensor({4 * h}, rng, 0.6);
    auto wi2 = random_tensor({4 * h, h}, rng, 0.6), wh2 = random_tensor({4 * h, h}, rng, 0.6),
         b2 = random_tensor({4 * h}, rng, 0.6);
    auto proj = random_projection(2 * 3 * h, rng);
    return gradcheck([&] { return proj(ag::lstm_layer(ag::lstm_layer(x, wi1, wh1, b1), wi2, wh2, b2)); },
                     {x, wi1, wh1, b1, wi2, wh2, b2});
  }});

  cases.push_back({"softmax_ce", 1e-4, [](pcgkit::Rng& rng) {
    auto z = random_tensor({3, 141}, rng, 3.0);
    std::vector<int> y{static_cast<int>(rng.next() % 141), static_cast<int>(rng.next() % 141),
                       static_cast<int>(rng.next() % 141)};
    return gradcheck([&] { return ag::weighted_softmax_ce<double>(z, y, 0.7); }, {z});
  }});

  cases.push_back({"sigmoid_bce_masked", 1e-4, [](pcgkit::Rng& rng) {
    auto z = random_tensor({5, 1}, rng, 4.0);
    std::vector<std::optional<int>> y{1, 0, std::nullopt, 1, 0};
    return gradcheck([&] { return ag::masked_sigmoid_bce<double>(z, y, 1.3); }, {z});
  }});

  cases.push_back({"shape_ops", 1e-4, [](pcgkit::Rng& rng) {
    auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({2, 5}, rng);
    auto proj_s = random_projection(2 * 17, rng), proj_t = random_projection(2 * 3, rng);
    return gradcheck([&] {
      auto joined = ag::concat_features<double>({ag::flatten(a), b});
      auto s = ag::add(ag::scale(joined, 0.5), joined);
      auto t = ag::last_timestep(ag::transpose_last2(a));
      return ag::add(proj_s(s), proj_t(t));
    }, {a, b});
  }});

  return cases;
}

/// Worst error over `points` random draws of one case.
inline double run_case(const GradCase& c, std::size_t points, std::uint64_t seed) {
  pcgkit::Rng rng(seed);
  double worst = 0.0;
  for (std::size_t i = 0; i < points; ++i) worst = std::max(worst, c.run(rng));
  return worst;
}

}  // namespace testing_support
