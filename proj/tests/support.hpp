#pragma once

#include <cmath>
#include <complex>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "pcgkit/autograd/tensor.hpp"

namespace testing_support {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("pcgkit_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::vector<double> sine(double freq, double amp, double fs, std::size_t n, double phase = 0.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / fs + phase);
  }
  return x;
}

/// Amplitude of the `freq` component by least-squares projection onto sin/cos.
inline double tone_amplitude(const std::vector<double>& x, double freq, double fs, std::size_t lo, std::size_t hi) {
  double s = 0, c = 0, ss = 0, cc = 0;
  for (std::size_t i = lo; i < hi; ++i) {
    const double w = 2.0 * std::numbers::pi * freq * static_cast<double>(i) / fs;
    s += x[i] * std::sin(w);
    c += x[i] * std::cos(w);
    ss += std::sin(w) * std::sin(w);
    cc += std::cos(w) * std::cos(w);
  }
  return std::hypot(s / ss, c / cc);
}

/// Naive O(n^2) DFT magnitude of bin k.
inline double dft_magnitude(const std::vector<double>& x, std::size_t k) {
  std::complex<double> acc = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    acc += x[i] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * i % x.size()) / n);
  }
  return std::abs(acc);
}

/// Max relative error of the analytic gradient of f w.r.t. each input, against
/// central differences. `f` must build a fresh graph and return a scalar.
/// Relative error uses max(|a|, |n|, 1e-3) as the denominator so near-zero
/// components are judged absolutely.
inline double gradcheck(const std::function<pcgkit::ag::Tensor<double>()>& f,
                        std::vector<pcgkit::ag::Tensor<double>> inputs, double h = 1e-6) {
  for (auto& t : inputs) t.zero_grad();
  auto out = f();
  out.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());
  double worst = 0.0;
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    auto& v = inputs[p].values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + h;
      const double up = f().item();
      v[i] = keep - h;
      const double down = f().item();
      v[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[p][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace testing_support
