#pragma once

#include <bit>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "pcgkit/error.hpp"

namespace pcgkit {

/// In-place iterative radix-2 FFT with precomputed twiddles. Size must be a power of two.
class Fft {
 public:
  explicit Fft(std::size_t n) : n_(n), twiddle_(n / 2), rev_(n) {
    if (n < 2 || !std::has_single_bit(n)) throw ConfigError("FFT size must be a power of two >= 2");
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      twiddle_[k] = {std::cos(a), std::sin(a)};
    }
    const int bits = std::countr_zero(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (int b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
      rev_[i] = r;
    }
  }

  std::size_t size() const { return n_; }

  void forward(std::span<std::complex<double>> x) const {
    for (std::size_t i = 0; i < n_; ++i) {
      if (i < rev_[i]) std::swap(x[i], x[rev_[i]]);
    }
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t step = n_ / len;
      for (std::size_t i = 0; i < n_; i += len) {
        for (std::size_t k = 0; k < half; ++k) {
          const auto t = twiddle_[k * step] * x[i + k + half];
          x[i + k + half] = x[i + k] - t;
          x[i + k] += t;
        }
      }
    }
  }

 private:
  std::size_t n_;
  std::vector<std::complex<double>> twiddle_;
  std::vector<std::size_t> rev_;
};

}  // namespace pcgkit
