#pragma once

// Heart rate from the power envelope: zero-phase low-pass, prominence-gated
// peak picking, every-other-peak spacing.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <span>
#include <string_view>
#include <vector>

#include "pcgkit/error.hpp"
#include "pcgkit/features.hpp"
#include "pcgkit/windowing.hpp"

namespace pcgkit {

struct BaselineConfig {
  double cutoff = 6.0;          // Hz
  double frame_rate = 100.0;    // envelope frames per second
  std::size_t min_peak_distance = 8;
  double prominence = 0.1;      // fraction of the envelope's dynamic range
  double max_cv = 0.15;         // beat-period coefficient of variation above this is low confidence

  void validate() const {
    if (!(frame_rate > 0.0)) throw ConfigError("baseline: frame rate must be positive");
    if (!(cutoff > 0.0) || !(cutoff < frame_rate / 2.0)) throw ConfigError("baseline: need 0 < cutoff < frame_rate/2");
    if (min_peak_distance < 1) throw ConfigError("baseline: min_peak_distance must be >= 1");
    if (!(prominence >= 0.0) || !(prominence < 1.0)) throw ConfigError("baseline: prominence fraction must be in [0,1)");
  }
};

/// Normalized biquad: b0..b2, a1..a2 with a0 = 1.
struct Biquad {
  std::array<double, 3> b{};
  std::array<double, 2> a{};
};

/// Second-order Butterworth low-pass via the bilinear transform with prewarping.
inline Biquad butterworth_biquad(double cutoff, double fs) {
  const double k = std::tan(std::numbers::pi * cutoff / fs);
  const double k2 = k * k;
  const double norm = 1.0 / (1.0 + std::numbers::sqrt2 * k + k2);
  Biquad q;
  q.b = {k2 * norm, 2.0 * k2 * norm, k2 * norm};
  q.a = {2.0 * (k2 - 1.0) * norm, (1.0 - std::numbers::sqrt2 * k + k2) * norm};
  return q;
}

/// |H(e^{jw})| of a biquad at `freq`.
inline double biquad_magnitude(const Biquad& q, double freq, double fs) {
  const double w = 2.0 * std::numbers::pi * freq / fs;
  auto eval = [w](double c0, double c1, double c2) {
    const double re = c0 + c1 * std::cos(w) + c2 * std::cos(2 * w);
    const double im = -c1 * std::sin(w) - c2 * std::sin(2 * w);
    return std::hypot(re, im);
  };
  return eval(q.b[0], q.b[1], q.b[2]) / eval(1.0, q.a[0], q.a[1]);
}

namespace detail {

/// Transposed direct form II, state started at the step-response steady state for x0.
inline void biquad_run(const Biquad& q, std::vector<double>& x) {
  if (x.empty()) return;
  const double x0 = x.front();
  double z2 = (q.b[2] - q.a[1] * 1.0) * x0;
  double z1 = (q.b[1] - q.a[0] * 1.0) * x0 + z2;
  for (double& v : x) {
    const double in = v;
    const double y = q.b[0] * in + z1;
    z1 = q.b[1] * in - q.a[0] * y + z2;
    z2 = q.b[2] * in - q.a[1] * y;
    v = y;
  }
}

}  // namespace detail

/// Forward-backward application with odd-reflection padding; DC passes unchanged.
inline std::vector<double> butterworth_lowpass(std::span<const double> signal, const BaselineConfig& cfg = {}) {
  cfg.validate();
  constexpr std::size_t order = 2;
  const std::size_t n = signal.size();
  if (n <= 3 * order) throw InsufficientDataError("butterworth_lowpass: signal too short");
  const std::size_t pad = std::min<std::size_t>(3 * (order + 1), n - 1);
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * signal[0] - signal[i]);
  ext.insert(ext.end(), signal.begin(), signal.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * signal[n - 1] - signal[n - 1 - i]);
  const Biquad q = butterworth_biquad(cfg.cutoff, cfg.frame_rate);
  detail::biquad_run(q, ext);
  std::reverse(ext.begin(), ext.end());
  detail::biquad_run(q, ext);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad), ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

/// Topographic prominence of the local maximum at `i`.
inline double peak_prominence(std::span<const double> x, std::size_t i) {
  double left_min = x[i];
  for (std::size_t j = i; j-- > 0;) {
    if (x[j] > x[i]) break;
    left_min = std::min(left_min, x[j]);
  }
  double right_min = x[i];
  for (std::size_t j = i + 1; j < x.size(); ++j) {
    if (x[j] > x[i]) break;
    right_min = std::min(right_min, x[j]);
  }
  return x[i] - std::max(left_min, right_min);
}

/// Interior local maxima (a plateau reports its first index) whose prominence
/// reaches the threshold, thinned greedily by height. Result is sorted.
inline std::vector<std::size_t> detect_peaks(std::span<const double> x, const BaselineConfig& cfg = {}) {
  cfg.validate();
  std::vector<std::size_t> cand;
  if (x.size() < 3) return cand;
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  const double range = *mx - *mn;
  if (!(range > 0.0)) return cand;
  const double threshold = cfg.prominence * range;
  for (std::size_t i = 1; i + 1 < x.size(); ++i) {
    if (!(x[i] > x[i - 1])) continue;
    std::size_t j = i;
    while (j + 1 < x.size() && x[j + 1] == x[i]) ++j;
    if (j + 1 < x.size() && x[j + 1] < x[i] && peak_prominence(x, i) >= threshold) cand.push_back(i);
    i = j;
  }
  std::vector<std::size_t> by_height = cand;
  std::stable_sort(by_height.begin(), by_height.end(), [&](std::size_t a, std::size_t b) { return x[a] > x[b]; });
  std::vector<std::size_t> kept;
  for (auto p : by_height) {
    const bool clear = std::none_of(kept.begin(), kept.end(), [&](std::size_t k) {
      return (p > k ? p - k : k - p) < cfg.min_peak_distance;
    });
    if (clear) kept.push_back(p);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

struct PeakRate {
  double bpm = 0.0;
  double period = 0.0;  // seconds
  double cv = 0.0;      // coefficient of variation of the every-other spacings
};

/// Peaks alternate S1/S2: the beat period is the mean every-other spacing of
/// whichever phase has the lower spacing variance (phase 0 on ties).
inline PeakRate hr_from_peaks(std::span<const std::size_t> peaks, const BaselineConfig& cfg = {}) {
  cfg.validate();
  if (peaks.size() < 3) throw InsufficientDataError("hr_from_peaks: need at least 3 peaks");
  struct Stats {
    double mean = 0.0, var = 0.0;
    bool valid = false;
  };
  auto phase = [&](std::size_t start) {
    std::vector<double> d;
    for (std::size_t i = start; i + 2 < peaks.size(); i += 2) {
      d.push_back(static_cast<double>(peaks[i + 2]) - static_cast<double>(peaks[i]));
    }
    Stats s;
    if (d.empty()) return s;
    s.valid = true;
    s.mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    for (double v : d) s.var += (v - s.mean) * (v - s.mean);
    s.var /= static_cast<double>(d.size());
    return s;
  };
  const Stats p0 = phase(0), p1 = phase(1);
  const Stats& best = (p1.valid && p1.var < p0.var) ? p1 : p0;
  PeakRate r;
  r.period = best.mean / cfg.frame_rate;
  r.bpm = 60.0 / r.period;
  r.cv = best.mean > 0.0 ? std::sqrt(best.var) / best.mean : 0.0;
  return r;
}

enum class BaselineStatus { Ok, LowConfidence };

inline std::string_view to_string(BaselineStatus s) { return s == BaselineStatus::Ok ? "ok" : "low_confidence"; }

struct BaselineResult {
  double bpm = 0.0;
  BaselineStatus status = BaselineStatus::Ok;
  double cv = 0.0;
  std::vector<std::size_t> peaks;
};

/// Full pipeline on a snippet. Throws InsufficientDataError when fewer than
/// three peaks survive; an irregular or out-of-range rate is flagged.
inline BaselineResult baseline_estimate(std::span<const double> samples, const BaselineConfig& cfg = {},
                                        const FeatureConfig& fcfg = {}) {
  cfg.validate();
  if (std::abs(fcfg.frame_rate() - cfg.frame_rate) > 1e-9) {
    throw ConfigError("baseline: frame rate does not match the feature hop");
  }
  const Matrix env = psd_envelope(samples, fcfg);
  const auto filtered = butterworth_lowpass(env.row(0), cfg);
  BaselineResult out;
  out.peaks = detect_peaks(filtered, cfg);
  const auto rate = hr_from_peaks(out.peaks, cfg);
  out.bpm = rate.bpm;
  out.cv = rate.cv;
  const bool in_range = rate.bpm >= kMinBpm && rate.bpm <= kMaxBpm;
  out.status = (rate.cv > cfg.max_cv || !in_range) ? BaselineStatus::LowConfidence : BaselineStatus::Ok;
  return out;
}

}  // namespace pcgkit
