#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "pcgkit/dsp_baseline.hpp"
#include "pcgkit/synth.hpp"
#include "support.hpp"

using namespace pcgkit;

namespace {

// Forward-backward gain of the prewarped analog prototype: 1 / (1 + W^4).
double squared_butterworth_gain(double f, double fc, double fs) {
  const double w = std::tan(std::numbers::pi * f / fs) / std::tan(std::numbers::pi * fc / fs);
  return 1.0 / (1.0 + std::pow(w, 4));
}

std::vector<double> snippet(double hr, double snr_db, std::uint64_t seed) {
  SynthConfig c;
  c.hr = hr;
  c.duration = 5.0;
  c.sample_rate = 16000;
  c.snr_db = snr_db;
  c.seed = seed;
  return generate_pcg(c).audio.samples;
}

}  // namespace

TEST(Lowpass, DcGainIsOne) {
  const std::vector<double> x(200, 3.25);
  for (double v : butterworth_lowpass(x)) EXPECT_NEAR(v, 3.25, 1e-9);
}

TEST(Lowpass, OneHertzPassesWithinOnePercent) {
  const auto x = testing_support::sine(1.0, 1.0, 100.0, 1000);
  const auto y = butterworth_lowpass(x);
  const double amp = testing_support::tone_amplitude(y, 1.0, 100.0, 200, 800);
  EXPECT_NEAR(amp, squared_butterworth_gain(1.0, 6.0, 100.0), 0.01);
  EXPECT_NEAR(amp, 1.0, 0.01);
}

TEST(Lowpass, TwentyHertzAttenuatedBy97Percent) {
  const auto x = testing_support::sine(20.0, 1.0, 100.0, 1000);
  const auto y = butterworth_lowpass(x);
  const double amp = testing_support::tone_amplitude(y, 20.0, 100.0, 200, 800);
  EXPECT_LE(squared_butterworth_gain(20.0, 6.0, 100.0), 0.03);
  EXPECT_LE(amp, 0.03);
}

TEST(Lowpass, BiquadMatchesAnalogPrototype) {
  const auto q = butterworth_biquad(6.0, 100.0);
  for (double f : {0.5, 2.0, 6.0, 10.0, 30.0, 45.0}) {
    EXPECT_NEAR(std::pow(biquad_magnitude(q, f, 100.0), 2), squared_butterworth_gain(f, 6.0, 100.0), 1e-12) << f;
  }
  EXPECT_NEAR(biquad_magnitude(q, 6.0, 100.0), std::sqrt(0.5), 1e-12);
}

TEST(Lowpass, ZeroPhaseKeepsSymmetricPulsePeak) {
  for (std::size_t centre : {40u, 77u, 150u}) {
    std::vector<double> x(200);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = (static_cast<double>(i) - static_cast<double>(centre)) / 6.0;
      x[i] = std::exp(-0.5 * d * d);
    }
    const auto y = butterworth_lowpass(x);
    const auto peak = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
    EXPECT_EQ(peak, centre);
  }
}

TEST(Lowpass, TooShortIsInsufficientData) {
  const std::vector<double> x(6, 1.0);
  EXPECT_THROW(butterworth_lowpass(x), InsufficientDataError);
}

TEST(Lowpass, ConfigBounds) {
  BaselineConfig c;
  c.cutoff = 50.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.min_peak_distance = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Peaks, EqualPeaksFiveApartKeepFirst) {
  std::vector<double> x(40, 0.0);
  x[10] = 1.0;
  x[15] = 1.0;
  EXPECT_EQ(detect_peaks(x), (std::vector<std::size_t>{10}));
}

TEST(Peaks, HigherPeakWinsWithinDistance) {
  std::vector<double> x(40, 0.0);
  x[10] = 0.8;
  x[15] = 1.0;
  EXPECT_EQ(detect_peaks(x), (std::vector<std::size_t>{15}));
}

TEST(Peaks, MonotoneHasNone) {
  std::vector<double> x(50);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  EXPECT_TRUE(detect_peaks(x).empty());
  EXPECT_TRUE(detect_peaks(std::vector<double>(50, 1.0)).empty());
}

TEST(Peaks, ImpulseTrainFullyDetected) {
  std::vector<double> x(500, 0.0);
  std::vector<std::size_t> want;
  for (std::size_t i = 25; i < x.size(); i += 50) {
    x[i] = 1.0;
    want.push_back(i);
  }
  EXPECT_EQ(detect_peaks(x), want);
}

TEST(Peaks, ProminenceGateDropsRipple) {
  std::vector<double> x(100, 0.0);
  x[20] = 1.0;
  x[50] = 0.05;
  x[80] = 1.0;
  EXPECT_EQ(detect_peaks(x), (std::vector<std::size_t>{20, 80}));
}

TEST(Peaks, InvariantToPositiveAffineMaps) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> x(300);
    for (auto& v : x) v = rng.uniform();
    const auto y = butterworth_lowpass(x);
    std::vector<double> z(y.size());
    const double a = rng.uniform(0.25, 8.0);
    for (std::size_t i = 0; i < y.size(); ++i) z[i] = a * y[i];
    EXPECT_EQ(detect_peaks(y), detect_peaks(z));
  }
}

TEST(HrFromPeaks, AlternatingTrainAtSixty) {
  const std::vector<std::size_t> p{0, 30, 100, 130, 200, 230};
  const auto r = hr_from_peaks(p);
  EXPECT_DOUBLE_EQ(r.period, 1.0);
  EXPECT_DOUBLE_EQ(r.bpm, 60.0);
  EXPECT_DOUBLE_EQ(r.cv, 0.0);
}

TEST(HrFromPeaks, UniformTrainAtOneTwenty) {
  std::vector<std::size_t> p;
  for (std::size_t i = 0; i <= 400; i += 25) p.push_back(i);
  EXPECT_DOUBLE_EQ(hr_from_peaks(p).bpm, 120.0);
}

TEST(HrFromPeaks, PicksLowerVariancePhase) {
  // Phase 0 spacings 100,100 exactly; phase 1 spacings 90,110.
  const std::vector<std::size_t> p{0, 40, 100, 130, 200, 240};
  EXPECT_DOUBLE_EQ(hr_from_peaks(p).bpm, 60.0);
}

TEST(HrFromPeaks, TwoPeaksIsInsufficient) {
  const std::vector<std::size_t> p{10, 50};
  EXPECT_THROW(hr_from_peaks(p), InsufficientDataError);
}

TEST(Baseline, CleanSixtyAndOneTwenty) {
  for (double hr : {60.0, 120.0}) {
    const auto r = baseline_estimate(snippet(hr, INFINITY, 3));
    EXPECT_NEAR(r.bpm, hr, 2.0);
    EXPECT_EQ(r.status, BaselineStatus::Ok);
  }
}

TEST(Baseline, WhiteNoiseIsFlaggedOrRejected) {
  Rng rng(4);
  for (int t = 0; t < 5; ++t) {
    std::vector<double> x(80000);
    for (auto& v : x) v = rng.normal();
    try {
      EXPECT_EQ(baseline_estimate(x).status, BaselineStatus::LowConfidence);
    } catch (const InsufficientDataError&) {
      SUCCEED();
    }
  }
}

TEST(Baseline, ScaleInvariant) {
  const auto x = snippet(85.0, 20.0, 5);
  const auto ref = baseline_estimate(x);
  for (double a : {0.01, 0.3, 7.0}) {
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = a * x[i];
    const auto r = baseline_estimate(y);
    EXPECT_NEAR(r.bpm, ref.bpm, 1e-9 * ref.bpm);
    EXPECT_EQ(r.peaks, ref.peaks);
  }
}

TEST(Baseline, FrameRateMismatchIsConfigError) {
  BaselineConfig c;
  c.frame_rate = 50.0;
  EXPECT_THROW(baseline_estimate(snippet(60.0, INFINITY, 1), c), ConfigError);
}

TEST(Baseline, SyntheticSuite) {
  double clean = 0.0, noisy = 0.0;
  int n = 0;
  for (int hr = 50; hr <= 150; hr += 10, ++n) {
    const double c = std::abs(baseline_estimate(snippet(hr, INFINITY, 100 + hr)).bpm - hr);
    EXPECT_LE(c, 2.0) << hr;
    clean += c;
    noisy += std::abs(baseline_estimate(snippet(hr, 10.0, 200 + hr)).bpm - hr);
  }
  EXPECT_LT(clean / n, 2.0);
  EXPECT_LT(noisy / n, 6.0);
}
