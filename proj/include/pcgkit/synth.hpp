#pragma once

// Synthetic phonocardiograms with exactly known beat timing, written in the
// same on-disk formats as real recordings.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <numbers>
#include <string>
#include <vector>

#include "pcgkit/error.hpp"
#include "pcgkit/random.hpp"
#include "pcgkit/signal_io.hpp"
#include "pcgkit/windowing.hpp"

namespace pcgkit {

struct SynthConfig {
  double hr = 60.0;                 // bpm
  double duration = 10.0;           // seconds
  int sample_rate = 22050;
  double s1_freq = 50.0;
  double s2_freq = 80.0;
  double burst_width = 0.025;       // Gaussian sigma, seconds
  double s1_amplitude = 0.5;
  double s2_amplitude = 0.35;
  double systole_fraction = 0.3;
  bool murmur = false;
  double murmur_low = 150.0;
  double murmur_high = 600.0;
  double murmur_amplitude = 0.15;
  double snr_db = std::numeric_limits<double>::infinity();
  double rr_jitter = 0.0;           // per-beat relative RR perturbation, uniform in [-j, j]
  std::uint64_t seed = 0;
  std::string subject_id = "synth";
  std::string recording_id = "synth_AV";

  double period() const { return 60.0 / hr; }

  void validate() const {
    if (!(hr >= kMinBpm && hr <= kMaxBpm)) throw ValidationError("synth: hr must lie in [40, 180] bpm");
    if (!(duration > 0.0)) throw ValidationError("synth: duration must be positive");
    if (sample_rate <= 0) throw ValidationError("synth: sample rate must be positive");
    if (!(systole_fraction > 0.0 && systole_fraction < 1.0)) throw ValidationError("synth: systole fraction in (0,1)");
    if (!(burst_width > 0.0) || burst_width * 8.0 > period()) throw ValidationError("synth: burst width too large for hr");
    if (!(murmur_low > 0.0 && murmur_low < murmur_high && murmur_high < sample_rate / 2.0)) {
      throw ValidationError("synth: murmur band must sit below Nyquist");
    }
    if (!(rr_jitter >= 0.0 && rr_jitter < 0.5)) throw ValidationError("synth: rr_jitter must be in [0, 0.5)");
    if (std::isnan(snr_db)) throw ValidationError("synth: snr is NaN");
  }
};

struct SynthRecording {
  AudioRecording audio;
  SegmentationAnnotation annotation;
  RecordingMeta meta;
  std::vector<double> s1_onsets;
};

/// S1 intervals start at k * 60/hr (exactly, without jitter); each heart sound
/// occupies min(4 sigma, half its phase) and the four states tile the recording.
inline SynthRecording generate_pcg(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const double fs = cfg.sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(cfg.duration * fs));
  const double duration = static_cast<double>(n) / fs;
  std::vector<double> x(n, 0.0);
  SynthRecording out;

  auto add_burst = [&](double center, double freq, double amp) {
    const double sigma = cfg.burst_width;
    const auto lo = static_cast<long>(std::floor((center - 5 * sigma) * fs));
    const auto hi = static_cast<long>(std::ceil((center + 5 * sigma) * fs));
    for (long i = std::max(0L, lo); i <= std::min<long>(static_cast<long>(n) - 1, hi); ++i) {
      const double t = static_cast<double>(i) / fs - center;
      x[static_cast<std::size_t>(i)] +=
          amp * std::exp(-0.5 * t * t / (sigma * sigma)) * std::cos(2.0 * std::numbers::pi * freq * t);
    }
  };

  struct Tone {
    double freq, phase;
  };
  std::vector<Tone> tones;
  if (cfg.murmur) {
    for (int k = 0; k < 40; ++k) {
      tones.push_back({rng.uniform(cfg.murmur_low, cfg.murmur_high), rng.uniform(0.0, 2.0 * std::numbers::pi)});
    }
  }
  auto add_murmur = [&](double start, double end) {
    const double len = end - start;
    if (len <= 0.0) return;
    const double scale = cfg.murmur_amplitude * std::sqrt(2.0 / static_cast<double>(tones.size()));
    const auto lo = static_cast<std::size_t>(std::ceil(start * fs));
    const auto hi = std::min(n, static_cast<std::size_t>(std::ceil(end * fs)));
    for (std::size_t i = lo; i < hi; ++i) {
      const double t = static_cast<double>(i) / fs;
      const double taper = std::sin(std::numbers::pi * (t - start) / len);
      double v = 0.0;
      for (const auto& tone : tones) v += std::sin(2.0 * std::numbers::pi * tone.freq * t + tone.phase);
      x[i] += scale * taper * v;
    }
  };

  auto push = [&](double on, double off, HeartState s) {
    off = std::min(off, duration);
    if (off > on) out.annotation.intervals.push_back({on, off, s});
  };

  const double base = cfg.period();
  double t = 0.0;
  for (int k = 0; t < duration; ++k) {
    const double period = cfg.rr_jitter > 0.0 ? base * (1.0 + rng.uniform(-cfg.rr_jitter, cfg.rr_jitter)) : base;
    const double start = cfg.rr_jitter > 0.0 ? t : static_cast<double>(k) * base;
    const double systole = cfg.systole_fraction * period;
    const double s1_len = std::min(4.0 * cfg.burst_width, 0.5 * systole);
    const double s2_len = std::min(4.0 * cfg.burst_width, 0.5 * (period - systole));
    out.s1_onsets.push_back(start);
    add_burst(start + s1_len / 2.0, cfg.s1_freq, cfg.s1_amplitude);
    add_burst(start + systole + s2_len / 2.0, cfg.s2_freq, cfg.s2_amplitude);
    if (cfg.murmur) add_murmur(start + s1_len, std::min(start + systole, duration));
    push(start, start + s1_len, HeartState::S1);
    push(start + s1_len, start + systole, HeartState::Systole);
    push(start + systole, start + systole + s2_len, HeartState::S2);
    const double next = cfg.rr_jitter > 0.0 ? start + period : static_cast<double>(k + 1) * base;
    push(start + systole + s2_len, next, HeartState::Diastole);
    t = next;
  }

  if (std::isfinite(cfg.snr_db)) {
    double power = 0.0;
    for (double v : x) power += v * v;
    power /= static_cast<double>(std::max<std::size_t>(n, 1));
    const double sigma = std::sqrt(power / std::pow(10.0, cfg.snr_db / 10.0));
    for (double& v : x) v += sigma * rng.normal();
  }

  out.audio.samples = std::move(x);
  out.audio.sample_rate = cfg.sample_rate;
  out.audio.subject_id = cfg.subject_id;
  out.audio.recording_id = cfg.recording_id;
  out.audio.site = site_from_recording_id(cfg.recording_id);
  out.meta = {cfg.recording_id, cfg.subject_id, cfg.murmur ? Murmur::Present : Murmur::Absent};
  return out;
}

struct DatasetConfig {
  std::size_t n_subjects = 20;
  std::size_t recordings_per_subject = 4;
  double hr_min = 50.0;
  double hr_max = 150.0;
  double hr_spread = 4.0;       // per-recording deviation from the subject's rate, bpm
  bool stratified_hr = true;    // one subject per equal-width HR stratum, in shuffled order
  double murmur_fraction = 0.5;
  double snr_db = 30.0;
  double duration = 12.0;
  int sample_rate = 22050;
  std::uint64_t seed = 0;
  SynthConfig base;             // sound shape; hr, murmur, snr, duration, rate, seed, ids are overridden

  void validate() const {
    if (n_subjects < 10) throw ValidationError("synth dataset: need at least 10 subjects");
    if (recordings_per_subject < 1 || recordings_per_subject > 4) {
      throw ValidationError("synth dataset: 1 to 4 recordings per subject");
    }
    if (!(hr_min >= kMinBpm && hr_max <= kMaxBpm && hr_min <= hr_max)) {
      throw ValidationError("synth dataset: hr range must lie in [40, 180]");
    }
    if (!(hr_spread >= 0.0)) throw ValidationError("synth dataset: hr_spread must be non-negative");
    if (!(murmur_fraction >= 0.0 && murmur_fraction <= 1.0)) throw ValidationError("synth dataset: murmur fraction");
  }
};

struct DatasetEntry {
  RecordingMeta meta;
  double hr = 0.0;
};

/// Plans the corpus without writing: exactly round(fraction * n) murmur subjects;
/// with stratified HR, subject s draws uniformly inside stratum perm[s] of n.
inline std::vector<SynthConfig> plan_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(cfg.n_subjects);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  const auto n_present = static_cast<std::size_t>(std::llround(cfg.murmur_fraction * static_cast<double>(cfg.n_subjects)));
  std::vector<bool> present(cfg.n_subjects, false);
  for (std::size_t i = 0; i < n_present; ++i) present[order[i]] = true;

  std::vector<std::size_t> strata(cfg.n_subjects);
  std::iota(strata.begin(), strata.end(), std::size_t{0});
  rng.shuffle(strata);
  const double width = (cfg.hr_max - cfg.hr_min) / static_cast<double>(cfg.n_subjects);

  static constexpr std::array<std::string_view, 4> sites{"AV", "PV", "TV", "MV"};
  std::vector<SynthConfig> plan;
  for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
    const double subject_hr = cfg.stratified_hr
                                  ? cfg.hr_min + (static_cast<double>(strata[s]) + rng.uniform()) * width
                                  : rng.uniform(cfg.hr_min, cfg.hr_max);
    const std::string subject = std::to_string(10000 + s);
    for (std::size_t r = 0; r < cfg.recordings_per_subject; ++r) {
      SynthConfig c = cfg.base;
      c.hr = std::clamp(subject_hr + rng.uniform(-cfg.hr_spread, cfg.hr_spread), cfg.hr_min, cfg.hr_max);
      c.duration = cfg.duration;
      c.sample_rate = cfg.sample_rate;
      c.murmur = present[s];
      c.snr_db = cfg.snr_db;
      c.seed = rng.next();
      c.subject_id = subject;
      c.recording_id = subject + "_" + std::string(sites[r]);
      plan.push_back(std::move(c));
    }
  }
  return plan;
}

/// Writes <recording>.wav, <recording>.tsv and metadata.jsonl into `dir`.
inline std::vector<DatasetEntry> generate_dataset(const DatasetConfig& cfg, const std::filesystem::path& dir) {
  const auto plan = plan_dataset(cfg);
  std::filesystem::create_directories(dir);
  std::ofstream meta(dir / "metadata.jsonl", std::ios::binary);
  if (!meta) throw DataError("cannot write " + (dir / "metadata.jsonl").string());
  std::vector<DatasetEntry> entries;
  for (const auto& c : plan) {
    const auto rec = generate_pcg(c);
    write_wav(dir / (c.recording_id + ".wav"), rec.audio.samples, c.sample_rate);
    std::ofstream tsv(dir / (c.recording_id + ".tsv"), std::ios::binary);
    if (!tsv) throw DataError("cannot write annotation for " + c.recording_id);
    tsv << serialize_segmentation(rec.annotation);
    meta << metadata_line(rec.meta) << '\n';
    entries.push_back({rec.meta, c.hr});
  }
  return entries;
}

}  // namespace pcgkit
