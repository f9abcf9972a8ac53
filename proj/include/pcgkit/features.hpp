#pragma once

// Acoustic front end: STFT power, log-mel, MFCC, power envelope and RMS rows,
// stacked into one feature matrix.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcgkit/error.hpp"
#include "pcgkit/fft.hpp"

namespace pcgkit {

struct FeatureConfig {
  std::size_t n_fft = 1024;
  std::size_t hop = 160;
  std::size_t n_mels = 40;
  std::size_t n_mfcc = 40;
  double fmin = 0.0;
  double fmax = 2000.0;
  int sample_rate = 16000;
  double log_floor = 1e-10;

  void validate() const {
    if (hop == 0 || hop > n_fft) throw ConfigError("features: need 0 < hop <= n_fft");
    if (sample_rate <= 0) throw ConfigError("features: sample rate must be positive");
    if (!(fmax <= sample_rate / 2.0) || !(fmin >= 0.0) || !(fmin < fmax)) {
      throw ConfigError("features: need 0 <= fmin < fmax <= sample_rate / 2");
    }
    if (n_mels == 0 || n_mfcc == 0 || n_mfcc > n_mels) {
      throw ConfigError("features: need 0 < n_mfcc <= n_mels");
    }
    if (!(log_floor > 0.0)) throw ConfigError("features: log floor must be positive");
  }

  std::size_t frames(std::size_t n_samples) const {
    if (n_samples < n_fft) return 0;
    return 1 + (n_samples - n_fft) / hop;
  }

  double frame_rate() const { return static_cast<double>(sample_rate) / static_cast<double>(hop); }
};

/// Dense row-major real matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

enum class FeatureKind : std::uint8_t { Mel = 0, Mfcc = 1, Psd = 2, Rms = 3 };

inline constexpr std::array<FeatureKind, 4> kAllFeatureKinds{FeatureKind::Mel, FeatureKind::Mfcc,
                                                             FeatureKind::Psd, FeatureKind::Rms};

inline std::string_view to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::Mel: return "Mel";
    case FeatureKind::Mfcc: return "MFCC";
    case FeatureKind::Psd: return "PSD";
    case FeatureKind::Rms: return "RMS";
  }
  return "?";
}

/// Subset of feature kinds; iteration order is always Mel, MFCC, PSD, RMS.
class FeatureSelection {
 public:
  FeatureSelection() = default;
  FeatureSelection(std::initializer_list<FeatureKind> kinds) {
    for (auto k : kinds) add(k);
  }

  static FeatureSelection all() { return {FeatureKind::Mel, FeatureKind::Mfcc, FeatureKind::Psd, FeatureKind::Rms}; }

  /// Parses "Mel+MFCC+PSD+RMS" style names (case-insensitive, '+' or ',' separated).
  static FeatureSelection parse(std::string_view text) {
    FeatureSelection sel;
    std::size_t start = 0;
    while (start <= text.size()) {
      std::size_t end = text.find_first_of("+,", start);
      if (end == std::string_view::npos) end = text.size();
      std::string tok(text.substr(start, end - start));
      std::erase_if(tok, [](char c) { return c == ' '; });
      std::transform(tok.begin(), tok.end(), tok.begin(), [](unsigned char c) { return std::tolower(c); });
      if (tok == "mel") {
        sel.add(FeatureKind::Mel);
      } else if (tok == "mfcc") {
        sel.add(FeatureKind::Mfcc);
      } else if (tok == "psd") {
        sel.add(FeatureKind::Psd);
      } else if (tok == "rms") {
        sel.add(FeatureKind::Rms);
      } else {
        throw ConfigError("unknown feature kind '" + tok + "'");
      }
      start = end + 1;
      if (end == text.size()) break;
    }
    return sel;
  }

  void add(FeatureKind k) { mask_ |= static_cast<std::uint8_t>(1u << static_cast<unsigned>(k)); }
  bool contains(FeatureKind k) const { return (mask_ >> static_cast<unsigned>(k)) & 1u; }
  bool empty() const { return mask_ == 0; }
  std::uint8_t mask() const { return mask_; }

  std::vector<FeatureKind> kinds() const {
    std::vector<FeatureKind> out;
    for (auto k : kAllFeatureKinds) {
      if (contains(k)) out.push_back(k);
    }
    return out;
  }

  std::string name() const {
    std::string out;
    for (auto k : kinds()) {
      if (!out.empty()) out += '+';
      out += to_string(k);
    }
    return out;
  }

  bool operator==(const FeatureSelection&) const = default;

 private:
  std::uint8_t mask_ = 0;
};

inline std::size_t rows_of(FeatureKind k, const FeatureConfig& cfg) {
  switch (k) {
    case FeatureKind::Mel: return cfg.n_mels;
    case FeatureKind::Mfcc: return cfg.n_mfcc;
    case FeatureKind::Psd:
    case FeatureKind::Rms: return 1;
  }
  return 0;
}

inline std::size_t rows_of(const FeatureSelection& sel, const FeatureConfig& cfg) {
  std::size_t n = 0;
  for (auto k : sel.kinds()) n += rows_of(k, cfg);
  return n;
}

struct RowTag {
  FeatureKind kind = FeatureKind::Mel;
  std::uint16_t index = 0;
  bool operator==(const RowTag&) const = default;
};

inline std::vector<RowTag> row_tags(const FeatureSelection& sel, const FeatureConfig& cfg) {
  std::vector<RowTag> tags;
  for (auto k : sel.kinds()) {
    for (std::size_t i = 0; i < rows_of(k, cfg); ++i) tags.push_back({k, static_cast<std::uint16_t>(i)});
  }
  return tags;
}

struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t frames = 0;
  std::vector<float> values;  // row-major rows x frames
  std::vector<RowTag> row_tags;
  double frame_rate = 0.0;

  float& at(std::size_t r, std::size_t t) { return values[r * frames + t]; }
  float at(std::size_t r, std::size_t t) const { return values[r * frames + t]; }
  std::span<const float> row(std::size_t r) const { return {values.data() + r * frames, frames}; }

  /// Rows whose tags belong to `sel`, in stored order.
  FeatureMatrix select(const FeatureSelection& sel) const {
    FeatureMatrix out;
    out.frames = frames;
    out.frame_rate = frame_rate;
    for (std::size_t r = 0; r < rows; ++r) {
      if (!sel.contains(row_tags[r].kind)) continue;
      out.row_tags.push_back(row_tags[r]);
      out.values.insert(out.values.end(), values.begin() + static_cast<std::ptrdiff_t>(r * frames),
                        values.begin() + static_cast<std::ptrdiff_t>((r + 1) * frames));
    }
    out.rows = out.row_tags.size();
    return out;
  }
};

/// Per-row z-score statistics estimated on the training split.
struct NormalizationProfile {
  std::vector<double> mean;
  std::vector<double> stddev;

  bool empty() const { return mean.empty(); }

  void apply(FeatureMatrix& m) const {
    if (mean.size() != m.rows) throw ShapeError("normalization profile row count mismatch");
    for (std::size_t r = 0; r < m.rows; ++r) {
      const double inv = 1.0 / stddev[r];
      for (std::size_t t = 0; t < m.frames; ++t) {
        m.at(r, t) = static_cast<float>((m.at(r, t) - mean[r]) * inv);
      }
    }
  }

  static NormalizationProfile fit(std::span<const FeatureMatrix* const> mats) {
    NormalizationProfile p;
    if (mats.empty()) return p;
    const std::size_t rows = mats.front()->rows;
    p.mean.assign(rows, 0.0);
    p.stddev.assign(rows, 0.0);
    std::vector<double> sq(rows, 0.0);
    double count = 0.0;
    for (const auto* m : mats) {
      if (m->rows != rows) throw ShapeError("cannot fit normalization over mixed row counts");
      for (std::size_t r = 0; r < rows; ++r) {
        for (float v : m->row(r)) {
          p.mean[r] += v;
          sq[r] += static_cast<double>(v) * v;
        }
      }
      count += static_cast<double>(m->frames);
    }
    for (std::size_t r = 0; r < rows; ++r) {
      p.mean[r] /= count;
      const double var = std::max(0.0, sq[r] / count - p.mean[r] * p.mean[r]);
      const double sd = std::sqrt(var);
      p.stddev[r] = sd > 1e-6 ? sd : 1.0;
    }
    return p;
  }
};

inline double hz_to_mel(double hz) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return hz < min_log_hz ? hz / f_sp : min_log_mel + std::log(hz / min_log_hz) / logstep;
}

inline double mel_to_hz(double mel) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return mel < min_log_mel ? mel * f_sp : min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

/// Center frequencies (Hz) of the n_mels triangular filters.
inline std::vector<double> mel_center_frequencies(const FeatureConfig& cfg) {
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
  std::vector<double> out(cfg.n_mels);
  for (std::size_t i = 0; i < cfg.n_mels; ++i) {
    out[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i + 1) / static_cast<double>(cfg.n_mels + 1));
  }
  return out;
}

/// Slaney-style (area-normalized) triangular mel filterbank, n_mels x (n_fft/2 + 1).
inline Matrix mel_filterbank(const FeatureConfig& cfg) {
  const std::size_t bins = cfg.n_fft / 2 + 1;
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  }
  Matrix fb(cfg.n_mels, bins);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    const double norm = 2.0 / (right - left);
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.n_fft);
      const double w = std::min((f - left) / (center - left), (right - f) / (right - center));
      fb(m, k) = std::max(0.0, w) * norm;
    }
  }
  return fb;
}

/// Orthonormal DCT-II basis, n_out x n_in.
inline Matrix dct_matrix(std::size_t n_out, std::size_t n_in) {
  Matrix d(n_out, n_in);
  const double n = static_cast<double>(n_in);
  for (std::size_t k = 0; k < n_out; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (std::size_t i = 0; i < n_in; ++i) {
      d(k, i) = scale * std::cos(std::numbers::pi * (static_cast<double>(i) + 0.5) * static_cast<double>(k) / n);
    }
  }
  return d;
}

/// Precomputes window, filterbank and DCT for one configuration. Immutable after
/// construction, so one instance can serve several threads.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(FeatureConfig cfg)
      : cfg_(cfg), fft_((cfg.validate(), cfg.n_fft)), window_(cfg.n_fft), mel_fb_(mel_filterbank(cfg)),
        dct_(dct_matrix(cfg.n_mfcc, cfg.n_mels)) {
    window_energy_ = 0.0;
    for (std::size_t n = 0; n < cfg_.n_fft; ++n) {
      // Periodic Hann.
      window_[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                        static_cast<double>(cfg_.n_fft));
      window_energy_ += window_[n] * window_[n];
    }
  }

  const FeatureConfig& config() const { return cfg_; }
  std::span<const double> window() const { return window_; }

  /// One-sided power per bin, scaled so each frame sums to sum((x w)^2) / sum(w^2).
  Matrix stft_power(std::span<const double> samples) const {
    const std::size_t frames = checked_frames(samples.size());
    const std::size_t n = cfg_.n_fft;
    const std::size_t bins = n / 2 + 1;
    Matrix out(bins, frames);
    std::vector<std::complex<double>> buf(n);
    const double scale = 1.0 / (static_cast<double>(n) * window_energy_);
    for (std::size_t t = 0; t < frames; ++t) {
      const double* x = samples.data() + t * cfg_.hop;
      for (std::size_t i = 0; i < n; ++i) buf[i] = {x[i] * window_[i], 0.0};
      fft_.forward(buf);
      for (std::size_t k = 0; k < bins; ++k) {
        const double factor = (k == 0 || k == n / 2) ? 1.0 : 2.0;
        out(k, t) = factor * std::norm(buf[k]) * scale;
      }
    }
    return out;
  }

  Matrix mel_spectrogram(std::span<const double> samples) const { return log_mel(stft_power(samples)); }

  Matrix mfcc(std::span<const double> samples) const { return mfcc_from_log_mel(mel_spectrogram(samples)); }

  Matrix psd_envelope(std::span<const double> samples) const { return envelope(stft_power(samples)); }

  Matrix rms(std::span<const double> samples) const {
    const std::size_t frames = checked_frames(samples.size());
    Matrix out(1, frames);
    for (std::size_t t = 0; t < frames; ++t) {
      double acc = 0.0;
      for (std::size_t i = 0; i < cfg_.n_fft; ++i) {
        const double v = samples[t * cfg_.hop + i];
        acc += v * v;
      }
      out(0, t) = std::sqrt(acc / static_cast<double>(cfg_.n_fft));
    }
    return out;
  }

  /// 10 log10(max(mel power, floor)).
  Matrix log_mel(const Matrix& power) const {
    Matrix out(cfg_.n_mels, power.cols);
    for (std::size_t m = 0; m < cfg_.n_mels; ++m) {
      for (std::size_t t = 0; t < power.cols; ++t) {
        double acc = 0.0;
        for (std::size_t k = 0; k < power.rows; ++k) acc += mel_fb_(m, k) * power(k, t);
        out(m, t) = 10.0 * std::log10(std::max(acc, cfg_.log_floor));
      }
    }
    return out;
  }

  Matrix mfcc_from_log_mel(const Matrix& log_mel) const {
    Matrix out(cfg_.n_mfcc, log_mel.cols);
    for (std::size_t k = 0; k < cfg_.n_mfcc; ++k) {
      for (std::size_t t = 0; t < log_mel.cols; ++t) {
        double acc = 0.0;
        for (std::size_t m = 0; m < cfg_.n_mels; ++m) acc += dct_(k, m) * log_mel(m, t);
        out(k, t) = acc;
      }
    }
    return out;
  }

  /// Transpose of the DCT; exact inverse when n_mfcc == n_mels.
  Matrix inverse_mfcc(const Matrix& coeffs) const {
    Matrix out(cfg_.n_mels, coeffs.cols);
    for (std::size_t m = 0; m < cfg_.n_mels; ++m) {
      for (std::size_t t = 0; t < coeffs.cols; ++t) {
        double acc = 0.0;
        for (std::size_t k = 0; k < coeffs.rows; ++k) acc += dct_(k, m) * coeffs(k, t);
        out(m, t) = acc;
      }
    }
    return out;
  }

  /// log10 of total frame power.
  Matrix envelope(const Matrix& power) const {
    Matrix out(1, power.cols);
    for (std::size_t t = 0; t < power.cols; ++t) {
      double acc = 0.0;
      for (std::size_t k = 0; k < power.rows; ++k) acc += power(k, t);
      out(0, t) = std::log10(std::max(acc, cfg_.log_floor));
    }
    return out;
  }

  /// Rows stacked as Mel, MFCC, PSD, RMS (selected kinds only); z-scored when a
  /// profile is supplied.
  FeatureMatrix compute(std::span<const double> samples, const FeatureSelection& selection,
                        const NormalizationProfile* profile = nullptr) const {
    if (selection.empty()) throw ConfigError("feature selection must not be empty");
    const std::size_t frames = checked_frames(samples.size());
    FeatureMatrix fm;
    fm.frames = frames;
    fm.frame_rate = cfg_.frame_rate();
    fm.row_tags = row_tags(selection, cfg_);
    fm.rows = fm.row_tags.size();
    fm.values.reserve(fm.rows * frames);
    auto append = [&](const Matrix& m) {
      for (double v : m.data) fm.values.push_back(static_cast<float>(v));
    };
    std::optional<Matrix> power;
    if (selection.contains(FeatureKind::Mel) || selection.contains(FeatureKind::Mfcc) ||
        selection.contains(FeatureKind::Psd)) {
      power = stft_power(samples);
    }
    std::optional<Matrix> lm;
    if (selection.contains(FeatureKind::Mel) || selection.contains(FeatureKind::Mfcc)) lm = log_mel(*power);
    if (selection.contains(FeatureKind::Mel)) append(*lm);
    if (selection.contains(FeatureKind::Mfcc)) append(mfcc_from_log_mel(*lm));
    if (selection.contains(FeatureKind::Psd)) append(envelope(*power));
    if (selection.contains(FeatureKind::Rms)) append(rms(samples));
    for (float v : fm.values) {
      if (!std::isfinite(v)) throw DataError("non-finite feature value");
    }
    if (profile != nullptr && !profile->empty()) profile->apply(fm);
    return fm;
  }

 private:
  std::size_t checked_frames(std::size_t n) const {
    if (n < cfg_.n_fft) {
      throw DataError("signal of " + std::to_string(n) + " samples is shorter than n_fft");
    }
    return cfg_.frames(n);
  }

  FeatureConfig cfg_;
  Fft fft_;
  std::vector<double> window_;
  double window_energy_ = 0.0;
  Matrix mel_fb_;
  Matrix dct_;
};

inline Matrix stft_power(std::span<const double> samples, const FeatureConfig& cfg) {
  return FeatureExtractor(cfg).stft_power(samples);
}
inline Matrix mel_spectrogram(std::span<const double> samples, const FeatureConfig& cfg) {
  return FeatureExtractor(cfg).mel_spectrogram(samples);
}
inline Matrix mfcc(std::span<const double> samples, const FeatureConfig& cfg) {
  return FeatureExtractor(cfg).mfcc(samples);
}
inline Matrix psd_envelope(std::span<const double> samples, const FeatureConfig& cfg) {
  return FeatureExtractor(cfg).psd_envelope(samples);
}
inline Matrix rms(std::span<const double> samples, const FeatureConfig& cfg) {
  return FeatureExtractor(cfg).rms(samples);
}
inline FeatureMatrix concat_features(std::span<const double> samples, const FeatureConfig& cfg,
                                     const FeatureSelection& selection,
                                     const NormalizationProfile* profile = nullptr) {
  return FeatureExtractor(cfg).compute(samples, selection, profile);
}

// ---------------------------------------------------------------------------
// Feature cache: "PCGF", u16 version, u32 rows, u32 frames, rows x (u8 kind,
// u16 index) tag table, float32 row-major payload; all little-endian.

inline constexpr std::uint16_t kFeatureCacheVersion = 1;

inline std::string encode_feature_cache(const FeatureMatrix& m) {
  std::string out = "PCGF";
  auto put = [&out](std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  put(kFeatureCacheVersion, 2);
  put(m.rows, 4);
  put(m.frames, 4);
  for (const auto& tag : m.row_tags) {
    put(static_cast<std::uint8_t>(tag.kind), 1);
    put(tag.index, 2);
  }
  for (float f : m.values) {
    std::uint32_t raw;
    std::memcpy(&raw, &f, sizeof raw);
    put(raw, 4);
  }
  return out;
}

inline FeatureMatrix decode_feature_cache(std::string_view bytes, double frame_rate = 0.0) {
  std::size_t pos = 0;
  auto get = [&](int n) -> std::uint64_t {
    if (pos + static_cast<std::size_t>(n) > bytes.size()) throw FormatError("truncated feature cache");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += static_cast<std::size_t>(n);
    return v;
  };
  if (bytes.substr(0, 4) != "PCGF") throw FormatError("feature cache: bad magic");
  pos = 4;
  if (get(2) != kFeatureCacheVersion) throw FormatError("feature cache: unsupported version");
  FeatureMatrix m;
  m.rows = get(4);
  m.frames = get(4);
  m.frame_rate = frame_rate;
  for (std::size_t r = 0; r < m.rows; ++r) {
    const auto kind = get(1);
    if (kind > 3) throw FormatError("feature cache: bad row tag");
    m.row_tags.push_back({static_cast<FeatureKind>(kind), static_cast<std::uint16_t>(get(2))});
  }
  if (bytes.size() - pos != m.rows * m.frames * 4) throw FormatError("feature cache: payload size mismatch");
  m.values.resize(m.rows * m.frames);
  for (auto& f : m.values) {
    const auto raw = static_cast<std::uint32_t>(get(4));
    std::memcpy(&f, &raw, sizeof f);
  }
  return m;
}

inline void write_feature_cache(const std::filesystem::path& path, const FeatureMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const auto img = encode_feature_cache(m);
  out.write(img.data(), static_cast<std::streamsize>(img.size()));
}

inline FeatureMatrix read_feature_cache(const std::filesystem::path& path, double frame_rate = 0.0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_feature_cache(bytes, frame_rate);
}

}  // namespace pcgkit
