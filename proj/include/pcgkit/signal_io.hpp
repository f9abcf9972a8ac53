#pragma once

// Audio, annotation and metadata ingestion plus subject-level splitting.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pcgkit/error.hpp"
#include "pcgkit/random.hpp"

namespace pcgkit {

enum class Site { AV, PV, TV, MV, Other };
enum class Murmur { Absent, Present, Unknown };
enum class HeartState { Unannotated, S1, Systole, S2, Diastole };
enum class Split { Train, Validation, Test };

inline std::string_view to_string(Murmur m) {
  switch (m) {
    case Murmur::Absent: return "Absent";
    case Murmur::Present: return "Present";
    case Murmur::Unknown: return "Unknown";
  }
  return "Unknown";
}

inline Murmur murmur_from_string(std::string_view s) {
  if (s == "Absent") return Murmur::Absent;
  if (s == "Present") return Murmur::Present;
  if (s == "Unknown") return Murmur::Unknown;
  throw ValidationError("murmur label must be Absent, Present or Unknown, got '" + std::string(s) + "'");
}

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

inline Split split_from_string(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val" || s == "validation") return Split::Validation;
  if (s == "test") return Split::Test;
  throw ValidationError("unknown split name '" + std::string(s) + "'");
}

inline std::string_view to_string(Site s) {
  switch (s) {
    case Site::AV: return "AV";
    case Site::PV: return "PV";
    case Site::TV: return "TV";
    case Site::MV: return "MV";
    case Site::Other: return "other";
  }
  return "other";
}

/// Site from a recording id of the form "<subject>_<site>[_n]".
inline Site site_from_recording_id(std::string_view id) {
  for (Site s : {Site::AV, Site::PV, Site::TV, Site::MV}) {
    const std::string tag = "_" + std::string(to_string(s));
    const auto pos = id.find(tag);
    if (pos != std::string_view::npos) {
      const auto end = pos + tag.size();
      if (end == id.size() || id[end] == '_') return s;
    }
  }
  return Site::Other;
}

struct AudioRecording {
  std::vector<double> samples;
  int sample_rate = 0;
  std::string subject_id;
  std::string recording_id;
  Site site = Site::Other;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

struct AnnotatedInterval {
  double onset = 0.0;
  double offset = 0.0;
  HeartState state = HeartState::Unannotated;

  bool operator==(const AnnotatedInterval&) const = default;
};

struct SegmentationAnnotation {
  std::vector<AnnotatedInterval> intervals;

  bool operator==(const SegmentationAnnotation&) const = default;
};

struct RecordingMeta {
  std::string recording_id;
  std::string subject_id;
  Murmur murmur = Murmur::Unknown;
};

struct SplitAssignment {
  std::map<std::string, Split> assignment;
  std::uint64_t seed = 0;

  Split at(const std::string& subject) const {
    auto it = assignment.find(subject);
    if (it == assignment.end()) throw ValidationError("subject '" + subject + "' has no split");
    return it->second;
  }
};

// ---------------------------------------------------------------------------
// WAV

namespace detail {

inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

}  // namespace detail

/// Decodes a RIFF/WAVE image held in memory. Integer PCM is divided by 2^(bits-1).
inline AudioRecording decode_wav(std::span<const unsigned char> bytes) {
  using detail::read_u16;
  using detail::read_u32;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw FormatError("not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  std::optional<std::uint16_t> format;
  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::span<const unsigned char> data;
  bool have_data = false;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    const std::uint32_t size = read_u32(hdr + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (avail < 16) throw FormatError("fmt chunk too short");
      const unsigned char* f = bytes.data() + body;
      format = read_u16(f);
      channels = read_u16(f + 2);
      rate = read_u32(f + 4);
      bits = read_u16(f + 14);
      if (*format == 0xFFFE) {
        if (avail < 26) throw FormatError("truncated WAVE_FORMAT_EXTENSIBLE header");
        format = read_u16(f + 24);
      }
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = bytes.subspan(body, avail);
      have_data = true;
    }
    pos = body + size + (size & 1u);
  }
  if (!format) throw FormatError("missing fmt chunk");
  if (!have_data) throw FormatError("missing data chunk");
  if (channels != 1) {
    throw UnsupportedChannelsError("expected mono audio, file has " + std::to_string(channels) +
                                   " channels");
  }
  if (rate == 0) throw FormatError("sample rate is zero");

  AudioRecording rec;
  rec.sample_rate = static_cast<int>(rate);
  if (*format == 1) {
    if (bits != 16 && bits != 24 && bits != 32) {
      throw FormatError("unsupported PCM bit depth " + std::to_string(bits));
    }
    const std::size_t width = bits / 8;
    const std::size_t n = data.size() / width;
    const double scale = std::ldexp(1.0, -(bits - 1));
    rec.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const unsigned char* p = data.data() + i * width;
      std::int32_t v = 0;
      if (bits == 16) {
        v = static_cast<std::int16_t>(read_u16(p));
      } else if (bits == 24) {
        v = static_cast<std::int32_t>((p[0] << 8) | (p[1] << 16) | (static_cast<std::uint32_t>(p[2]) << 24)) >> 8;
      } else {
        v = static_cast<std::int32_t>(read_u32(p));
      }
      rec.samples[i] = v * scale;
    }
  } else if (*format == 3) {
    if (bits != 32) throw FormatError("unsupported float bit depth " + std::to_string(bits));
    const std::size_t n = data.size() / 4;
    rec.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t raw = read_u32(data.data() + 4 * i);
      float f;
      std::memcpy(&f, &raw, sizeof f);
      rec.samples[i] = std::clamp(static_cast<double>(f), -1.0, 1.0);
    }
  } else {
    throw FormatError("unsupported WAV format tag " + std::to_string(*format));
  }
  if (rec.samples.empty()) throw FormatError("WAV file has no samples");
  return rec;
}

inline AudioRecording read_wav(const std::filesystem::path& path) {
  const std::string raw = detail::slurp(path);
  try {
    auto rec = decode_wav({reinterpret_cast<const unsigned char*>(raw.data()), raw.size()});
    rec.recording_id = path.stem().string();
    rec.site = site_from_recording_id(rec.recording_id);
    return rec;
  } catch (const FormatError& e) {
    if (dynamic_cast<const UnsupportedChannelsError*>(&e)) {
      throw UnsupportedChannelsError(path.string() + ": " + e.what());
    }
    throw FormatError(path.string() + ": " + e.what());
  }
}

enum class WavEncoding { Pcm16, Float32 };

/// Mono WAV image; PCM16 rounds and clamps to [-32768, 32767].
inline std::string encode_wav(std::span<const double> samples, int sample_rate,
                              WavEncoding enc = WavEncoding::Pcm16) {
  using detail::put_u16;
  using detail::put_u32;
  const std::uint16_t bits = enc == WavEncoding::Pcm16 ? 16 : 32;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * (bits / 8));
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, enc == WavEncoding::Pcm16 ? 1 : 3);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate) * (bits / 8));
  put_u16(out, bits / 8);
  put_u16(out, bits);
  out += "data";
  put_u32(out, data_bytes);
  for (double s : samples) {
    if (enc == WavEncoding::Pcm16) {
      const double v = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
      put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
    } else {
      const float f = static_cast<float>(s);
      std::uint32_t raw;
      std::memcpy(&raw, &f, sizeof raw);
      put_u32(out, raw);
    }
  }
  return out;
}

inline void write_wav(const std::filesystem::path& path, std::span<const double> samples,
                      int sample_rate, WavEncoding enc = WavEncoding::Pcm16) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const std::string img = encode_wav(samples, sample_rate, enc);
  out.write(img.data(), static_cast<std::streamsize>(img.size()));
}

// ---------------------------------------------------------------------------
// Resampling

/// Polyphase windowed-sinc resampler for a fixed rational ratio.
///
/// The prototype lowpass sits at 0.95 of the lower Nyquist frequency with a
/// Kaiser window (beta 9); each output sample takes `zero_crossings` lobes on
/// either side measured at the lower rate, i.e. at least 64 taps per phase.
class Resampler {
 public:
  Resampler(int source_rate, int target_rate, int zero_crossings = 32)
      : source_(source_rate), target_(target_rate) {
    if (source_rate <= 0 || target_rate <= 0) throw ConfigError("sample rates must be positive");
    const long g = std::gcd(source_rate, target_rate);
    up_ = target_rate / g;
    down_ = source_rate / g;
    const double ratio = std::min(1.0, static_cast<double>(up_) / down_);
    cutoff_ = 0.95 * ratio;
    half_ = static_cast<int>(std::ceil(zero_crossings / ratio));
    if (up_ <= 4096) {
      table_.resize(static_cast<std::size_t>(up_) * 2 * half_);
      for (long p = 0; p < up_; ++p) {
        const double frac = static_cast<double>(p) / up_;
        for (int j = -half_ + 1; j <= half_; ++j) {
          table_[p * 2 * half_ + (j + half_ - 1)] = kernel(j - frac);
        }
      }
    }
  }

  std::size_t output_length(std::size_t n) const {
    return static_cast<std::size_t>(
        std::llround(static_cast<double>(n) * target_ / static_cast<double>(source_)));
  }

  std::vector<double> process(std::span<const double> in) const {
    if (up_ == down_) return {in.begin(), in.end()};
    const std::size_t n_out = output_length(in.size());
    std::vector<double> out(n_out);
    const long n_in = static_cast<long>(in.size());
    for (std::size_t m = 0; m < n_out; ++m) {
      const long long num = static_cast<long long>(m) * down_;
      const long base = static_cast<long>(num / up_);
      const long phase = static_cast<long>(num % up_);
      double acc = 0.0;
      const long lo = std::max<long>(base - half_ + 1, 0);
      const long hi = std::min<long>(base + half_, n_in - 1);
      if (!table_.empty()) {
        const double* taps = table_.data() + phase * 2 * half_;
        for (long i = lo; i <= hi; ++i) acc += in[i] * taps[i - base + half_ - 1];
      } else {
        const double frac = static_cast<double>(phase) / up_;
        for (long i = lo; i <= hi; ++i) acc += in[i] * kernel(static_cast<double>(i - base) - frac);
      }
      out[m] = acc;
    }
    return out;
  }

 private:
  static double bessel_i0(double x) {
    double sum = 1.0, term = 1.0;
    for (int k = 1; k < 64; ++k) {
      term *= (x / (2.0 * k)) * (x / (2.0 * k));
      sum += term;
      if (term < 1e-17 * sum) break;
    }
    return sum;
  }

  // Impulse response evaluated at offset t (input-sample units).
  double kernel(double t) const {
    const double r = t / half_;
    if (std::abs(r) >= 1.0) return 0.0;
    constexpr double beta = 9.0;
    const double w = bessel_i0(beta * std::sqrt(1.0 - r * r)) / bessel_i0(beta);
    const double x = cutoff_ * t;
    const double sinc = x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
    return cutoff_ * sinc * w;
  }

  int source_;
  int target_;
  long up_ = 1;
  long down_ = 1;
  double cutoff_ = 1.0;
  int half_ = 0;
  std::vector<double> table_;
};

inline AudioRecording resample(const AudioRecording& rec, int target_rate) {
  if (target_rate <= 0) throw ConfigError("target sample rate must be positive");
  AudioRecording out = rec;
  if (target_rate == rec.sample_rate) return out;
  out.samples = Resampler(rec.sample_rate, target_rate).process(rec.samples);
  out.sample_rate = target_rate;
  return out;
}

// ---------------------------------------------------------------------------
// Segmentation annotations

/// Numeric state code <-> HeartState mapping used by annotation files.
struct StateCodeTable {
  std::map<int, HeartState> states;

  /// 0 unannotated, 1 S1, 2 systole, 3 S2, 4 diastole.
  static StateCodeTable dataset_default() {
    return {{{0, HeartState::Unannotated},
             {1, HeartState::S1},
             {2, HeartState::Systole},
             {3, HeartState::S2},
             {4, HeartState::Diastole}}};
  }

  HeartState state(int code) const {
    auto it = states.find(code);
    if (it == states.end()) throw ValidationError("unknown state code " + std::to_string(code));
    return it->second;
  }

  int code(HeartState s) const {
    for (const auto& [c, st] : states) {
      if (st == s) return c;
    }
    throw ValidationError("state has no code in table");
  }
};

/// Checks ordering, positivity and non-overlap; `duration` also bounds every time when given.
inline void validate(const SegmentationAnnotation& ann, std::optional<double> duration = {}) {
  constexpr double tol = 1e-9;
  for (std::size_t i = 0; i < ann.intervals.size(); ++i) {
    const auto& iv = ann.intervals[i];
    if (!(iv.onset < iv.offset)) {
      throw ValidationError("interval " + std::to_string(i) + " has offset <= onset");
    }
    if (iv.onset < -tol) throw ValidationError("interval " + std::to_string(i) + " starts before 0");
    if (duration && iv.offset > *duration + tol) {
      throw ValidationError("interval " + std::to_string(i) + " ends after the recording");
    }
    if (i > 0 && iv.onset < ann.intervals[i - 1].offset - tol) {
      throw ValidationError("intervals " + std::to_string(i - 1) + " and " + std::to_string(i) +
                            " overlap");
    }
  }
}

inline SegmentationAnnotation parse_segmentation_text(
    std::string_view text, const StateCodeTable& table = StateCodeTable::dataset_default()) {
  SegmentationAnnotation ann;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(start, end - start));
    ++line_no;
    start = end + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      if (end == text.size()) break;
      continue;
    }
    std::istringstream fields(line);
    double onset, offset;
    double code_value;
    std::string extra;
    if (!(fields >> onset >> offset >> code_value) || (fields >> extra)) {
      throw ParseError("expected three columns: onset, offset, state code", line_no);
    }
    if (!std::isfinite(onset) || !std::isfinite(offset) || code_value != std::floor(code_value)) {
      throw ParseError("non-numeric or non-integer field", line_no);
    }
    HeartState st;
    try {
      st = table.state(static_cast<int>(code_value));
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), line_no);
    }
    if (!(onset < offset)) throw ValidationError("line " + std::to_string(line_no) + ": offset <= onset");
    ann.intervals.push_back({onset, offset, st});
    if (end == text.size()) break;
  }
  std::stable_sort(ann.intervals.begin(), ann.intervals.end(),
                   [](const auto& a, const auto& b) { return a.onset < b.onset; });
  validate(ann);
  return ann;
}

inline SegmentationAnnotation parse_segmentation(
    const std::filesystem::path& path,
    const StateCodeTable& table = StateCodeTable::dataset_default()) {
  return parse_segmentation_text(detail::slurp(path), table);
}

namespace detail {
inline void append_shortest(std::string& out, double v) {
  std::array<char, 32> buf;
  auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  out.append(buf.data(), p);
}
}  // namespace detail

/// Tab-separated text that parses back to an identical annotation.
inline std::string serialize_segmentation(
    const SegmentationAnnotation& ann,
    const StateCodeTable& table = StateCodeTable::dataset_default()) {
  std::string out;
  for (const auto& iv : ann.intervals) {
    detail::append_shortest(out, iv.onset);
    out.push_back('\t');
    detail::append_shortest(out, iv.offset);
    out.push_back('\t');
    out += std::to_string(table.code(iv.state));
    out.push_back('\n');
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metadata (JSON lines)

inline std::vector<RecordingMeta> parse_metadata_text(std::string_view text) {
  std::vector<RecordingMeta> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      RecordingMeta m;
      m.recording_id = j.at("recording_id").get<std::string>();
      m.subject_id = j.at("subject_id").get<std::string>();
      m.murmur = murmur_from_string(j.at("murmur").get<std::string>());
      out.push_back(std::move(m));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), line_no);
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return out;
}

inline std::vector<RecordingMeta> read_metadata(const std::filesystem::path& path) {
  return parse_metadata_text(detail::slurp(path));
}

inline std::string metadata_line(const RecordingMeta& m) {
  nlohmann::ordered_json j;
  j["recording_id"] = m.recording_id;
  j["subject_id"] = m.subject_id;
  j["murmur"] = to_string(m.murmur);
  return j.dump();
}

// ---------------------------------------------------------------------------
// Subject-disjoint splitting

struct SubjectCount {
  std::string subject_id;
  std::size_t snippets = 0;
};

/// Shuffles subjects with `seed` and assigns round(10%) to validation,
/// round(10%) to test and the remainder to training.
inline SplitAssignment subject_split(std::vector<SubjectCount> subjects, std::uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(subjects.size());
  for (auto& s : subjects) ids.push_back(std::move(s.subject_id));
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.size() < 10) {
    throw InsufficientDataError("subject split needs at least 10 subjects, got " +
                                std::to_string(ids.size()));
  }
  Rng rng(seed);
  rng.shuffle(ids);
  const std::size_t n = ids.size();
  const auto n_val = static_cast<std::size_t>(std::llround(0.1 * n));
  const auto n_test = static_cast<std::size_t>(std::llround(0.1 * n));
  SplitAssignment out;
  out.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    Split s = Split::Train;
    if (i < n_val) {
      s = Split::Validation;
    } else if (i < n_val + n_test) {
      s = Split::Test;
    }
    out.assignment.emplace(ids[i], s);
  }
  return out;
}

inline nlohmann::ordered_json to_json(const SplitAssignment& s) {
  nlohmann::ordered_json j;
  j["seed"] = s.seed;
  nlohmann::ordered_json subjects = nlohmann::ordered_json::object();
  for (const auto& [id, split] : s.assignment) subjects[id] = to_string(split);
  j["subjects"] = std::move(subjects);
  return j;
}

inline SplitAssignment split_from_json(const nlohmann::json& j) {
  SplitAssignment s;
  try {
    s.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& [id, name] : j.at("subjects").items()) {
      s.assignment.emplace(id, split_from_string(name.get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("split file: ") + e.what());
  }
  return s;
}

}  // namespace pcgkit
