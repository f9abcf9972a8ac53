#pragma once

// Sliding-window snippet extraction with mean heart-rate labels.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pcgkit/error.hpp"
#include "pcgkit/signal_io.hpp"

namespace pcgkit {

inline constexpr int kMinBpm = 40;
inline constexpr int kMaxBpm = 180;
inline constexpr int kHrClasses = kMaxBpm - kMinBpm + 1;

struct WindowConfig {
  double window_length = 5.0;  // seconds
  double stride = 1.0;         // seconds
  int sample_rate = 16000;

  void validate() const {
    if (!(window_length > 0.0) || !(stride > 0.0) || stride > window_length) {
      throw ConfigError("window config needs 0 < stride <= window_length");
    }
    if (sample_rate <= 0) throw ConfigError("window sample rate must be positive");
  }

  std::size_t samples_per_window() const {
    return static_cast<std::size_t>(std::llround(window_length * sample_rate));
  }
};

/// Labels of one window; audio is addressed by (recording_id, window_start).
struct SnippetLabel {
  std::string recording_id;
  std::string subject_id;
  double window_start = 0.0;
  double hr_bpm = 0.0;
  int hr_class = 0;
  Murmur murmur = Murmur::Unknown;
};

struct Snippet : SnippetLabel {
  std::vector<double> samples;
};

/// Maximal runs of annotated (non-Unannotated) intervals, merging gaps up to
/// 1 ms, keeping only runs at least `min_length` seconds long.
inline std::vector<std::pair<double, double>> annotated_spans(const SegmentationAnnotation& ann,
                                                              double min_length = 5.0) {
  constexpr double gap_tolerance = 1e-3;
  std::vector<std::pair<double, double>> runs;
  for (const auto& iv : ann.intervals) {
    if (iv.state == HeartState::Unannotated) continue;
    if (!runs.empty() && iv.onset - runs.back().second <= gap_tolerance) {
      runs.back().second = std::max(runs.back().second, iv.offset);
    } else {
      runs.emplace_back(iv.onset, iv.offset);
    }
  }
  std::vector<std::pair<double, double>> out;
  for (const auto& r : runs) {
    if (r.second - r.first >= min_length - 1e-9) out.push_back(r);
  }
  return out;
}

/// Mean of instantaneous rates 60/RR over adjacent onsets.
inline double compute_mean_hr(std::span<const double> onsets) {
  if (onsets.size() < 2) {
    throw InsufficientDataError("mean heart rate needs at least two S1 onsets");
  }
  double sum = 0.0;
  for (std::size_t n = 1; n < onsets.size(); ++n) {
    const double rr = onsets[n] - onsets[n - 1];
    if (!(rr > 0.0)) throw ValidationError("S1 onsets must be strictly increasing");
    sum += 60.0 / rr;
  }
  return sum / static_cast<double>(onsets.size() - 1);
}

/// clamp(round(hr), 40, 180) - 40, rounding half away from zero.
inline int hr_to_class(double hr_bpm) {
  if (!std::isfinite(hr_bpm) || hr_bpm <= 0.0) {
    throw ValidationError("heart rate must be finite and positive");
  }
  const double r = std::round(hr_bpm);
  return static_cast<int>(std::clamp(r, static_cast<double>(kMinBpm), static_cast<double>(kMaxBpm))) -
         kMinBpm;
}

inline int class_to_bpm(int hr_class) { return hr_class + kMinBpm; }

inline std::vector<double> s1_onsets_in(const SegmentationAnnotation& ann, double start, double end) {
  std::vector<double> out;
  for (const auto& iv : ann.intervals) {
    if (iv.state == HeartState::S1 && iv.onset >= start && iv.onset < end) out.push_back(iv.onset);
  }
  return out;
}

/// Window labels for a recording of `duration` seconds, without touching audio.
inline std::vector<SnippetLabel> plan_windows(double duration, const SegmentationAnnotation& ann,
                                              const RecordingMeta& meta, const WindowConfig& cfg) {
  cfg.validate();
  std::vector<SnippetLabel> out;
  for (const auto& [span_start, span_end] : annotated_spans(ann, cfg.window_length)) {
    const double end_limit = std::min(span_end, duration);
    for (long k = 0;; ++k) {
      const double start = span_start + static_cast<double>(k) * cfg.stride;
      if (start + cfg.window_length > end_limit + 1e-9) break;
      const auto onsets = s1_onsets_in(ann, start, start + cfg.window_length);
      if (onsets.size() < 2) continue;
      SnippetLabel s;
      s.recording_id = meta.recording_id;
      s.subject_id = meta.subject_id;
      s.window_start = start;
      s.hr_bpm = compute_mean_hr(onsets);
      s.hr_class = hr_to_class(s.hr_bpm);
      s.murmur = meta.murmur;
      out.push_back(std::move(s));
    }
  }
  return out;
}

/// Exactly window_length * sample_rate samples starting at `start` seconds.
inline std::vector<double> slice_window(const AudioRecording& rec, double start,
                                        const WindowConfig& cfg) {
  if (rec.sample_rate != cfg.sample_rate) {
    throw ConfigError("recording must be resampled to the window sample rate first");
  }
  const std::size_t n = cfg.samples_per_window();
  const auto first = static_cast<std::size_t>(std::llround(start * cfg.sample_rate));
  if (first + n > rec.samples.size()) {
    throw DataError("window at " + std::to_string(start) + " s runs past the end of " +
                    rec.recording_id);
  }
  return {rec.samples.begin() + static_cast<std::ptrdiff_t>(first),
          rec.samples.begin() + static_cast<std::ptrdiff_t>(first + n)};
}

inline std::vector<Snippet> slide_windows(const AudioRecording& rec, const SegmentationAnnotation& ann,
                                          const RecordingMeta& meta, const WindowConfig& cfg) {
  std::vector<Snippet> out;
  const std::size_t n = cfg.samples_per_window();
  for (auto& label : plan_windows(rec.duration(), ann, meta, cfg)) {
    const auto first = static_cast<std::size_t>(std::llround(label.window_start * cfg.sample_rate));
    if (first + n > rec.samples.size()) continue;
    Snippet s;
    static_cast<SnippetLabel&>(s) = std::move(label);
    s.samples = slice_window(rec, s.window_start, cfg);
    out.push_back(std::move(s));
  }
  return out;
}

/// One JSON-lines record of the snippet index.
inline nlohmann::ordered_json snippet_json(const SnippetLabel& s, Split split) {
  nlohmann::ordered_json j;
  j["recording_id"] = s.recording_id;
  j["subject_id"] = s.subject_id;
  j["window_start"] = s.window_start;
  j["hr_bpm"] = s.hr_bpm;
  j["hr_class"] = s.hr_class;
  j["murmur"] = to_string(s.murmur);
  j["split"] = to_string(split);
  return j;
}

inline std::pair<SnippetLabel, Split> snippet_from_json(const nlohmann::json& j) {
  try {
    SnippetLabel s;
    s.recording_id = j.at("recording_id").get<std::string>();
    s.subject_id = j.at("subject_id").get<std::string>();
    s.window_start = j.at("window_start").get<double>();
    s.hr_bpm = j.at("hr_bpm").get<double>();
    s.hr_class = j.at("hr_class").get<int>();
    s.murmur = murmur_from_string(j.at("murmur").get<std::string>());
    return {std::move(s), split_from_string(j.at("split").get<std::string>())};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("snippet index: ") + e.what());
  }
}

}  // namespace pcgkit
