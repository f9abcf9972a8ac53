#pragma once

// Corpus -> snippet index -> feature examples, shared by the CLI and tests.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pcgkit/features.hpp"
#include "pcgkit/signal_io.hpp"
#include "pcgkit/train_eval.hpp"
#include "pcgkit/windowing.hpp"

namespace pcgkit {

struct CorpusRecording {
  AudioRecording audio;
  SegmentationAnnotation annotation;
  RecordingMeta meta;
};

namespace detail {

inline std::vector<std::string> csv_fields(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (char c : line) {
    if (c == '"') quoted = !quoted;
    else if (c == ',' && !quoted) out.emplace_back();
    else if (c != '\r') out.back().push_back(c);
  }
  return out;
}

}  // namespace detail

/// Metadata for the public dataset layout: a patient table (training_data.csv,
/// in `dir` or its parent) with "Patient ID" and "Murmur" columns, and
/// recordings named <patient>_<site>[_k].wav.
inline std::vector<RecordingMeta> patient_table_metadata(const std::filesystem::path& dir) {
  std::filesystem::path csv = dir / "training_data.csv";
  if (!std::filesystem::exists(csv)) csv = dir.parent_path() / "training_data.csv";
  std::ifstream in(csv);
  if (!in) throw DataError("no metadata.jsonl or training_data.csv for " + dir.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(csv.string() + ": empty");
  const auto header = detail::csv_fields(line);
  const auto col = [&](std::string_view name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError(csv.string() + ": missing column '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t id_col = col("Patient ID"), mm_col = col("Murmur");
  std::map<std::string, Murmur> murmur;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::csv_fields(line);
    if (f.size() <= std::max(id_col, mm_col)) throw FormatError(csv.string() + ": short row");
    murmur[f[id_col]] = murmur_from_string(f[mm_col]);
  }
  std::vector<std::filesystem::path> wavs;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".wav") wavs.push_back(e.path());
  }
  std::sort(wavs.begin(), wavs.end());
  std::vector<RecordingMeta> out;
  for (const auto& w : wavs) {
    const std::string id = w.stem().string();
    const std::string subject = id.substr(0, id.find('_'));
    auto it = murmur.find(subject);
    if (it == murmur.end()) throw DataError("recording " + id + " has no patient row");
    out.push_back({id, subject, it->second});
  }
  return out;
}

/// Reads metadata.jsonl (or the patient table) plus <recording>.wav and
/// <recording>.tsv from `dir`, resampling audio to `sample_rate` when given.
inline std::vector<CorpusRecording> load_corpus(const std::filesystem::path& dir,
                                                std::optional<int> sample_rate = std::nullopt) {
  const auto meta_path = dir / "metadata.jsonl";
  auto metas = std::filesystem::exists(meta_path) ? read_metadata(meta_path) : patient_table_metadata(dir);
  std::vector<CorpusRecording> out;
  for (auto& m : metas) {
    CorpusRecording r;
    r.audio = read_wav(dir / (m.recording_id + ".wav"));
    r.audio.subject_id = m.subject_id;
    r.annotation = parse_segmentation(dir / (m.recording_id + ".tsv"));
    validate(r.annotation, r.audio.duration());
    if (sample_rate && r.audio.sample_rate != *sample_rate) r.audio = resample(r.audio, *sample_rate);
    r.meta = std::move(m);
    out.push_back(std::move(r));
  }
  return out;
}

struct IndexedSnippet {
  SnippetLabel label;
  Split split = Split::Train;
};

struct SnippetIndex {
  std::vector<IndexedSnippet> snippets;
  SplitAssignment splits;

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(std::count_if(snippets.begin(), snippets.end(),
                                                  [s](const IndexedSnippet& x) { return x.split == s; }));
  }
};

/// Windows every recording, then assigns whole subjects to splits.
inline SnippetIndex build_snippet_index(const std::vector<CorpusRecording>& corpus, const WindowConfig& cfg,
                                        std::uint64_t seed) {
  cfg.validate();
  std::vector<SnippetLabel> labels;
  std::map<std::string, std::size_t> per_subject;
  for (const auto& r : corpus) {
    auto w = plan_windows(r.audio.duration(), r.annotation, r.meta, cfg);
    per_subject[r.meta.subject_id] += w.size();
    labels.insert(labels.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  std::vector<SubjectCount> counts;
  for (const auto& [id, n] : per_subject) counts.push_back({id, n});
  SnippetIndex index;
  index.splits = subject_split(std::move(counts), seed);
  for (auto& l : labels) {
    const Split s = index.splits.at(l.subject_id);
    index.snippets.push_back({std::move(l), s});
  }
  return index;
}

/// Raw (un-normalized) feature examples per split.
inline Splits extract_examples(const std::vector<CorpusRecording>& corpus, const SnippetIndex& index,
                               const WindowConfig& wcfg, const FeatureConfig& fcfg, const FeatureSelection& selection) {
  if (wcfg.sample_rate != fcfg.sample_rate) throw ConfigError("window and feature sample rates differ");
  std::map<std::string, const CorpusRecording*> by_id;
  for (const auto& r : corpus) by_id[r.meta.recording_id] = &r;
  const FeatureExtractor fx(fcfg);
  Splits out;
  for (const auto& s : index.snippets) {
    auto it = by_id.find(s.label.recording_id);
    if (it == by_id.end()) throw DataError("snippet refers to unknown recording " + s.label.recording_id);
    const auto samples = slice_window(it->second->audio, s.label.window_start, wcfg);
    Example e{fx.compute(samples, selection), s.label};
    switch (s.split) {
      case Split::Train: out.train.push_back(std::move(e)); break;
      case Split::Validation: out.val.push_back(std::move(e)); break;
      case Split::Test: out.test.push_back(std::move(e)); break;
    }
  }
  return out;
}

/// Number of frames a window produces; model specs must agree with it.
inline std::size_t frames_per_window(const WindowConfig& wcfg, const FeatureConfig& fcfg) {
  return fcfg.frames(wcfg.samples_per_window());
}

}  // namespace pcgkit
