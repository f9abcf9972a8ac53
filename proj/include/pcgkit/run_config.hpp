#pragma once

// Flat "section.key = value" run configuration with a closed schema.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pcgkit/dsp_baseline.hpp"
#include "pcgkit/features.hpp"
#include "pcgkit/models.hpp"
#include "pcgkit/synth.hpp"
#include "pcgkit/train_eval.hpp"
#include "pcgkit/windowing.hpp"

namespace pcgkit {

enum class KeyType { Int, Real, Bool, Text, Sizes, Selection, Architecture };

struct KeySpec {
  std::string_view key;
  KeyType type;
  std::string_view fallback;
  std::string_view help;
};

inline const std::vector<KeySpec>& config_schema() {
  static const std::vector<KeySpec> schema{
      {"seed", KeyType::Int, "0", "master seed for splits, initialization, shuffling and synthesis"},
      {"data.corpus", KeyType::Text, "", "corpus directory (default: <out>/corpus)"},

      {"window.length", KeyType::Real, "5", "snippet length, seconds"},
      {"window.stride", KeyType::Real, "1", "snippet hop, seconds"},
      {"window.sample_rate", KeyType::Int, "16000", "audio is resampled to this rate"},

      {"features.n_fft", KeyType::Int, "1024", "STFT size"},
      {"features.hop", KeyType::Int, "160", "STFT hop, samples"},
      {"features.n_mels", KeyType::Int, "40", "mel bands"},
      {"features.n_mfcc", KeyType::Int, "40", "cepstral coefficients"},
      {"features.fmin", KeyType::Real, "0", "lowest mel edge, Hz"},
      {"features.fmax", KeyType::Real, "2000", "highest mel edge, Hz"},
      {"features.selection", KeyType::Selection, "Mel+MFCC+PSD+RMS", "rows stacked into the feature matrix"},

      {"model.architecture", KeyType::Architecture, "2dcnn-mtl", "tcnn-lstm | 2dcnn | 2dcnn-fusion | 2dcnn-mtl | tcnn-lstm-mtl"},
      {"model.conv_filters", KeyType::Sizes, "32,64,96,96,64", "2-D conv filters per layer"},
      {"model.conv_kernels", KeyType::Sizes, "7,5,3,3,3", "2-D conv kernel sizes"},
      {"model.conv_strides", KeyType::Sizes, "1,1,1,1,1", "2-D conv strides"},
      {"model.pool", KeyType::Int, "2", "max-pool size after each conv"},
      {"model.tcnn_filters", KeyType::Int, "64", "temporal conv filters"},
      {"model.tcnn_kernel", KeyType::Int, "5", "temporal conv kernel"},
      {"model.tcnn_stride", KeyType::Int, "2", "temporal conv stride"},
      {"model.lstm_hidden", KeyType::Int, "64", "LSTM hidden units"},
      {"model.lstm_layers", KeyType::Int, "2", "stacked LSTM layers"},
      {"model.fc_hidden", KeyType::Int, "256", "hidden units in each head"},
      {"model.dropout", KeyType::Real, "0.5", "head dropout probability"},
      {"model.spec_file", KeyType::Text, "", "JSON model spec; its keys override the model.* values"},

      {"train.batch_size", KeyType::Int, "16", "mini-batch size"},
      {"train.epochs", KeyType::Int, "100", "maximum epochs"},
      {"train.lr", KeyType::Real, "0.001", "initial Adam learning rate"},
      {"train.w_hr", KeyType::Real, "1", "heart-rate loss weight"},
      {"train.w_mm", KeyType::Real, "1", "murmur loss weight"},
      {"train.reduction", KeyType::Text, "sum", "sum | mean over the batch"},
      {"train.scheduler", KeyType::Bool, "true", "step decay once validation MAE drops below the trigger"},
      {"train.scheduler_step", KeyType::Int, "2", "epochs per decay step"},
      {"train.scheduler_gamma", KeyType::Real, "0.1", "decay factor"},
      {"train.scheduler_trigger", KeyType::Real, "2", "validation MAE that activates decay, bpm"},
      {"train.stop_mae", KeyType::Real, "nan", "stop once validation MAE <= this (nan = off)"},
      {"train.stop_acc", KeyType::Real, "nan", "and validation murmur accuracy >= this (nan = off)"},

      {"sweep.configs", KeyType::Text, "1:1:off,1:1:on,1:2:on", "w_hr:w_mm:scheduler triples"},
      {"ablate.subsets", KeyType::Text, "Mel;MFCC;PSD;RMS;Mel+MFCC;Mel+MFCC+PSD;Mel+MFCC+PSD+RMS",
       "';'-separated feature subsets"},

      {"eval.split", KeyType::Text, "test", "train | val | test"},
      {"eval.bin_width", KeyType::Real, "10", "HR range report bin width, bpm"},

      {"baseline.cutoff", KeyType::Real, "6", "low-pass cutoff, Hz"},
      {"baseline.min_peak_distance", KeyType::Int, "8", "frames"},
      {"baseline.prominence", KeyType::Real, "0.1", "fraction of envelope range"},
      {"baseline.max_cv", KeyType::Real, "0.15", "beat-period variation flagged as low confidence"},
      {"baseline.split", KeyType::Text, "test", "train | val | test | all"},

      {"synth.subjects", KeyType::Int, "20", "subjects (>= 10)"},
      {"synth.recordings_per_subject", KeyType::Int, "4", "1 to 4 (AV, PV, TV, MV)"},
      {"synth.hr_min", KeyType::Real, "50", "bpm"},
      {"synth.hr_max", KeyType::Real, "150", "bpm"},
      {"synth.hr_spread", KeyType::Real, "4", "per-recording deviation from the subject rate, bpm"},
      {"synth.stratified", KeyType::Bool, "true", "one subject per HR stratum"},
      {"synth.murmur_fraction", KeyType::Real, "0.5", "fraction of subjects with a murmur"},
      {"synth.snr_db", KeyType::Real, "30", "additive white noise level (inf = clean)"},
      {"synth.duration", KeyType::Real, "10", "recording length, seconds"},
      {"synth.sample_rate", KeyType::Int, "22050", "generation rate, Hz"},
  };
  return schema;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto end = s.find(sep, start);
    out.push_back(trim(s.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start)));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

inline double parse_real(std::string_view key, const std::string& v) {
  if (v == "inf") return std::numeric_limits<double>::infinity();
  if (v == "nan") return std::numeric_limits<double>::quiet_NaN();
  double d = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), d);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(std::string(key) + ": '" + v + "' is not a number");
  return d;
}

inline long long parse_int(std::string_view key, const std::string& v) {
  long long i = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), i);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(std::string(key) + ": '" + v + "' is not an integer");
  return i;
}

inline bool parse_bool(std::string_view key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw ConfigError(std::string(key) + ": '" + v + "' is not a boolean");
}

inline std::vector<std::size_t> parse_sizes(std::string_view key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& tok : split(v, ',')) {
    const auto i = parse_int(key, tok);
    if (i < 0) throw ConfigError(std::string(key) + ": sizes must be non-negative");
    out.push_back(static_cast<std::size_t>(i));
  }
  return out;
}

}  // namespace detail

class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_schema()) values_[std::string(k.key)] = std::string(k.fallback);
  }

  static RunConfig parse(std::string_view text, std::string_view origin = "config") {
    RunConfig cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      const std::string body = detail::trim(std::string_view(line).substr(0, hash));
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": expected 'key = value'");
      }
      try {
        cfg.set(detail::trim(std::string_view(body).substr(0, eq)), detail::trim(std::string_view(body).substr(eq + 1)));
      } catch (const ConfigError& e) {
        throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
    return cfg;
  }

  static RunConfig load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse(text, path.string());
  }

  /// Validates the value against the key's type before storing it.
  void set(std::string_view key, std::string_view value) {
    const KeySpec* spec = find(key);
    if (spec == nullptr) throw ConfigError("unknown config key '" + std::string(key) + "'");
    const std::string v = detail::trim(value);
    switch (spec->type) {
      case KeyType::Int: detail::parse_int(key, v); break;
      case KeyType::Real: detail::parse_real(key, v); break;
      case KeyType::Bool: detail::parse_bool(key, v); break;
      case KeyType::Sizes: detail::parse_sizes(key, v); break;
      case KeyType::Selection: FeatureSelection::parse(v); break;
      case KeyType::Architecture: architecture_from_string(v); break;
      case KeyType::Text: break;
    }
    values_[std::string(key)] = v;
  }

  /// "key=value" override from the command line.
  void apply_override(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' needs key=value");
    set(detail::trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
  }

  const std::string& raw(std::string_view key) const {
    auto it = values_.find(std::string(key));
    if (it == values_.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
    return it->second;
  }

  long long get_int(std::string_view key) const { return detail::parse_int(key, raw(key)); }
  double get_real(std::string_view key) const { return detail::parse_real(key, raw(key)); }
  bool get_bool(std::string_view key) const { return detail::parse_bool(key, raw(key)); }

  std::size_t get_size(std::string_view key) const {
    const auto v = get_int(key);
    if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
  }

  std::uint64_t seed() const { return static_cast<std::uint64_t>(get_int("seed")); }

  WindowConfig window() const {
    WindowConfig w;
    w.window_length = get_real("window.length");
    w.stride = get_real("window.stride");
    w.sample_rate = static_cast<int>(get_int("window.sample_rate"));
    w.validate();
    return w;
  }

  FeatureConfig features() const {
    FeatureConfig f;
    f.n_fft = get_size("features.n_fft");
    f.hop = get_size("features.hop");
    f.n_mels = get_size("features.n_mels");
    f.n_mfcc = get_size("features.n_mfcc");
    f.fmin = get_real("features.fmin");
    f.fmax = get_real("features.fmax");
    f.sample_rate = static_cast<int>(get_int("window.sample_rate"));
    f.validate();
    return f;
  }

  FeatureSelection selection() const { return FeatureSelection::parse(raw("features.selection")); }

  /// Input frames follow from the window and STFT settings.
  ModelSpec model() const {
    ModelSpec m;
    m.architecture = architecture_from_string(raw("model.architecture"));
    m.features = selection();
    const auto f = features();
    m.n_mels = f.n_mels;
    m.n_mfcc = f.n_mfcc;
    m.input_frames = f.frames(window().samples_per_window());
    m.conv_filters = detail::parse_sizes("model.conv_filters", raw("model.conv_filters"));
    m.conv_kernels = detail::parse_sizes("model.conv_kernels", raw("model.conv_kernels"));
    m.conv_strides = detail::parse_sizes("model.conv_strides", raw("model.conv_strides"));
    m.pool = get_size("model.pool");
    m.tcnn_filters = get_size("model.tcnn_filters");
    m.tcnn_kernel = get_size("model.tcnn_kernel");
    m.tcnn_stride = get_size("model.tcnn_stride");
    m.lstm_hidden = get_size("model.lstm_hidden");
    m.lstm_layers = get_size("model.lstm_layers");
    m.fc_hidden = get_size("model.fc_hidden");
    m.dropout = get_real("model.dropout");
    m.seed = seed() ^ 0x6d6f64656cULL;
    if (const auto& file = raw("model.spec_file"); !file.empty()) {
      std::ifstream in(file, std::ios::binary);
      if (!in) throw ConfigError("cannot open model spec " + file);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(file + ": " + e.what());
      }
      m = model_spec_from_json(j, m);
    }
    return m;
  }

  TrainConfig train() const {
    TrainConfig t;
    const auto batch = get_int("train.batch_size");
    const auto epochs = get_int("train.epochs");
    if (batch < 1) throw ConfigError("train.batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    t.batch_size = static_cast<std::size_t>(batch);
    t.epochs = static_cast<int>(epochs);
    t.lr = get_real("train.lr");
    t.weights.w_hr = get_real("train.w_hr");
    t.weights.w_mm = get_real("train.w_mm");
    const auto& red = raw("train.reduction");
    if (red == "sum") t.reduction = ag::Reduction::Sum;
    else if (red == "mean") t.reduction = ag::Reduction::Mean;
    else throw ConfigError("train.reduction must be 'sum' or 'mean'");
    t.scheduler = get_bool("train.scheduler");
    t.scheduler_step = static_cast<int>(get_int("train.scheduler_step"));
    t.scheduler_gamma = get_real("train.scheduler_gamma");
    t.scheduler_trigger_mae = get_real("train.scheduler_trigger");
    if (const double v = get_real("train.stop_mae"); !std::isnan(v)) t.stop_mae = v;
    if (const double v = get_real("train.stop_acc"); !std::isnan(v)) t.stop_acc = v;
    t.seed = seed() ^ 0x747261696eULL;
    t.validate();
    return t;
  }

  std::vector<SweepConfig> sweep() const {
    std::vector<SweepConfig> out;
    for (const auto& item : detail::split(raw("sweep.configs"), ',')) {
      const auto parts = detail::split(item, ':');
      if (parts.size() != 3) throw ConfigError("sweep.configs entry '" + item + "' must be w_hr:w_mm:on|off");
      out.push_back({detail::parse_real("sweep.configs", parts[0]), detail::parse_real("sweep.configs", parts[1]),
                     detail::parse_bool("sweep.configs", parts[2])});
    }
    return out;
  }

  std::vector<FeatureSelection> ablation_subsets() const {
    std::vector<FeatureSelection> out;
    for (const auto& item : detail::split(raw("ablate.subsets"), ';')) out.push_back(FeatureSelection::parse(item));
    return out;
  }

  BaselineConfig baseline() const {
    BaselineConfig b;
    b.cutoff = get_real("baseline.cutoff");
    b.min_peak_distance = get_size("baseline.min_peak_distance");
    b.prominence = get_real("baseline.prominence");
    b.max_cv = get_real("baseline.max_cv");
    b.frame_rate = features().frame_rate();
    b.validate();
    return b;
  }

  DatasetConfig synth() const {
    DatasetConfig d;
    d.n_subjects = get_size("synth.subjects");
    d.recordings_per_subject = get_size("synth.recordings_per_subject");
    d.hr_min = get_real("synth.hr_min");
    d.hr_max = get_real("synth.hr_max");
    d.hr_spread = get_real("synth.hr_spread");
    d.stratified_hr = get_bool("synth.stratified");
    d.murmur_fraction = get_real("synth.murmur_fraction");
    d.snr_db = get_real("synth.snr_db");
    d.duration = get_real("synth.duration");
    d.sample_rate = static_cast<int>(get_int("synth.sample_rate"));
    d.seed = seed() ^ 0x73796e7468ULL;
    try {
      d.validate();
    } catch (const ValidationError& e) {
      throw ConfigError(e.what());
    }
    return d;
  }

  /// Every key in sorted order, one "key = value" per line.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  /// FNV-1a over the canonical form, as 16 hex digits.
  std::string hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical()) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

 private:
  static const KeySpec* find(std::string_view key) {
    for (const auto& k : config_schema()) {
      if (k.key == key) return &k;
    }
    return nullptr;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace pcgkit
