#pragma once

// Training loop, metrics, best-checkpoint selection and experiment harnesses.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <span>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pcgkit/autograd/loss.hpp"
#include "pcgkit/autograd/optim.hpp"
#include "pcgkit/checkpoint.hpp"
#include "pcgkit/features.hpp"
#include "pcgkit/models.hpp"
#include "pcgkit/windowing.hpp"

namespace pcgkit {

// ---------------------------------------------------------------------------
// Metrics

/// Argmax class + 40 bpm; the first index wins ties.
template <class T>
int predict_hr(std::span<const T> logits) {
  if (logits.empty()) throw ShapeError("predict_hr: no logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return class_to_bpm(static_cast<int>(best));
}

inline double mae_hr(std::span<const double> predicted, std::span<const double> target) {
  if (predicted.size() != target.size()) throw ValidationError("mae_hr: length mismatch");
  if (predicted.empty()) throw ValidationError("mae_hr: no samples");
  double acc = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) acc += std::abs(predicted[i] - target[i]);
  return acc / static_cast<double>(predicted.size());
}

struct MurmurMetrics {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::optional<double> accuracy;   // undefined with no samples
  std::optional<double> precision;  // undefined with no predicted positives
  std::optional<double> recall;     // undefined with no actual positives
};

/// Positive class is Present (1).
inline MurmurMetrics murmur_metrics(std::span<const int> predicted, std::span<const int> target) {
  if (predicted.size() != target.size()) throw ValidationError("murmur_metrics: length mismatch");
  MurmurMetrics m;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] != 0, t = target[i] != 0;
    if (p && t) ++m.tp;
    else if (p && !t) ++m.fp;
    else if (!p && t) ++m.fn;
    else ++m.tn;
  }
  const std::size_t n = predicted.size();
  if (n > 0) m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(n);
  if (m.tp + m.fp > 0) m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  if (m.tp + m.fn > 0) m.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  return m;
}

struct RangeBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  std::optional<double> mae;
};

/// Target histogram by `bin_width` bins with per-bin MAE, spanning the target range.
inline std::vector<RangeBin> hr_range_report(std::span<const double> predicted, std::span<const double> target,
                                             double bin_width = 10.0) {
  if (predicted.size() != target.size()) throw ValidationError("hr_range_report: length mismatch");
  if (target.empty()) throw ValidationError("hr_range_report: no samples");
  if (!(bin_width > 0.0)) throw ConfigError("hr_range_report: bin width must be positive");
  const auto [mn, mx] = std::minmax_element(target.begin(), target.end());
  const long first = static_cast<long>(std::floor(*mn / bin_width));
  const long last = static_cast<long>(std::floor(*mx / bin_width));
  std::vector<RangeBin> bins;
  std::vector<double> err(static_cast<std::size_t>(last - first + 1), 0.0);
  for (long b = first; b <= last; ++b) bins.push_back({b * bin_width, (b + 1) * bin_width, 0, std::nullopt});
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto b = static_cast<std::size_t>(static_cast<long>(std::floor(target[i] / bin_width)) - first);
    ++bins[b].count;
    err[b] += std::abs(predicted[i] - target[i]);
  }
  for (std::size_t b = 0; b < bins.size(); ++b) {
    if (bins[b].count > 0) bins[b].mae = err[b] / static_cast<double>(bins[b].count);
  }
  return bins;
}

inline std::string format_optional(const std::optional<double>& v, int precision = 6) {
  if (!v) return "";
  std::ostringstream ss;
  ss << std::setprecision(precision) << *v;
  return ss.str();
}

inline std::string hr_range_csv(const std::vector<RangeBin>& bins) {
  std::string out = "bin_lo,bin_hi,count,mae\n";
  for (const auto& b : bins) {
    out += format_optional(b.lo) + "," + format_optional(b.hi) + "," + std::to_string(b.count) + "," +
           format_optional(b.mae) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Data

/// Raw (un-normalized) features with labels.
struct Example {
  FeatureMatrix features;
  SnippetLabel label;
};

/// Normalized, branch-split inputs ready for batching.
struct PreparedExample {
  std::vector<std::vector<float>> branches;
  int hr_class = 0;
  double hr_bpm = 0.0;
  std::optional<int> murmur;  // 0 Absent, 1 Present, empty Unknown
};

inline std::optional<int> murmur_target(Murmur m) {
  switch (m) {
    case Murmur::Absent: return 0;
    case Murmur::Present: return 1;
    case Murmur::Unknown: return std::nullopt;
  }
  return std::nullopt;
}

/// Feature matrices must carry exactly the rows the model was specified for.
inline void check_feature_tags(const FeatureMatrix& fm, const ModelSpec& spec) {
  FeatureConfig fc;
  fc.n_mels = spec.n_mels;
  fc.n_mfcc = spec.n_mfcc;
  if (fm.row_tags != row_tags(spec.features, fc)) {
    throw ConfigError("feature rows do not match the model's feature selection (" + spec.features.name() + ")");
  }
  if (fm.frames != spec.input_frames) {
    throw ConfigError("feature matrix has " + std::to_string(fm.frames) + " frames, model expects " +
                      std::to_string(spec.input_frames));
  }
}

inline NormalizationProfile fit_normalization(const std::vector<Example>& train) {
  std::vector<const FeatureMatrix*> ptrs;
  for (const auto& e : train) ptrs.push_back(&e.features);
  return NormalizationProfile::fit(ptrs);
}

inline std::vector<PreparedExample> prepare_examples(const std::vector<Example>& data, const ModelSpec& spec,
                                                     const NormalizationProfile& norm) {
  std::vector<PreparedExample> out;
  out.reserve(data.size());
  const auto branches = spec.branches();
  for (const auto& e : data) {
    check_feature_tags(e.features, spec);
    FeatureMatrix fm = e.features;
    if (!norm.empty()) norm.apply(fm);
    PreparedExample p;
    for (const auto& b : branches) {
      p.branches.push_back(branches.size() == 1 ? fm.values : fm.select(b).values);
    }
    p.hr_class = e.label.hr_class;
    p.hr_bpm = e.label.hr_bpm;
    p.murmur = murmur_target(e.label.murmur);
    out.push_back(std::move(p));
  }
  return out;
}

template <class T>
std::vector<ag::Tensor<T>> make_batch(const Model<T>& model, const std::vector<PreparedExample>& data,
                                      std::span<const std::size_t> idx) {
  std::vector<ag::Tensor<T>> inputs;
  for (std::size_t b = 0; b < model.branch_count(); ++b) {
    ag::Shape shape = model.input_shape(b);
    const std::size_t per = ag::numel(shape);
    shape.insert(shape.begin(), idx.size());
    std::vector<T> v;
    v.reserve(per * idx.size());
    for (auto i : idx) {
      const auto& src = data[i].branches[b];
      if (src.size() != per) throw ShapeError("example branch size does not match model input");
      v.insert(v.end(), src.begin(), src.end());
    }
    inputs.emplace_back(std::move(shape), std::move(v));
  }
  return inputs;
}

// ---------------------------------------------------------------------------
// Evaluation

struct Evaluation {
  std::vector<double> predicted_bpm;
  std::vector<double> target_bpm;
  std::vector<double> murmur_probability;  // NaN when the model has no murmur head
  double mae = 0.0;
  MurmurMetrics murmur;  // over Absent/Present examples only
};

template <class T>
Evaluation evaluate(Model<T>& model, const std::vector<PreparedExample>& data, std::size_t batch_size = 32) {
  if (data.empty()) throw ConfigError("evaluate: empty dataset");
  ag::NoGradGuard no_grad;
  Evaluation ev;
  std::vector<int> mm_pred, mm_true;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    auto out = model.forward(make_batch(model, data, idx), false);
    const std::size_t k = out.hr_logits.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto& ex = data[idx[r]];
      ev.predicted_bpm.push_back(predict_hr<T>(out.hr_logits.data().subspan(r * k, k)));
      ev.target_bpm.push_back(ex.hr_bpm);
      if (out.mm_logit) {
        const double z = out.mm_logit->data()[r];
        ev.murmur_probability.push_back(1.0 / (1.0 + std::exp(-z)));
        if (ex.murmur) {
          mm_pred.push_back(z >= 0.0 ? 1 : 0);
          mm_true.push_back(*ex.murmur);
        }
      } else {
        ev.murmur_probability.push_back(std::numeric_limits<double>::quiet_NaN());
      }
    }
  }
  ev.mae = mae_hr(ev.predicted_bpm, ev.target_bpm);
  ev.murmur = murmur_metrics(mm_pred, mm_true);
  return ev;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t batch_size = 16;
  int epochs = 100;
  double lr = 1e-3;
  ag::LossWeights weights;
  ag::Reduction reduction = ag::Reduction::Sum;
  bool scheduler = true;
  int scheduler_step = 2;
  double scheduler_gamma = 0.1;
  double scheduler_trigger_mae = 2.0;
  std::uint64_t seed = 0;
  // Optional early stop once validation reaches both targets.
  std::optional<double> stop_mae;
  std::optional<double> stop_acc;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("train: learning rate must be positive");
    if (scheduler_step < 1) throw ConfigError("train: scheduler step must be >= 1");
    weights.validate(static_cast<std::size_t>(kHrClasses));
  }
};

struct EpochReport {
  int epoch = 0;
  double train_loss = 0.0;  // mean loss per training snippet
  double val_mae = 0.0;
  std::optional<double> val_acc;
  std::optional<double> val_precision;
  std::optional<double> val_recall;
  double lr = 0.0;  // rate used during this epoch

  bool operator==(const EpochReport&) const = default;
};

struct CheckpointPair {
  Checkpoint best_hr;
  int best_hr_epoch = 0;
  std::optional<Checkpoint> best_mm;
  int best_mm_epoch = 0;
};

struct TrainResult {
  CheckpointPair checkpoints;
  std::vector<EpochReport> reports;
  NormalizationProfile normalization;
};

/// Builds the scalar objective for one batch.
template <class T>
ag::Tensor<T> batch_loss(const ModelOutput<T>& out, const std::vector<PreparedExample>& data,
                         std::span<const std::size_t> idx, const TrainConfig& cfg) {
  std::vector<int> classes;
  std::vector<std::optional<int>> murmurs;
  for (auto i : idx) {
    classes.push_back(data[i].hr_class);
    murmurs.push_back(data[i].murmur);
  }
  auto loss = ag::weighted_softmax_ce(out.hr_logits, classes, cfg.weights.w_hr, cfg.weights.class_weights, cfg.reduction);
  if (out.mm_logit) {
    loss = ag::add(loss, ag::masked_sigmoid_bce(*out.mm_logit, murmurs, cfg.weights.w_mm, cfg.reduction));
  }
  return loss;
}

using EpochCallback = std::function<void(const EpochReport&)>;

/// Trains `model` on prepared (already normalized) data. Deterministic for a fixed seed.
template <class T>
TrainResult train(Model<T>& model, const std::vector<PreparedExample>& train_set,
                  const std::vector<PreparedExample>& val_set, const TrainConfig& cfg,
                  const NormalizationProfile& norm, const EpochCallback& on_epoch = {},
                  const nlohmann::ordered_json& meta = {}) {
  cfg.validate();
  if (train_set.empty() || val_set.empty()) throw ConfigError("train: training and validation sets must be non-empty");
  const bool mtl = is_mtl(model.spec().architecture);
  Rng order_rng(cfg.seed);
  Rng dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  ag::Adam<T> adam;
  ag::StepScheduler sched{cfg.lr, cfg.scheduler_step, cfg.scheduler_gamma, cfg.scheduler_trigger_mae, cfg.scheduler};
  auto params = model.parameters();
  double lr = sched.lr();

  TrainResult result;
  result.normalization = norm;
  double best_mae = std::numeric_limits<double>::infinity();
  double best_acc = -1.0;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  auto snapshot = [&](int epoch, const EpochReport& rep) {
    nlohmann::ordered_json m = meta.is_null() ? nlohmann::ordered_json::object() : meta;
    m["epoch"] = epoch;
    m["val_mae"] = rep.val_mae;
    if (rep.val_acc) m["val_acc"] = *rep.val_acc;
    return capture(model, norm, std::move(m));
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      auto out = model.forward(make_batch(model, train_set, idx), true, &dropout_rng);
      auto loss = batch_loss(out, train_set, idx, cfg);
      const double value = loss.item();
      if (!std::isfinite(value)) throw DivergenceError("non-finite training loss", epoch);
      loss_sum += cfg.reduction == ag::Reduction::Sum ? value : value * static_cast<double>(idx.size());
      model.zero_grad();
      loss.backward();
      adam.step(params, lr);
    }
    const auto ev = evaluate(model, val_set);
    EpochReport rep;
    rep.epoch = epoch;
    rep.train_loss = loss_sum / static_cast<double>(train_set.size());
    rep.val_mae = ev.mae;
    if (mtl) {
      rep.val_acc = ev.murmur.accuracy;
      rep.val_precision = ev.murmur.precision;
      rep.val_recall = ev.murmur.recall;
    }
    rep.lr = lr;
    result.reports.push_back(rep);
    if (rep.val_mae < best_mae) {
      best_mae = rep.val_mae;
      result.checkpoints.best_hr = snapshot(epoch, rep);
      result.checkpoints.best_hr_epoch = epoch;
    }
    if (mtl && rep.val_acc && *rep.val_acc > best_acc) {
      best_acc = *rep.val_acc;
      result.checkpoints.best_mm = snapshot(epoch, rep);
      result.checkpoints.best_mm_epoch = epoch;
    }
    if (on_epoch) on_epoch(rep);
    lr = sched.update(rep.val_mae);
    if (cfg.stop_mae || cfg.stop_acc) {
      const bool mae_ok = !cfg.stop_mae || rep.val_mae <= *cfg.stop_mae;
      const bool acc_ok = !cfg.stop_acc || !mtl || (rep.val_acc && *rep.val_acc >= *cfg.stop_acc);
      if (mae_ok && acc_ok) break;
    }
  }
  return result;
}

inline std::string epoch_csv_header() { return "epoch,train_loss,val_mae,val_acc,val_precision,val_recall,lr\n"; }

inline std::string epoch_csv_row(const EpochReport& r) {
  std::ostringstream ss;
  ss << std::setprecision(10) << r.epoch << ',' << r.train_loss << ',' << r.val_mae << ',' << format_optional(r.val_acc, 10)
     << ',' << format_optional(r.val_precision, 10) << ',' << format_optional(r.val_recall, 10) << ',' << r.lr << '\n';
  return ss.str();
}

// ---------------------------------------------------------------------------
// Experiment harnesses

struct TestMetrics {
  double mae = 0.0;
  MurmurMetrics murmur;
};

inline TestMetrics test_metrics(const Checkpoint& ck, const std::vector<Example>& test) {
  auto model = load_model<float>(ck);
  const auto prepared = prepare_examples(test, ck.spec, ck.normalization);
  const auto ev = evaluate(model, prepared);
  return {ev.mae, ev.murmur};
}

struct SweepConfig {
  double w_hr = 1.0;
  double w_mm = 1.0;
  bool scheduler = false;

  std::string label() const {
    std::ostringstream ss;
    ss << "w_hr=" << w_hr << ", w_mm=" << w_mm << (scheduler ? ", LR scheduler" : ", No Scheduler");
    return ss.str();
  }
};

/// The three weight/scheduler settings of the multi-task study.
inline std::vector<SweepConfig> paper_sweep_configs() { return {{1, 1, false}, {1, 1, true}, {1, 2, true}}; }

struct SweepRow {
  SweepConfig config;
  TestMetrics best_hr;
  TestMetrics best_mm;
  int best_hr_epoch = 0;
  int best_mm_epoch = 0;
  std::vector<EpochReport> reports;
};

struct Splits {
  std::vector<Example> train;
  std::vector<Example> val;
  std::vector<Example> test;
};

inline TrainResult train_from_examples(const ModelSpec& spec, const Splits& data, const TrainConfig& cfg,
                                       const EpochCallback& on_epoch = {}, const nlohmann::ordered_json& meta = {}) {
  const auto norm = fit_normalization(data.train);
  Model<float> model(spec);
  const auto tr = prepare_examples(data.train, spec, norm);
  const auto va = prepare_examples(data.val, spec, norm);
  return train(model, tr, va, cfg, norm, on_epoch, meta);
}

/// Trains once per configuration and scores both best checkpoints on the test split.
inline std::vector<SweepRow> run_weight_sweep(const ModelSpec& spec, const Splits& data, const TrainConfig& base,
                                              const std::vector<SweepConfig>& configs,
                                              const std::function<void(const SweepConfig&, const EpochReport&)>& on_epoch = {}) {
  if (configs.empty()) throw ConfigError("sweep: no configurations");
  if (!is_mtl(spec.architecture)) throw ConfigError("sweep: needs a multi-task architecture");
  if (data.test.empty()) throw ConfigError("sweep: empty test split");
  std::vector<SweepRow> rows;
  for (const auto& c : configs) {
    TrainConfig cfg = base;
    cfg.weights.w_hr = c.w_hr;
    cfg.weights.w_mm = c.w_mm;
    cfg.scheduler = c.scheduler;
    EpochCallback cb;
    if (on_epoch) cb = [&](const EpochReport& r) { on_epoch(c, r); };
    auto result = train_from_examples(spec, data, cfg, cb);
    SweepRow row;
    row.config = c;
    row.reports = result.reports;
    row.best_hr = test_metrics(result.checkpoints.best_hr, data.test);
    row.best_hr_epoch = result.checkpoints.best_hr_epoch;
    const auto& mm = result.checkpoints.best_mm ? *result.checkpoints.best_mm : result.checkpoints.best_hr;
    row.best_mm = test_metrics(mm, data.test);
    row.best_mm_epoch = result.checkpoints.best_mm ? result.checkpoints.best_mm_epoch : result.checkpoints.best_hr_epoch;
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace detail {
inline std::string pct(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(2) << 100.0 * *v << "%";
  return ss.str();
}
inline std::string fixed3(double v) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(3) << v;
  return ss.str();
}
}  // namespace detail

/// Markdown table: metric rows x (configuration, best-HR / best-MM checkpoint) columns.
inline std::string sweep_markdown(const std::vector<SweepRow>& rows) {
  std::string out = "| |";
  std::string sep = "|---|";
  std::string sub = "| |";
  for (const auto& r : rows) {
    out += " " + r.config.label() + " | |";
    sep += "---|---|";
    sub += " Best Model_HR | Best Model_MM |";
  }
  out += "\n" + sep + "\n" + sub + "\n";
  auto line = [&](const std::string& name, auto&& cell) {
    out += "| " + name + " |";
    for (const auto& r : rows) out += " " + cell(r.best_hr) + " | " + cell(r.best_mm) + " |";
    out += "\n";
  };
  line("MAE_HR", [](const TestMetrics& m) { return detail::fixed3(m.mae); });
  line("ACC_MM", [](const TestMetrics& m) { return detail::pct(m.murmur.accuracy); });
  line("Precision_MM", [](const TestMetrics& m) { return detail::pct(m.murmur.precision); });
  line("Recall_MM", [](const TestMetrics& m) { return detail::pct(m.murmur.recall); });
  return out;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "w_hr,w_mm,scheduler,checkpoint,epoch,mae_hr,acc_mm,precision_mm,recall_mm\n";
  for (const auto& r : rows) {
    for (int which = 0; which < 2; ++which) {
      const auto& m = which == 0 ? r.best_hr : r.best_mm;
      std::ostringstream ss;
      ss << std::setprecision(10) << r.config.w_hr << ',' << r.config.w_mm << ',' << (r.config.scheduler ? "on" : "off")
         << ',' << (which == 0 ? "best_hr" : "best_mm") << ',' << (which == 0 ? r.best_hr_epoch : r.best_mm_epoch) << ','
         << m.mae << ',' << format_optional(m.murmur.accuracy, 10) << ',' << format_optional(m.murmur.precision, 10) << ','
         << format_optional(m.murmur.recall, 10) << '\n';
      out += ss.str();
    }
  }
  return out;
}

struct AblationRow {
  FeatureSelection selection;
  double test_mae = 0.0;
  int best_epoch = 0;
};

/// Trains the same architecture on each feature subset (rows sliced from a
/// full-selection dataset) and reports test MAE of the best-HR checkpoint.
inline std::vector<AblationRow> run_feature_ablation(ModelSpec spec, const Splits& full,
                                                     const std::vector<FeatureSelection>& subsets,
                                                     const TrainConfig& cfg) {
  if (subsets.empty()) throw ConfigError("ablation: no feature subsets");
  std::vector<AblationRow> rows;
  for (const auto& sel : subsets) {
    if (sel.empty()) throw ConfigError("ablation: empty feature subset");
    auto slice = [&](const std::vector<Example>& src) {
      std::vector<Example> out;
      for (const auto& e : src) out.push_back({e.features.select(sel), e.label});
      return out;
    };
    Splits data{slice(full.train), slice(full.val), slice(full.test)};
    ModelSpec s = spec;
    s.features = sel;
    auto result = train_from_examples(s, data, cfg);
    rows.push_back({sel, test_metrics(result.checkpoints.best_hr, data.test).mae, result.checkpoints.best_hr_epoch});
  }
  return rows;
}

}  // namespace pcgkit
