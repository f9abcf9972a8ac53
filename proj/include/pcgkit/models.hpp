#pragma once

// The five network architectures, built from a ModelSpec.

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcgkit/autograd/loss.hpp"
#include "pcgkit/autograd/ops.hpp"
#include "pcgkit/autograd/optim.hpp"
#include "pcgkit/autograd/tensor.hpp"
#include "pcgkit/features.hpp"
#include "pcgkit/random.hpp"
#include "pcgkit/windowing.hpp"

namespace pcgkit {

enum class Architecture { TcnnLstm, Cnn2d, Cnn2dFusion, Cnn2dMtl, TcnnLstmMtl };

inline std::string_view to_string(Architecture a) {
  switch (a) {
    case Architecture::TcnnLstm: return "tcnn-lstm";
    case Architecture::Cnn2d: return "2dcnn";
    case Architecture::Cnn2dFusion: return "2dcnn-fusion";
    case Architecture::Cnn2dMtl: return "2dcnn-mtl";
    case Architecture::TcnnLstmMtl: return "tcnn-lstm-mtl";
  }
  return "?";
}

inline Architecture architecture_from_string(std::string_view s) {
  for (auto a : {Architecture::TcnnLstm, Architecture::Cnn2d, Architecture::Cnn2dFusion, Architecture::Cnn2dMtl,
                 Architecture::TcnnLstmMtl}) {
    if (s == to_string(a)) return a;
  }
  throw ConfigError("unknown architecture '" + std::string(s) + "'");
}

inline bool is_mtl(Architecture a) { return a == Architecture::Cnn2dMtl || a == Architecture::TcnnLstmMtl; }
inline bool is_recurrent(Architecture a) { return a == Architecture::TcnnLstm || a == Architecture::TcnnLstmMtl; }

struct ModelSpec {
  Architecture architecture = Architecture::Cnn2d;

  // Input: rows come from the feature selection, frames from the window length.
  FeatureSelection features = FeatureSelection::all();
  std::size_t n_mels = 40;
  std::size_t n_mfcc = 40;
  std::size_t input_frames = 494;

  // 2-D representation stack: conv ("same" padding) + ReLU + max-pool per layer.
  std::vector<std::size_t> conv_filters{32, 64, 96, 96, 64};
  std::vector<std::size_t> conv_kernels{7, 5, 3, 3, 3};
  std::vector<std::size_t> conv_strides{1, 1, 1, 1, 1};
  std::size_t pool = 2;

  // 1-D representation: temporal conv + ReLU + stacked LSTM.
  std::size_t tcnn_filters = 64;
  std::size_t tcnn_kernel = 5;
  std::size_t tcnn_stride = 2;
  std::size_t lstm_hidden = 64;
  std::size_t lstm_layers = 2;

  // Classification heads: FC + ReLU + dropout + FC.
  std::size_t fc_hidden = 256;
  double dropout = 0.5;

  std::uint64_t seed = 0;

  /// Inputs fed to separate representation branches.
  std::vector<FeatureSelection> branches() const {
    if (architecture == Architecture::Cnn2dFusion) {
      return {FeatureSelection{FeatureKind::Mel, FeatureKind::Psd}, FeatureSelection{FeatureKind::Mfcc, FeatureKind::Rms}};
    }
    return {features};
  }

  std::size_t rows(const FeatureSelection& sel) const {
    FeatureConfig fc;
    fc.n_mels = n_mels;
    fc.n_mfcc = n_mfcc;
    return rows_of(sel, fc);
  }
};

inline nlohmann::ordered_json to_json(const ModelSpec& s) {
  nlohmann::ordered_json j;
  j["architecture"] = to_string(s.architecture);
  j["features"] = s.features.name();
  j["n_mels"] = s.n_mels;
  j["n_mfcc"] = s.n_mfcc;
  j["input_frames"] = s.input_frames;
  j["conv_filters"] = s.conv_filters;
  j["conv_kernels"] = s.conv_kernels;
  j["conv_strides"] = s.conv_strides;
  j["pool"] = s.pool;
  j["tcnn_filters"] = s.tcnn_filters;
  j["tcnn_kernel"] = s.tcnn_kernel;
  j["tcnn_stride"] = s.tcnn_stride;
  j["lstm_hidden"] = s.lstm_hidden;
  j["lstm_layers"] = s.lstm_layers;
  j["fc_hidden"] = s.fc_hidden;
  j["dropout"] = s.dropout;
  j["seed"] = s.seed;
  return j;
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline ModelSpec model_spec_from_json(const nlohmann::json& j, ModelSpec s = {}) {
  if (!j.is_object()) throw ConfigError("model spec must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "architecture") s.architecture = architecture_from_string(v.get<std::string>());
      else if (key == "features") s.features = FeatureSelection::parse(v.get<std::string>());
      else if (key == "n_mels") s.n_mels = v.get<std::size_t>();
      else if (key == "n_mfcc") s.n_mfcc = v.get<std::size_t>();
      else if (key == "input_frames") s.input_frames = v.get<std::size_t>();
      else if (key == "conv_filters") s.conv_filters = v.get<std::vector<std::size_t>>();
      else if (key == "conv_kernels") s.conv_kernels = v.get<std::vector<std::size_t>>();
      else if (key == "conv_strides") s.conv_strides = v.get<std::vector<std::size_t>>();
      else if (key == "pool") s.pool = v.get<std::size_t>();
      else if (key == "tcnn_filters") s.tcnn_filters = v.get<std::size_t>();
      else if (key == "tcnn_kernel") s.tcnn_kernel = v.get<std::size_t>();
      else if (key == "tcnn_stride") s.tcnn_stride = v.get<std::size_t>();
      else if (key == "lstm_hidden") s.lstm_hidden = v.get<std::size_t>();
      else if (key == "lstm_layers") s.lstm_layers = v.get<std::size_t>();
      else if (key == "fc_hidden") s.fc_hidden = v.get<std::size_t>();
      else if (key == "dropout") s.dropout = v.get<double>();
      else if (key == "seed") s.seed = v.get<std::uint64_t>();
      else throw ConfigError("unknown model spec key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model spec: ") + e.what());
  }
  return s;
}

template <class T>
struct ModelOutput {
  ag::Tensor<T> hr_logits;               // N x 141
  std::optional<ag::Tensor<T>> mm_logit;  // N x 1, MTL only
};

template <class T>
class Model {
 public:
  using Tensor = ag::Tensor<T>;
  using Param = ag::Parameter<T>;

  explicit Model(ModelSpec spec) : spec_(std::move(spec)), rng_(spec_.seed) {
    validate_and_build();
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelSpec& spec() const { return spec_; }

  /// Input shape expected for branch `i`, without the batch axis.
  ag::Shape input_shape(std::size_t i) const {
    const std::size_t r = spec_.rows(spec_.branches().at(i));
    if (is_recurrent(spec_.architecture)) return {r, spec_.input_frames};
    return {1, r, spec_.input_frames};
  }

  std::size_t branch_count() const { return spec_.branches().size(); }

  /// `dropout_rng` is required when training with dropout > 0.
  ModelOutput<T> forward(const std::vector<Tensor>& inputs, bool training, Rng* dropout_rng = nullptr) {
    if (inputs.size() != trunks_.size()) {
      throw ShapeError("model expects " + std::to_string(trunks_.size()) + " inputs, got " +
                       std::to_string(inputs.size()));
    }
    if (training && spec_.dropout > 0.0 && dropout_rng == nullptr) {
      throw ConfigError("training forward pass needs a dropout RNG");
    }
    std::vector<Tensor> flat;
    for (std::size_t b = 0; b < inputs.size(); ++b) {
      const auto& x = inputs[b];
      const auto expected = input_shape(b);
      if (x.rank() != expected.size() + 1 || !std::equal(expected.begin(), expected.end(), x.shape().begin() + 1)) {
        throw ShapeError("branch " + std::to_string(b) + " input " + ag::shape_str(x.shape()) +
                         " does not match expected (N, " + ag::shape_str(expected).substr(1));
      }
      flat.push_back(is_recurrent(spec_.architecture) ? trunk_1d(trunks_[b], x) : trunk_2d(trunks_[b], x));
    }
    Tensor shared = flat.size() == 1 ? flat[0] : ag::concat_features(flat);
    ModelOutput<T> out;
    out.hr_logits = head(hr_head_, shared, training, dropout_rng);
    if (mm_head_) out.mm_logit = head(*mm_head_, shared, training, dropout_rng);
    return out;
  }

  std::vector<Param*> parameters() {
    std::vector<Param*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::vector<const Param*> parameters() const {
    std::vector<const Param*> out;
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  /// Parameters whose name starts with `prefix` ("trunk", "hr_head", "mm_head").
  std::vector<Param*> parameters(std::string_view prefix) {
    std::vector<Param*> out;
    for (auto& p : params_) {
      if (p->name.starts_with(prefix)) out.push_back(p.get());
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->tensor.zero_grad();
  }

  /// Flattened width of the shared representation fed to the heads.
  std::size_t representation_width() const { return rep_width_; }

 private:
  struct ConvLayer {
    Param* weight = nullptr;
    Param* bias = nullptr;
    std::size_t stride = 1;
    std::size_t pad = 0;
  };
  struct LstmLayer {
    Param* w_ih = nullptr;
    Param* w_hh = nullptr;
    Param* bias = nullptr;
  };
  struct Trunk {
    std::vector<ConvLayer> convs;
    std::vector<LstmLayer> lstms;
  };
  struct Head {
    Param* w1 = nullptr;
    Param* b1 = nullptr;
    Param* w2 = nullptr;
    Param* b2 = nullptr;
  };

  Param* add_param(std::string name, ag::Shape shape, double bound) {
    std::vector<T> v(ag::numel(shape));
    for (auto& x : v) x = static_cast<T>(rng_.uniform(-bound, bound));
    params_.push_back(std::make_unique<Param>(std::move(name), Tensor(std::move(shape), std::move(v))));
    return params_.back().get();
  }

  Param* add_zero_param(std::string name, ag::Shape shape) { return add_param(std::move(name), std::move(shape), 0.0); }

  static double kaiming_bound(std::size_t fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }

  Head make_head(const std::string& prefix, std::size_t in, std::size_t out) {
    Head h;
    h.w1 = add_param(prefix + ".fc1.weight", {spec_.fc_hidden, in}, kaiming_bound(in));
    h.b1 = add_zero_param(prefix + ".fc1.bias", {spec_.fc_hidden});
    h.w2 = add_param(prefix + ".fc2.weight", {out, spec_.fc_hidden}, kaiming_bound(spec_.fc_hidden));
    h.b2 = add_zero_param(prefix + ".fc2.bias", {out});
    return h;
  }

  void validate_and_build() {
    const auto& s = spec_;
    if (!(s.dropout >= 0.0 && s.dropout < 1.0)) throw ShapeError("model spec: dropout must be in [0, 1)");
    if (s.fc_hidden == 0) throw ShapeError("model spec: fc_hidden must be >= 1");
    if (s.input_frames == 0) throw ShapeError("model spec: input_frames must be >= 1");
    const auto branches = s.branches();
    for (const auto& b : branches) {
      if (b.empty()) throw ShapeError("model spec: empty feature branch");
      for (auto k : b.kinds()) {
        if (!s.features.contains(k)) {
          throw ShapeError("model spec: branch uses " + std::string(to_string(k)) + " which is not in the feature selection");
        }
      }
    }
    rep_width_ = 0;
    for (std::size_t bi = 0; bi < branches.size(); ++bi) {
      const std::string prefix = "trunk" + std::to_string(bi);
      const std::size_t rows = s.rows(branches[bi]);
      Trunk trunk;
      if (is_recurrent(s.architecture)) {
        if (s.tcnn_filters == 0 || s.tcnn_kernel == 0 || s.tcnn_stride == 0 || s.lstm_hidden == 0 || s.lstm_layers == 0) {
          throw ShapeError("model spec: temporal layer sizes must be >= 1");
        }
        const std::size_t pad = s.tcnn_kernel / 2;
        const std::size_t len = ag::conv_out_extent(s.input_frames, s.tcnn_kernel, s.tcnn_stride, pad);
        if (len == 0) throw ShapeError("model spec: temporal conv leaves no timesteps");
        ConvLayer c;
        c.weight = add_param(prefix + ".conv0.weight", {s.tcnn_filters, rows, s.tcnn_kernel}, kaiming_bound(rows * s.tcnn_kernel));
        c.bias = add_zero_param(prefix + ".conv0.bias", {s.tcnn_filters});
        c.stride = s.tcnn_stride;
        c.pad = pad;
        trunk.convs.push_back(c);
        std::size_t in = s.tcnn_filters;
        const double bound = 1.0 / std::sqrt(static_cast<double>(s.lstm_hidden));
        for (std::size_t l = 0; l < s.lstm_layers; ++l) {
          LstmLayer layer;
          const std::string p = prefix + ".lstm" + std::to_string(l);
          layer.w_ih = add_param(p + ".w_ih", {4 * s.lstm_hidden, in}, bound);
          layer.w_hh = add_param(p + ".w_hh", {4 * s.lstm_hidden, s.lstm_hidden}, bound);
          layer.bias = add_param(p + ".bias", {4 * s.lstm_hidden}, bound);
          trunk.lstms.push_back(layer);
          in = s.lstm_hidden;
        }
        rep_width_ += s.lstm_hidden;
      } else {
        const std::size_t layers = s.conv_filters.size();
        if (layers == 0 || s.conv_kernels.size() != layers || s.conv_strides.size() != layers) {
          throw ShapeError("model spec: conv_filters, conv_kernels and conv_strides must have equal non-zero length");
        }
        if (s.pool == 0) throw ShapeError("model spec: pool must be >= 1");
        std::size_t h = rows, w = s.input_frames, ch = 1;
        for (std::size_t l = 0; l < layers; ++l) {
          const std::size_t k = s.conv_kernels[l], st = s.conv_strides[l], f = s.conv_filters[l];
          if (k == 0 || st == 0 || f == 0) throw ShapeError("model spec: conv sizes must be >= 1");
          const std::size_t pad = k / 2;
          h = ag::conv_out_extent(h, k, st, pad);
          w = ag::conv_out_extent(w, k, st, pad);
          h = ag::conv_out_extent(h, s.pool, s.pool, 0);
          w = ag::conv_out_extent(w, s.pool, s.pool, 0);
          if (h == 0 || w == 0) {
            throw ShapeError("model spec: input " + std::to_string(rows) + "x" + std::to_string(s.input_frames) +
                             " collapses to zero size at conv layer " + std::to_string(l));
          }
          ConvLayer c;
          const std::string p = prefix + ".conv" + std::to_string(l);
          c.weight = add_param(p + ".weight", {f, ch, k, k}, kaiming_bound(ch * k * k));
          c.bias = add_zero_param(p + ".bias", {f});
          c.stride = st;
          c.pad = pad;
          trunk.convs.push_back(c);
          ch = f;
        }
        rep_width_ += ch * h * w;
      }
      trunks_.push_back(std::move(trunk));
    }
    hr_head_ = make_head("hr_head", rep_width_, static_cast<std::size_t>(kHrClasses));
    if (is_mtl(s.architecture)) mm_head_ = make_head("mm_head", rep_width_, 1);
  }

  Tensor trunk_2d(const Trunk& t, const Tensor& x) const {
    Tensor h = x;
    for (const auto& c : t.convs) {
      h = ag::conv2d(h, c.weight->tensor, c.bias->tensor, ag::Conv2dOptions{c.stride, c.stride, c.pad, c.pad});
      h = ag::relu(h);
      h = ag::maxpool2d(h, spec_.pool, spec_.pool, spec_.pool, spec_.pool);
    }
    return ag::flatten(h);
  }

  Tensor trunk_1d(const Trunk& t, const Tensor& x) const {
    const auto& c = t.convs.front();
    Tensor h = ag::relu(ag::conv1d(x, c.weight->tensor, c.bias->tensor, c.stride, c.pad));
    h = ag::transpose_last2(h);  // N x L x C
    for (const auto& l : t.lstms) h = ag::lstm_layer(h, l.w_ih->tensor, l.w_hh->tensor, l.bias->tensor);
    return ag::last_timestep(h);
  }

  Tensor head(const Head& h, const Tensor& x, bool training, Rng* rng) const {
    Tensor y = ag::relu(ag::linear(x, h.w1->tensor, h.b1->tensor));
    if (training && spec_.dropout > 0.0) y = ag::dropout(y, spec_.dropout, true, *rng);
    return ag::linear(y, h.w2->tensor, h.b2->tensor);
  }

  ModelSpec spec_;
  Rng rng_;
  std::vector<std::unique_ptr<Param>> params_;
  std::vector<Trunk> trunks_;
  Head hr_head_;
  std::optional<Head> mm_head_;
  std::size_t rep_width_ = 0;
};

}  // namespace pcgkit
