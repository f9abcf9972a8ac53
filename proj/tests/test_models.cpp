#include <gtest/gtest.h>

#include <cmath>

#include "pcgkit/autograd/loss.hpp"
#include "pcgkit/autograd/optim.hpp"
#include "pcgkit/checkpoint.hpp"
#include "pcgkit/models.hpp"
#include "support.hpp"

using namespace pcgkit;
using TF = ag::Tensor<float>;

namespace {

constexpr Architecture kAll[] = {Architecture::TcnnLstm, Architecture::Cnn2d, Architecture::Cnn2dFusion,
                                 Architecture::Cnn2dMtl, Architecture::TcnnLstmMtl};

// Reduced widths so gradient and overfit checks run in milliseconds.
ModelSpec small_spec(Architecture a, std::uint64_t seed = 3) {
  ModelSpec s;
  s.architecture = a;
  s.n_mels = 8;
  s.n_mfcc = 8;
  s.input_frames = 32;
  s.conv_filters = {4, 6};
  s.conv_kernels = {3, 3};
  s.conv_strides = {1, 1};
  s.tcnn_filters = 6;
  s.tcnn_kernel = 3;
  s.tcnn_stride = 2;
  s.lstm_hidden = 6;
  s.lstm_layers = 2;
  s.fc_hidden = 16;
  s.dropout = 0.0;
  s.seed = seed;
  return s;
}

template <class T>
std::vector<ag::Tensor<T>> random_inputs(const Model<T>& m, std::size_t batch, Rng& rng) {
  std::vector<ag::Tensor<T>> xs;
  for (std::size_t b = 0; b < m.branch_count(); ++b) {
    ag::Shape s{batch};
    for (auto d : m.input_shape(b)) s.push_back(d);
    std::vector<T> v(ag::numel(s));
    for (auto& x : v) x = static_cast<T>(rng.normal());
    xs.emplace_back(s, std::move(v));
  }
  return xs;
}

template <class T>
bool any_nonzero_grad(const std::vector<ag::Parameter<T>*>& ps) {
  for (const auto* p : ps) {
    if (!p->tensor.has_grad()) continue;
    for (auto g : p->tensor.grad()) {
      if (g != T(0)) return true;
    }
  }
  return false;
}

std::size_t head_params(std::size_t in, std::size_t hidden, std::size_t out) {
  return in * hidden + hidden + hidden * out + out;
}

}  // namespace

TEST(Models, DefaultInputShapes) {
  Rng rng(1);
  for (auto a : kAll) {
    ModelSpec s;
    s.architecture = a;
    Model<float> m(s);
    const auto xs = random_inputs(m, 1, rng);
    ag::NoGradGuard guard;
    const auto out = m.forward(xs, false);
    EXPECT_EQ(out.hr_logits.shape(), (ag::Shape{1, 141})) << to_string(a);
    EXPECT_EQ(out.mm_logit.has_value(), is_mtl(a));
    if (out.mm_logit) {
      EXPECT_EQ(out.mm_logit->shape(), (ag::Shape{1, 1}));
    }
  }
}

TEST(Models, ThreeSecondWindowShapes) {
  Rng rng(2);
  for (auto a : {Architecture::Cnn2d, Architecture::TcnnLstm}) {
    ModelSpec s;
    s.architecture = a;
    s.input_frames = 294;
    Model<float> m(s);
    const auto xs = random_inputs(m, 1, rng);
    ag::NoGradGuard guard;
    EXPECT_EQ(m.forward(xs, false).hr_logits.shape(), (ag::Shape{1, 141}));
  }
}

TEST(Models, SmallBatchShapes) {
  Rng rng(3);
  for (auto a : kAll) {
    Model<float> m(small_spec(a));
    const auto out = m.forward(random_inputs(m, 5, rng), false);
    EXPECT_EQ(out.hr_logits.shape(), (ag::Shape{5, 141}));
    if (out.mm_logit) {
      EXPECT_EQ(out.mm_logit->shape(), (ag::Shape{5, 1}));
    }
  }
}

TEST(Models, ParameterCountsFromLayerArithmetic) {
  // 82 x 494 input through five same-padded convs and 2x2 pools ends at 2 x 15.
  const std::size_t conv2d = (1 * 49 * 32 + 32) + (32 * 25 * 64 + 64) + (64 * 9 * 96 + 96) + (96 * 9 * 96 + 96) +
                             (96 * 9 * 64 + 64);
  const std::size_t rep = 64 * 2 * 15;
  ModelSpec s;
  EXPECT_EQ(Model<float>(s).representation_width(), rep);
  EXPECT_EQ(Model<float>(s).parameter_count(), conv2d + head_params(rep, 256, 141));

  s.architecture = Architecture::Cnn2dMtl;
  EXPECT_EQ(Model<float>(s).parameter_count(), conv2d + head_params(rep, 256, 141) + head_params(rep, 256, 1));

  // Two 41-row branches each end at 1 x 15.
  s.architecture = Architecture::Cnn2dFusion;
  EXPECT_EQ(Model<float>(s).representation_width(), 2u * 64 * 1 * 15);
  EXPECT_EQ(Model<float>(s).parameter_count(), 2 * conv2d + head_params(2 * 64 * 15, 256, 141));

  const std::size_t lstm = 2 * (4 * 64 * 64 + 4 * 64 * 64 + 4 * 64);
  const std::size_t tcnn = 64 * 82 * 5 + 64;
  s.architecture = Architecture::TcnnLstm;
  EXPECT_EQ(Model<float>(s).parameter_count(), tcnn + lstm + head_params(64, 256, 141));
  s.architecture = Architecture::TcnnLstmMtl;
  EXPECT_EQ(Model<float>(s).parameter_count(), tcnn + lstm + head_params(64, 256, 141) + head_params(64, 256, 1));
}

TEST(Models, ParameterNamesArePrefixed) {
  Model<float> m(small_spec(Architecture::Cnn2dMtl));
  for (const auto* p : m.parameters()) {
    const bool ok = p->name.starts_with("trunk") || p->name.starts_with("hr_head") || p->name.starts_with("mm_head");
    EXPECT_TRUE(ok) << p->name;
  }
  EXPECT_EQ(m.parameters("mm_head").size(), 4u);
  EXPECT_EQ(m.parameters("hr_head").size(), 4u);
}

TEST(Models, SeededConstructionIsDeterministic) {
  Rng rng(4);
  for (auto a : kAll) {
    Model<float> m1(small_spec(a, 9)), m2(small_spec(a, 9)), m3(small_spec(a, 10));
    const auto xs = random_inputs(m1, 3, rng);
    EXPECT_EQ(m1.forward(xs, false).hr_logits.values(), m2.forward(xs, false).hr_logits.values());
    EXPECT_NE(m1.forward(xs, false).hr_logits.values(), m3.forward(xs, false).hr_logits.values());
  }
}

TEST(Models, DropoutOnlyActsInTraining) {
  auto s = small_spec(Architecture::Cnn2d);
  s.dropout = 0.5;
  Model<float> m(s);
  Rng rng(5), d1(7), d2(7);
  const auto xs = random_inputs(m, 2, rng);
  EXPECT_EQ(m.forward(xs, false).hr_logits.values(), m.forward(xs, false).hr_logits.values());
  EXPECT_NE(m.forward(xs, true, &d1).hr_logits.values(), m.forward(xs, false).hr_logits.values());
  Rng d3(7);
  EXPECT_EQ(m.forward(xs, true, &d2).hr_logits.values(), m.forward(xs, true, &d3).hr_logits.values());
  EXPECT_THROW(m.forward(xs, true), ConfigError);
}

TEST(Models, FusionUsesBothBranches) {
  Model<double> m(small_spec(Architecture::Cnn2dFusion));
  ASSERT_EQ(m.branch_count(), 2u);
  EXPECT_EQ(m.input_shape(0), (ag::Shape{1, 9, 32}));
  EXPECT_EQ(m.input_shape(1), (ag::Shape{1, 9, 32}));
  Rng rng(6);
  auto xs = random_inputs(m, 2, rng);
  const std::vector<int> y{10, 70};
  ag::weighted_softmax_ce<double>(m.forward(xs, false).hr_logits, y, 1.0).backward();
  EXPECT_TRUE(any_nonzero_grad(m.parameters("trunk0")));
  EXPECT_TRUE(any_nonzero_grad(m.parameters("trunk1")));

  const auto base = m.forward(xs, false).hr_logits.values();
  for (auto& v : xs[1].values()) v += 0.5;
  EXPECT_NE(m.forward(xs, false).hr_logits.values(), base);
}

TEST(Models, MultiTaskHeadsAreIsolated) {
  for (auto a : {Architecture::Cnn2dMtl, Architecture::TcnnLstmMtl}) {
    Model<double> m(small_spec(a));
    Rng rng(7);
    const auto xs = random_inputs(m, 3, rng);
    const std::vector<int> y{5, 50, 100};
    const std::vector<std::optional<int>> mm{1, 0, 1};

    auto out = m.forward(xs, false);
    ag::weighted_softmax_ce<double>(out.hr_logits, y, 1.0).backward();
    EXPECT_FALSE(any_nonzero_grad(m.parameters("mm_head")));
    EXPECT_TRUE(any_nonzero_grad(m.parameters("hr_head")));
    EXPECT_TRUE(any_nonzero_grad(m.parameters("trunk")));

    m.zero_grad();
    out = m.forward(xs, false);
    ag::masked_sigmoid_bce<double>(*out.mm_logit, mm, 1.0).backward();
    EXPECT_FALSE(any_nonzero_grad(m.parameters("hr_head")));
    EXPECT_TRUE(any_nonzero_grad(m.parameters("mm_head")));
  }
}

TEST(Models, FullyMaskedBatchGivesNoMurmurGradient) {
  Model<double> m(small_spec(Architecture::Cnn2dMtl));
  Rng rng(8);
  const auto xs = random_inputs(m, 3, rng);
  const std::vector<int> y{5, 50, 100};
  const std::vector<std::optional<int>> mm(3, std::nullopt);
  const auto out = m.forward(xs, false);
  ag::add(ag::weighted_softmax_ce<double>(out.hr_logits, y, 1.0), ag::masked_sigmoid_bce<double>(*out.mm_logit, mm, 1.0))
      .backward();
  EXPECT_FALSE(any_nonzero_grad(m.parameters("mm_head")));
}

TEST(Models, WrongInputShapeIsShapeError) {
  Model<float> m(small_spec(Architecture::Cnn2d));
  EXPECT_THROW(m.forward({TF::zeros({1, 1, 17, 32})}, false), ShapeError);
  EXPECT_THROW(m.forward({}, false), ShapeError);
  Model<float> f(small_spec(Architecture::Cnn2dFusion));
  EXPECT_THROW(f.forward({TF::zeros({1, 1, 9, 32})}, false), ShapeError);
}

TEST(Models, InvalidSpecsAreShapeErrors) {
  auto s = small_spec(Architecture::Cnn2d);
  s.input_frames = 3;
  EXPECT_THROW(Model<float>{s}, ShapeError);
  s = small_spec(Architecture::Cnn2d);
  s.conv_kernels = {3};
  EXPECT_THROW(Model<float>{s}, ShapeError);
  s = small_spec(Architecture::Cnn2dFusion);
  s.features = FeatureSelection{FeatureKind::Mel};
  EXPECT_THROW(Model<float>{s}, ShapeError);
  s = small_spec(Architecture::TcnnLstm);
  s.lstm_hidden = 0;
  EXPECT_THROW(Model<float>{s}, ShapeError);
  s = small_spec(Architecture::Cnn2d);
  s.dropout = 1.0;
  EXPECT_THROW(Model<float>{s}, ShapeError);
}

TEST(ModelSpec, JsonRoundTrip) {
  auto s = small_spec(Architecture::TcnnLstmMtl, 77);
  s.features = FeatureSelection{FeatureKind::Mfcc, FeatureKind::Rms};
  const auto back = model_spec_from_json(nlohmann::json::parse(to_json(s).dump()));
  EXPECT_EQ(to_json(back), to_json(s));
  EXPECT_EQ(back.architecture, Architecture::TcnnLstmMtl);
  EXPECT_EQ(back.seed, 77u);
}

TEST(ModelSpec, UnknownKeyAndBadTypesRejected) {
  EXPECT_THROW(model_spec_from_json(nlohmann::json{{"filters", 3}}), ConfigError);
  EXPECT_THROW(model_spec_from_json(nlohmann::json{{"fc_hidden", "wide"}}), ConfigError);
  EXPECT_THROW(model_spec_from_json(nlohmann::json{{"architecture", "resnet"}}), ConfigError);
  EXPECT_THROW(model_spec_from_json(nlohmann::json::array()), ConfigError);
}

TEST(ModelSpec, ArchitectureNamesRoundTrip) {
  for (auto a : kAll) EXPECT_EQ(architecture_from_string(to_string(a)), a);
}

TEST(Models, OverfitsTinyBatch) {
  for (auto a : kAll) {
    Model<float> m(small_spec(a, 11));
    Rng rng(12);
    const auto xs = random_inputs(m, 8, rng);
    const std::vector<int> y{0, 20, 40, 60, 80, 100, 120, 140};
    const std::vector<std::optional<int>> mm{1, 0, 1, 0, std::nullopt, 1, 0, 1};
    auto params = m.parameters();
    ag::Adam<float> adam;
    double loss = 1e9;
    for (int epoch = 0; epoch < 200 && loss >= 0.1; ++epoch) {
      m.zero_grad();
      const auto out = m.forward(xs, true);
      auto l = ag::weighted_softmax_ce<float>(out.hr_logits, y, 1.0, {}, ag::Reduction::Mean);
      if (out.mm_logit) l = ag::add(l, ag::masked_sigmoid_bce<float>(*out.mm_logit, mm, 1.0, ag::Reduction::Mean));
      loss = l.item();
      l.backward();
      adam.step(params, 1e-2);
    }
    EXPECT_LT(loss, 0.1) << to_string(a);
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  testing_support::TempDir dir("ckpt");
  for (auto a : kAll) {
    Model<float> m(small_spec(a, 21));
    NormalizationProfile norm{{0.5, -1.25}, {2.0, 0.125}};
    nlohmann::ordered_json meta{{"epoch", 7}, {"val_mae", 1.5}};
    const auto ck = capture(m, norm, meta);
    const auto path = dir.path() / "m.pcgm";
    write_checkpoint(path, ck);
    const auto back = read_checkpoint(path);
    EXPECT_EQ(back.tensors, ck.tensors);
    EXPECT_EQ(back.normalization.mean, norm.mean);
    EXPECT_EQ(back.normalization.stddev, norm.stddev);
    EXPECT_EQ(back.meta, meta);
    EXPECT_EQ(to_json(back.spec), to_json(m.spec()));
    EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ck));

    auto loaded = load_model<float>(back);
    Rng rng(22);
    const auto xs = random_inputs(m, 2, rng);
    EXPECT_EQ(loaded.forward(xs, false).hr_logits.values(), m.forward(xs, false).hr_logits.values());
  }
}

TEST(Checkpoint, CorruptImagesAreFormatErrors) {
  Model<float> m(small_spec(Architecture::Cnn2d));
  const auto img = encode_checkpoint(capture(m, {}));
  EXPECT_THROW(decode_checkpoint(img.substr(0, img.size() - 3)), FormatError);
  EXPECT_THROW(decode_checkpoint(img + "x"), FormatError);
  auto bad = img;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
  bad = img;
  bad[4] = 9;
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
  bad = img;
  bad[10] = '!';
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
  EXPECT_THROW(decode_checkpoint(""), FormatError);
}

TEST(Checkpoint, RestoreIntoMismatchedModelFails) {
  Model<float> m(small_spec(Architecture::Cnn2d));
  Model<float> other(small_spec(Architecture::Cnn2dMtl));
  EXPECT_THROW(restore(other, capture(m, {})), FormatError);
}
