#include <gtest/gtest.h>

#include <fstream>

#include "pcgkit/run_config.hpp"
#include "support.hpp"

using namespace pcgkit;

TEST(RunConfig, DefaultsMatchDocumentedSetup) {
  const RunConfig c;
  const auto m = c.model();
  EXPECT_EQ(m.architecture, Architecture::Cnn2dMtl);
  EXPECT_EQ(m.input_frames, 494u);
  EXPECT_EQ(m.rows(m.features), 82u);
  const auto t = c.train();
  EXPECT_EQ(t.batch_size, 16u);
  EXPECT_DOUBLE_EQ(t.lr, 1e-3);
  EXPECT_TRUE(t.scheduler);
  EXPECT_FALSE(t.stop_mae);
  EXPECT_EQ(c.sweep().size(), 3u);
  EXPECT_EQ(c.ablation_subsets().size(), 7u);
  EXPECT_DOUBLE_EQ(c.baseline().frame_rate, 100.0);
  EXPECT_EQ(c.synth().n_subjects, 20u);
}

TEST(RunConfig, ParsesCommentsAndWhitespace) {
  const auto c = RunConfig::parse("# header\n\n  train.epochs = 7   # inline\nwindow.length=3\n");
  EXPECT_EQ(c.train().epochs, 7);
  EXPECT_EQ(c.model().input_frames, 294u);
}

TEST(RunConfig, UnknownKeyRejectedWithLineNumber) {
  try {
    RunConfig::parse("train.epochs = 3\n\ntrain.epoch = 4\n", "run.cfg");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("run.cfg:3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("train.epoch"), std::string::npos) << msg;
  }
}

TEST(RunConfig, TypeErrorsRejected) {
  EXPECT_THROW(RunConfig::parse("train.epochs = many\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("train.lr = 1e-3x\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("train.scheduler = maybe\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("model.conv_filters = 8,,16\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("features.selection = Mel+Chroma\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("model.architecture = resnet\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("just words\n"), ConfigError);
}

TEST(RunConfig, SemanticErrorsSurfaceOnUse) {
  auto c = RunConfig::parse("window.stride = 9\n");
  EXPECT_THROW(c.window(), ConfigError);
  c = RunConfig::parse("train.reduction = median\n");
  EXPECT_THROW(c.train(), ConfigError);
  c = RunConfig::parse("synth.subjects = 4\n");
  EXPECT_THROW(c.synth(), ConfigError);
  c = RunConfig::parse("sweep.configs = 1:1\n");
  EXPECT_THROW(c.sweep(), ConfigError);
}

TEST(RunConfig, OverridesWinAndAreValidated) {
  auto c = RunConfig::parse("train.epochs = 7\n");
  c.apply_override("train.epochs=9");
  EXPECT_EQ(c.train().epochs, 9);
  c.apply_override("synth.snr_db = inf");
  EXPECT_TRUE(std::isinf(c.synth().snr_db));
  EXPECT_THROW(c.apply_override("train.epochs"), ConfigError);
  EXPECT_THROW(c.apply_override("nope=1"), ConfigError);
  c.apply_override("train.stop_mae=5");
  EXPECT_EQ(c.train().stop_mae, 5.0);
}

TEST(RunConfig, HashTracksEffectiveValues) {
  const RunConfig a;
  auto b = RunConfig::parse("train.epochs = 100\n");
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
  b.apply_override("train.epochs=101");
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(RunConfig::parse(b.canonical()).hash(), b.hash());
}

TEST(RunConfig, SeedDerivesComponentSeeds) {
  const auto a = RunConfig::parse("seed = 1\n"), b = RunConfig::parse("seed = 2\n");
  EXPECT_NE(a.model().seed, b.model().seed);
  EXPECT_NE(a.train().seed, b.train().seed);
  EXPECT_NE(a.synth().seed, b.synth().seed);
  EXPECT_EQ(a.model().seed, RunConfig::parse("seed = 1\n").model().seed);
}

TEST(RunConfig, SweepTriples) {
  const auto c = RunConfig::parse("sweep.configs = 1:1:off, 0.5:2:on\n");
  const auto s = c.sweep();
  ASSERT_EQ(s.size(), 2u);
  EXPECT_FALSE(s[0].scheduler);
  EXPECT_EQ(s[1].w_hr, 0.5);
  EXPECT_EQ(s[1].w_mm, 2.0);
  EXPECT_TRUE(s[1].scheduler);
}

TEST(RunConfig, ModelSpecFileOverridesKeys) {
  testing_support::TempDir dir("speccfg");
  const auto path = dir.path() / "spec.json";
  std::ofstream(path) << R"({"conv_filters": [8, 16], "conv_kernels": [5, 3], "conv_strides": [2, 1], "fc_hidden": 32})";
  auto c = RunConfig::parse("model.fc_hidden = 64\nmodel.spec_file = " + path.string() + "\n");
  const auto m = c.model();
  EXPECT_EQ(m.conv_filters, (std::vector<std::size_t>{8, 16}));
  EXPECT_EQ(m.conv_strides, (std::vector<std::size_t>{2, 1}));
  EXPECT_EQ(m.fc_hidden, 32u);
  EXPECT_EQ(m.input_frames, 494u);

  std::ofstream(path) << R"({"widths": [8]})";
  EXPECT_THROW(c.model(), ConfigError);
  std::ofstream(path) << "{ not json";
  EXPECT_THROW(c.model(), ConfigError);
  c.apply_override("model.spec_file=" + (dir.path() / "missing.json").string());
  EXPECT_THROW(c.model(), ConfigError);
}

TEST(RunConfig, LoadsFromFile) {
  testing_support::TempDir dir("loadcfg");
  const auto path = dir.path() / "run.cfg";
  std::ofstream(path) << "train.epochs = 12\nmodel.architecture = tcnn-lstm\n";
  const auto c = RunConfig::load(path);
  EXPECT_EQ(c.train().epochs, 12);
  EXPECT_EQ(c.model().architecture, Architecture::TcnnLstm);
  EXPECT_THROW(RunConfig::load(dir.path() / "absent.cfg"), ConfigError);
}
