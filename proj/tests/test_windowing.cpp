#include <gtest/gtest.h>

#include <cmath>

#include "pcgkit/synth.hpp"
#include "pcgkit/windowing.hpp"

using namespace pcgkit;

namespace {

// Beats of period `rr` tiling [start, end) as S1/Systole/S2/Diastole.
SegmentationAnnotation beats(double start, double end, double rr) {
  SegmentationAnnotation ann;
  for (double t = start; t + 1e-12 < end; t += rr) {
    const double e = std::min(t + rr, end);
    const double q = (e - t) / 4.0;
    ann.intervals.push_back({t, t + q, HeartState::S1});
    ann.intervals.push_back({t + q, t + 2 * q, HeartState::Systole});
    ann.intervals.push_back({t + 2 * q, t + 3 * q, HeartState::S2});
    ann.intervals.push_back({t + 3 * q, e, HeartState::Diastole});
  }
  return ann;
}

AudioRecording silence(double seconds, int rate = 16000) {
  AudioRecording r;
  r.sample_rate = rate;
  r.samples.assign(static_cast<std::size_t>(std::llround(seconds * rate)), 0.0);
  r.recording_id = "r";
  r.subject_id = "s";
  return r;
}

}  // namespace

TEST(AnnotatedSpans, SingleRun) {
  const auto spans = annotated_spans(beats(0.0, 12.0, 1.0));
  ASSERT_EQ(spans.size(), 1u);
  EXPECT_NEAR(spans[0].first, 0.0, 1e-12);
  EXPECT_NEAR(spans[0].second, 12.0, 1e-9);
}

TEST(AnnotatedSpans, ShortRunDropped) {
  auto ann = beats(0.0, 4.0, 1.0);
  const auto tail = beats(6.0, 20.0, 1.0);
  ann.intervals.insert(ann.intervals.end(), tail.intervals.begin(), tail.intervals.end());
  const auto spans = annotated_spans(ann);
  ASSERT_EQ(spans.size(), 1u);
  EXPECT_NEAR(spans[0].first, 6.0, 1e-12);
  EXPECT_NEAR(spans[0].second, 20.0, 1e-9);
}

TEST(AnnotatedSpans, AllUnannotatedIsEmpty) {
  SegmentationAnnotation ann;
  ann.intervals.push_back({0.0, 30.0, HeartState::Unannotated});
  EXPECT_TRUE(annotated_spans(ann).empty());
}

TEST(AnnotatedSpans, UnannotatedRowsSplitRuns) {
  auto ann = beats(0.0, 6.0, 1.0);
  ann.intervals.push_back({6.0, 7.0, HeartState::Unannotated});
  const auto tail = beats(7.0, 13.0, 1.0);
  ann.intervals.insert(ann.intervals.end(), tail.intervals.begin(), tail.intervals.end());
  EXPECT_EQ(annotated_spans(ann).size(), 2u);
}

TEST(AnnotatedSpans, SubMillisecondGapMerges) {
  auto ann = beats(0.0, 3.0, 1.0);
  const auto tail = beats(3.0005, 6.0, 1.0);
  ann.intervals.insert(ann.intervals.end(), tail.intervals.begin(), tail.intervals.end());
  EXPECT_EQ(annotated_spans(ann).size(), 1u);
}

TEST(MeanHr, UniformOneSecond) {
  const std::vector<double> on{0.0, 1.0, 2.0, 3.0, 4.0};
  EXPECT_DOUBLE_EQ(compute_mean_hr(on), 60.0);
}

TEST(MeanHr, UniformHalfSecond) {
  const std::vector<double> on{0.0, 0.5, 1.0, 1.5};
  EXPECT_DOUBLE_EQ(compute_mean_hr(on), 120.0);
}

TEST(MeanHr, IrregularByHand) {
  const std::vector<double> on{0.0, 0.6, 1.35, 2.15, 2.65};
  EXPECT_NEAR(compute_mean_hr(on), (100.0 + 80.0 + 75.0 + 120.0) / 4.0, 1e-9);
  EXPECT_NEAR(compute_mean_hr(on), 93.75, 1e-9);
}

TEST(MeanHr, FewerThanTwoOnsetsIsInsufficient) {
  const std::vector<double> one{1.0};
  EXPECT_THROW(compute_mean_hr(one), InsufficientDataError);
  EXPECT_THROW(compute_mean_hr(std::vector<double>{}), InsufficientDataError);
}

TEST(HrClass, Boundaries) {
  EXPECT_EQ(hr_to_class(40.0), 0);
  EXPECT_EQ(hr_to_class(180.0), 140);
  EXPECT_EQ(hr_to_class(93.75), 54);
  EXPECT_EQ(hr_to_class(38.2), 0);
  EXPECT_EQ(hr_to_class(250.0), 140);
  EXPECT_EQ(hr_to_class(60.5), 21);
  EXPECT_EQ(hr_to_class(60.4999), 20);
  EXPECT_EQ(class_to_bpm(54), 94);
}

TEST(HrClass, NonFiniteIsValidationError) {
  EXPECT_THROW(hr_to_class(std::nan("")), ValidationError);
  EXPECT_THROW(hr_to_class(INFINITY), ValidationError);
  EXPECT_THROW(hr_to_class(-5.0), ValidationError);
}

TEST(SlideWindows, TwelveSecondSpanGivesEightWindows) {
  const auto rec = silence(12.0);
  const auto snippets = slide_windows(rec, beats(0.0, 12.0, 1.0), {"r", "s", Murmur::Present}, {});
  ASSERT_EQ(snippets.size(), 8u);
  for (std::size_t k = 0; k < snippets.size(); ++k) {
    EXPECT_NEAR(snippets[k].window_start, static_cast<double>(k), 1e-12);
    EXPECT_EQ(snippets[k].samples.size(), 80000u);
    EXPECT_EQ(snippets[k].murmur, Murmur::Present);
    EXPECT_EQ(snippets[k].subject_id, "s");
    EXPECT_DOUBLE_EQ(snippets[k].hr_bpm, 60.0);
    EXPECT_EQ(snippets[k].hr_class, 20);
  }
}

TEST(SlideWindows, ExactlyFiveSecondSpanGivesOneWindow) {
  EXPECT_EQ(slide_windows(silence(5.0), beats(0.0, 5.0, 1.0), {"r", "s", Murmur::Absent}, {}).size(), 1u);
}

TEST(SlideWindows, WindowWithOneOnsetIsSkipped) {
  // Beat period 4 s: only windows starting on a beat hold two S1 onsets.
  const auto out = slide_windows(silence(13.0), beats(0.0, 13.0, 4.0), {"r", "s", Murmur::Absent}, {});
  std::vector<double> starts;
  for (const auto& s : out) starts.push_back(s.window_start);
  EXPECT_EQ(starts, (std::vector<double>{0.0, 4.0, 8.0}));
}

TEST(SlideWindows, OnsetAtWindowEndBelongsToNextWindow) {
  const std::vector<double> expected{0.0, 1.0, 2.0, 3.0, 4.0};
  const auto ann = beats(0.0, 10.0, 1.0);
  EXPECT_EQ(s1_onsets_in(ann, 0.0, 5.0), expected);
}

TEST(SlideWindows, WindowCountLaw) {
  for (double len : {5.0, 5.5, 7.25, 12.0, 20.0, 31.0}) {
    for (double stride : {0.5, 1.0, 2.5}) {
      WindowConfig cfg;
      cfg.stride = stride;
      cfg.sample_rate = 1000;
      const auto out = slide_windows(silence(len, 1000), beats(0.0, len, 0.5), {"r", "s", Murmur::Absent}, cfg);
      const auto expected = static_cast<std::size_t>(std::floor((len - 5.0) / stride + 1e-9)) + 1;
      EXPECT_EQ(out.size(), expected) << len << " " << stride;
      for (const auto& s : out) EXPECT_EQ(s.samples.size(), cfg.samples_per_window());
    }
  }
}

TEST(SlideWindows, SpanAnchoredNotFileAnchored) {
  SegmentationAnnotation ann;
  ann.intervals.push_back({0.0, 2.3, HeartState::Unannotated});
  const auto b = beats(2.3, 9.3, 1.0);
  ann.intervals.insert(ann.intervals.end(), b.intervals.begin(), b.intervals.end());
  const auto out = slide_windows(silence(10.0), ann, {"r", "s", Murmur::Absent}, {});
  ASSERT_EQ(out.size(), 3u);
  EXPECT_NEAR(out[0].window_start, 2.3, 1e-12);
}

TEST(SlideWindows, RateMismatchIsConfigError) {
  EXPECT_THROW(slice_window(silence(6.0, 22050), 0.0, {}), ConfigError);
}

TEST(WindowConfig, StrideBounds) {
  WindowConfig c;
  c.stride = 6.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.stride = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.stride = 5.0;
  EXPECT_NO_THROW(c.validate());
}

TEST(SnippetIndex, JsonRoundTrip) {
  SnippetLabel s{"1_AV", "1", 3.0, 93.75, 54, Murmur::Unknown};
  const auto [back, split] = snippet_from_json(nlohmann::json::parse(snippet_json(s, Split::Validation).dump()));
  EXPECT_EQ(back.recording_id, "1_AV");
  EXPECT_EQ(back.hr_class, 54);
  EXPECT_DOUBLE_EQ(back.hr_bpm, 93.75);
  EXPECT_EQ(back.murmur, Murmur::Unknown);
  EXPECT_EQ(split, Split::Validation);
}

TEST(SynthLabels, MeanHrRecoversConfiguredRate) {
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    SynthConfig c;
    c.hr = rng.uniform(40.0, 180.0);
    c.duration = 8.0;
    c.sample_rate = 2000;
    c.murmur_high = 900.0;
    const auto rec = generate_pcg(c);
    const double hr = compute_mean_hr(rec.s1_onsets);
    EXPECT_LE(std::abs(hr - c.hr) / c.hr, 1e-9) << c.hr;
  }
}
