#include <gtest/gtest.h>

#include <random>

#include "prosody_rl/prosody.hpp"
#include "test_util.hpp"

using namespace prosody_rl;

namespace {

// Independent pitch oracle: lag of the highest normalized autocorrelation
// peak in the search band, refined parabolically.
double autocorr_pitch(const std::vector<double>& x, double sr, double fmin, double fmax) {
  const auto lo = static_cast<std::size_t>(sr / fmax);
  const auto hi = static_cast<std::size_t>(sr / fmin);
  const std::size_t n = x.size() - hi - 1;
  auto ac = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * x[i + lag];
    return s;
  };
  std::vector<double> r(hi + 2, 0.0);
  for (std::size_t lag = lo - 1; lag <= hi + 1; ++lag) r[lag] = ac(lag);
  // first local maximum above 0.9 of the global maximum avoids octave errors
  double gmax = 0.0;
  for (std::size_t lag = lo; lag <= hi; ++lag) gmax = std::max(gmax, r[lag]);
  std::size_t best = lo;
  for (std::size_t lag = lo; lag <= hi; ++lag) {
    if (r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1] && r[lag] > 0.9 * gmax) {
      best = lag;
      break;
    }
  }
  const double a = r[best - 1], b = r[best], c = r[best + 1];
  const double shift = 0.5 * (a - c) / (a - 2 * b + c);
  return sr / (static_cast<double>(best) + shift);
}

}  // namespace

TEST(Energy, SpecExamples) {
  EXPECT_EQ(energy(std::vector<double>{1, -1, 1, -1}), 1.0);
  EXPECT_EQ(energy(std::vector<double>{0, 0, 0}), 0.0);
  EXPECT_EQ(energy(std::vector<double>{2, 0, 0, 0}), 1.0);
}

TEST(Loudness, SpecExamples) {
  EXPECT_EQ(loudness(std::vector<double>{1, -1, 1, -1}), 1.0);
  EXPECT_EQ(loudness(std::vector<double>{2, 0, 0, 0}), 0.5);
  EXPECT_EQ(loudness(std::vector<double>{-0.5, 0.5}), 0.5);
}

TEST(Energy, EmptyFrameThrows) {
  try {
    energy(std::vector<double>{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyInput);
  }
  EXPECT_THROW(loudness(std::vector<double>{}), Error);
}

TEST(Energy, SignFlipAndAmplitudeScaling) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(64);
    for (auto& v : x) v = u(rng);
    std::vector<double> neg = x;
    for (auto& v : neg) v = -v;
    EXPECT_EQ(energy(x), energy(neg));
    EXPECT_EQ(loudness(x), loudness(neg));
    const double A = 0.1 + 2.0 * (trial % 5);
    std::vector<double> scaled = x;
    for (auto& v : scaled) v *= A;
    EXPECT_NEAR(energy(scaled), A * A * energy(x), 1e-12 * A * A);
    EXPECT_NEAR(loudness(scaled), A * loudness(x), 1e-12 * A);
  }
}

TEST(Yin, Sine440MatchesOracle) {
  const auto x = testutil::sine(440.0, 0.5, 2048);
  const auto f = yin_pitch(x, 22050, 80, 1000);
  ASSERT_TRUE(f);
  EXPECT_NEAR(*f, 440.0, 5.0);
  EXPECT_NEAR(*f, autocorr_pitch(x, 22050, 80, 1000), 5.0);
}

TEST(Yin, Sine220MatchesOracle) {
  const auto x = testutil::sine(220.0, 0.5, 2048);
  const auto f = yin_pitch(x, 22050, 80, 1000);
  ASSERT_TRUE(f);
  EXPECT_NEAR(*f, 220.0, 3.0);
  EXPECT_NEAR(*f, autocorr_pitch(x, 22050, 80, 1000), 3.0);
}

TEST(Yin, WhiteNoiseIsUnvoiced) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0, 0.3);
  std::vector<double> x(2048);
  for (auto& v : x) v = n(rng);
  EXPECT_FALSE(yin_pitch(x, 22050, 80, 1000, 0.1));
}

TEST(Yin, PureTonesWithinTwoPercentAnyPhase) {
  for (double f = 100.0; f <= 800.0; f += 25.0) {
    for (double phase : {0.0, 0.7, 2.1, 4.4}) {
      const auto x = testutil::sine(f, 0.4, 2048, 22050, phase);
      const auto est = yin_pitch(x, 22050, 80, 1000);
      ASSERT_TRUE(est) << f;
      EXPECT_NEAR(*est, f, 0.02 * f) << "f=" << f << " phase=" << phase;
    }
  }
}

TEST(Yin, InvalidParams) {
  const auto x = testutil::sine(200, 0.5, 2048);
  EXPECT_THROW(yin_pitch(x, 22050, 400, 200), Error);
  EXPECT_THROW(yin_pitch(std::vector<double>(100, 0.0), 22050, 80, 400), Error);
  try {
    yin_pitch(x, 22050, 400, 400);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InvalidParams);
  }
}

TEST(ExtractFeatures, ConstantTone) {
  AudioBuffer a{testutil::sine(440.0, 0.5, 22050), 22050};
  FramingConfig cfg;
  cfg.f_max = 1000;
  const auto f = extract_features(a, 0.0, 1.0, cfg);
  EXPECT_NEAR(f.pitch_mean, 440.0, 5.0);
  EXPECT_NEAR(f.pitch_max, 440.0, 5.0);
  // sine energy = A^2 / 2; tail frames are shorter but still whole-ish cycles
  EXPECT_NEAR(f.energy_mean, 0.125, 0.005);
  EXPECT_NEAR(f.energy_max, f.energy_mean, 0.005);
  EXPECT_NEAR(f.duration, 1.0, 1e-12);
  EXPECT_FALSE(f.voiceless);
}

TEST(ExtractFeatures, RampedToneHasMaxAboveMean) {
  AudioBuffer a{testutil::sine(200.0, 1.0, 22050), 22050};
  for (std::size_t i = 0; i < a.samples.size(); ++i) a.samples[i] *= static_cast<double>(i) / a.samples.size();
  const auto f = extract_features(a, 0.0, 1.0);
  EXPECT_GT(f.energy_max, f.energy_mean);
  EXPECT_GT(f.loudness_max, f.loudness_mean);
}

TEST(ExtractFeatures, HalfSecondHasTwentyOneFrames) {
  AudioBuffer a{testutil::sine(200.0, 0.3, 22050), 22050};
  const auto f = extract_features(a, 0.2, 0.7);
  // 0.5 s = 11025 samples -> floor(11025 / 512) = 21 frames
  EXPECT_NEAR(f.energy_total, 21.0 * f.energy_mean, 1e-12);
  EXPECT_GE(f.energy_total, f.energy_max);
  EXPECT_GE(f.energy_max, f.energy_mean);
}

TEST(ExtractFeatures, SilenceIsVoiceless) {
  AudioBuffer a{std::vector<double>(22050, 0.0), 22050};
  const auto f = extract_features(a, 0.0, 0.5);
  EXPECT_TRUE(f.voiceless);
  EXPECT_EQ(f.pitch_mean, 0.0);
  EXPECT_EQ(f.pitch_max, 0.0);
}

TEST(ExtractFeatures, DeterministicAndNonNegative) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 0.2);
  AudioBuffer a{testutil::sine(180.0, 0.3, 22050), 22050};
  for (auto& v : a.samples) v += n(rng);
  const auto f1 = extract_features(a, 0.1, 0.9);
  const auto f2 = extract_features(a, 0.1, 0.9);
  EXPECT_EQ(to_json(f1).dump(), to_json(f2).dump());
  for (double v : {f1.duration, f1.pitch_mean, f1.pitch_max, f1.energy_mean, f1.energy_max, f1.energy_total,
                   f1.loudness_mean, f1.loudness_max})
    EXPECT_GE(v, 0.0);
}

TEST(ExtractFeatures, BoundariesOutsideAudioThrow) {
  AudioBuffer a{std::vector<double>(1000, 0.1), 22050};
  EXPECT_THROW(extract_features(a, 0.0, 1.0), Error);
  EXPECT_THROW(extract_features(a, 0.02, 0.01), Error);
}

TEST(Segment, SilenceOnlyIsUnmatched) {
  AudioBuffer a{std::vector<double>(22050 * 2, 0.0), 22050};
  const std::vector<WordLabel> labels{{Word::Yes, 1.0}};
  try {
    segment_utterances(a, labels);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnmatchedLabel);
    EXPECT_NE(std::string(e.what()).find("yes"), std::string::npos);
  }
}

TEST(Segment, SingleBurstBoundariesWithinOneHop) {
  const auto a = testutil::burst_audio(3.0, {{1.0, 1.5}});
  const std::vector<WordLabel> labels{{Word::Yes, 1.1}};
  const auto recs = segment_utterances(a, labels);
  ASSERT_EQ(recs.size(), 1u);
  const double hop = 512.0 / 22050.0;
  EXPECT_NEAR(recs[0].t_start, 1.0, hop);
  EXPECT_NEAR(recs[0].t_end, 1.5, hop);
  EXPECT_EQ(recs[0].word, Word::Yes);
  EXPECT_NEAR(recs[0].features.pitch_mean, 200.0, 4.0);
}

TEST(Segment, TwoBurstsInTimeOrder) {
  const auto a = testutil::burst_audio(4.0, {{0.5, 0.9}, {2.5, 3.0}});
  const std::vector<WordLabel> labels{{Word::No, 2.6}, {Word::Yes, 0.6}};
  const auto recs = segment_utterances(a, labels);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_LT(recs[0].t_end, recs[1].t_start);
  EXPECT_EQ(recs[0].word, Word::Yes);
  EXPECT_EQ(recs[1].word, Word::No);
}

TEST(Segment, LabelTooFarFromBurst) {
  const auto a = testutil::burst_audio(5.0, {{0.5, 0.9}});
  const std::vector<WordLabel> labels{{Word::Yes, 4.0}};
  EXPECT_THROW(segment_utterances(a, labels), Error);
}

TEST(Repetition, SpecExamples) {
  auto rec = [](Word w, double t0, double t1) { return UtteranceRecord{w, t0, t1, {}}; };
  auto r1 = detect_repetition({rec(Word::Yes, 0, 0.4), rec(Word::Yes, 0.7, 1.0)}, 1.0);
  EXPECT_EQ(r1[0].features.repetition, 1);
  EXPECT_EQ(r1[1].features.repetition, 1);
  auto r2 = detect_repetition({rec(Word::Yes, 0, 0.4), rec(Word::No, 0.5, 0.8), rec(Word::Yes, 0.9, 1.2)});
  for (const auto& r : r2) EXPECT_EQ(r.features.repetition, 0);
  auto r3 = detect_repetition({rec(Word::No, 0, 0.4), rec(Word::No, 0.9, 1.2), rec(Word::No, 1.7, 2.0)});
  for (const auto& r : r3) EXPECT_EQ(r.features.repetition, 1);
  auto r4 = detect_repetition({rec(Word::Yes, 0, 0.4), rec(Word::Yes, 2.0, 2.4)});
  EXPECT_EQ(r4[0].features.repetition, 0);
  EXPECT_EQ(r4[1].features.repetition, 0);
}

TEST(SignedFeedback, SpecExamples) {
  const SpeakerBaseline b{200, 20, 0.01, 0.002, 0.08, 0.01};
  ProsodyFeatures f;
  f.pitch_mean = 200;
  f.energy_mean = 0.01;
  f.loudness_mean = 0.08;
  EXPECT_DOUBLE_EQ(signed_feedback_value(f, Word::Yes, b), 3.0);
  EXPECT_DOUBLE_EQ(signed_feedback_value(f, Word::No, b), -3.0);
  f.pitch_mean = 220;
  f.energy_mean = 0.012;
  f.loudness_mean = 0.09;
  EXPECT_NEAR(signed_feedback_value(f, Word::No, b), -4.0, 1e-12);
}

TEST(SignedFeedback, FloorAndAntisymmetry) {
  const SpeakerBaseline b{200, 20, 0.01, 0.002, 0.08, 0.01};
  ProsodyFeatures quiet;
  quiet.pitch_mean = 0;
  quiet.energy_mean = 0;
  quiet.loudness_mean = 0;
  EXPECT_DOUBLE_EQ(signed_feedback_value(quiet, Word::Yes, b), 0.1);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 400);
  for (int i = 0; i < 50; ++i) {
    ProsodyFeatures f;
    f.pitch_mean = u(rng);
    f.energy_mean = u(rng) / 1e4;
    f.loudness_mean = u(rng) / 1e3;
    EXPECT_EQ(signed_feedback_value(f, Word::Yes, b), -signed_feedback_value(f, Word::No, b));
    EXPECT_GE(std::abs(signed_feedback_value(f, Word::Yes, b)), 0.1);
  }
}

TEST(SignedFeedback, ZeroStdIsDegenerate) {
  const SpeakerBaseline b{200, 0, 0.01, 0.002, 0.08, 0.01};
  try {
    signed_feedback_value({}, Word::Yes, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DegenerateBaseline);
  }
}

TEST(Baseline, UnvaryingReadingIsDegenerate) {
  // Silence: no speech frames, so every standard deviation is zero.
  AudioBuffer a{std::vector<double>(22050 * 2, 0.0), 22050};
  EXPECT_THROW(compute_baseline(a), Error);
}

TEST(Baseline, VaryingReadingHasPositiveStd) {
  AudioBuffer a;
  for (int k = 0; k < 6; ++k) {
    const auto seg = testutil::sine(150.0 + 20.0 * k, 0.1 + 0.05 * k, 11025);
    a.samples.insert(a.samples.end(), seg.begin(), seg.end());
    a.samples.insert(a.samples.end(), 5000, 0.0);
  }
  const auto b = compute_baseline(a);
  EXPECT_GT(b.pitch_std, 0.0);
  EXPECT_GT(b.energy_std, 0.0);
  EXPECT_GT(b.loudness_std, 0.0);
  EXPECT_GT(b.pitch_mean, 150.0);
  EXPECT_LT(b.pitch_mean, 260.0);
}

TEST(Wav, RoundTripAndRejectsStereo) {
  AudioBuffer a{testutil::sine(300, 0.5, 1000), 22050};
  const auto bytes = serialize_wav(a);
  const auto back = parse_wav(bytes);
  ASSERT_EQ(back.samples.size(), a.samples.size());
  EXPECT_EQ(back.sample_rate, 22050);
  for (std::size_t i = 0; i < a.samples.size(); ++i) EXPECT_NEAR(back.samples[i], a.samples[i], 1.0 / 32767);
  auto stereo = bytes;
  stereo[22] = 2;  // channel count
  EXPECT_THROW(parse_wav(stereo), Error);
}

TEST(Jsonl, UtteranceRowHasSixDecimals) {
  UtteranceRecord r{Word::No, 1.0, 1.5, {}};
  r.features.duration = 0.5;
  r.features.pitch_mean = 123.4567891;
  const auto row = utterance_jsonl_row(r);
  EXPECT_NE(row.find("\"pitch_mean\":123.456789"), std::string::npos);
  const auto back = utterance_from_json(nlohmann::json::parse(row));
  EXPECT_EQ(back.word, Word::No);
  EXPECT_NEAR(back.features.pitch_mean, 123.456789, 1e-9);
}

TEST(Words, Parse) {
  EXPECT_EQ(parse_word("yes"), Word::Yes);
  EXPECT_EQ(parse_word("NO"), Word::No);
  EXPECT_THROW(parse_word("maybe"), Error);
}
