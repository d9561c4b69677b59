#include <aimp/dataset.hpp>
#include <aimp/impair_synth.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

using namespace aimp;

namespace {

AudioClip noise_clip(std::uint64_t seed, std::size_t n, double amp) {
  Rng rng(seed);
  AudioClip c;
  c.samples.resize(n);
  for (double& x : c.samples) x = amp * rng.normal();
  return c;
}

double power(const std::vector<double>& x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

Errc error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return Errc::InvalidConfig;
}

// Independent Schroeder estimate: backward energy integral in dB, least-squares
// line over the -5..-35 dB span, extrapolated to -60 dB.
double oracle_rt60_ms(const std::vector<double>& h, int fs) {
  std::vector<long double> edc(h.size() + 1, 0.0L);
  for (std::size_t i = h.size(); i-- > 0;) edc[i] = edc[i + 1] + static_cast<long double>(h[i]) * h[i];
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double db = 10.0 * std::log10(static_cast<double>(edc[i] / edc[0]));
    if (db <= -5.0 && db >= -35.0) {
      xs.push_back(static_cast<double>(i) / fs);
      ys.push_back(db);
    }
  }
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i] / n, my += ys[i] / n;
  double num = 0, den = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) num += (xs[i] - mx) * (ys[i] - my), den += (xs[i] - mx) * (xs[i] - mx);
  return -60.0 / (num / den) * 1000.0;
}

}  // namespace

TEST(ImpairmentClass, StableCodes) {
  EXPECT_EQ(code(ImpairmentClass::BackgroundNoise), 0);
  EXPECT_EQ(code(ImpairmentClass::Reverb), 1);
  EXPECT_EQ(code(ImpairmentClass::SpeechDistortion), 2);
  EXPECT_EQ(code(ImpairmentClass::LowVolume), 3);
  EXPECT_EQ(code(ImpairmentClass::NoImpairment), 4);
  EXPECT_EQ(kNumClasses, 5);
  EXPECT_THROW(class_from_code(5), Error);
}

TEST(MixAtSnr, RecoversTargetAcrossGrid) {
  const AudioClip speech = noise_clip(1, 16000, 0.01);
  const AudioClip noise = noise_clip(2, 5000, 0.03);  // shorter: exercises tiling
  for (int snr = 0; snr <= 30; snr += 5) {
    const AudioClip mixed = mix_at_snr(speech, noise, snr);
    std::vector<double> scaled_noise(speech.size());
    for (std::size_t i = 0; i < speech.size(); ++i) scaled_noise[i] = mixed.samples[i] - speech.samples[i];
    EXPECT_NEAR(10.0 * std::log10(power(speech.samples) / power(scaled_noise)), snr, 1e-6) << snr;
  }
}

TEST(MixAtSnr, EqualPowerScaleFactors) {
  const AudioClip speech = noise_clip(3, 8000, 0.02);
  AudioClip noise = noise_clip(4, 8000, 0.02);
  const double g = std::sqrt(power(speech.samples) / power(noise.samples));
  for (double& x : noise.samples) x *= g;
  EXPECT_NEAR(noise_gain_for_snr(speech.samples, noise.samples, 0.0), 1.0, 1e-9);
  EXPECT_NEAR(noise_gain_for_snr(speech.samples, noise.samples, 20.0), 0.1, 1e-9);
}

TEST(MixAtSnr, Errors) {
  const AudioClip speech = noise_clip(3, 100, 0.1);
  AudioClip silent;
  silent.samples.assign(100, 0.0);
  EXPECT_EQ(error_of([&] { mix_at_snr(speech, silent, 10); }), Errc::SilentInput);
  EXPECT_EQ(error_of([&] { mix_at_snr(silent, speech, 10); }), Errc::SilentInput);
  AudioClip other = speech;
  other.sample_rate_hz = 8000;
  EXPECT_EQ(error_of([&] { mix_at_snr(speech, other, 10); }), Errc::SampleRateMismatch);
}

TEST(MixAtSnr, OutputIsClipped) {
  const AudioClip speech = noise_clip(5, 2000, 0.8);
  const AudioClip mixed = mix_at_snr(speech, noise_clip(6, 2000, 0.5), 0.0);
  for (double x : mixed.samples) EXPECT_LE(std::abs(x), 1.0);
}

TEST(TileNoise, LoopsAndTruncates) {
  AudioClip n;
  n.samples = {1, 2, 3};
  EXPECT_EQ(tile_noise(n, 7), (std::vector<double>{1, 2, 3, 1, 2, 3, 1}));
  n.samples = {1, 2, 3, 4, 5, 6};
  EXPECT_EQ(tile_noise(n, 3, 2), (std::vector<double>{3, 4, 5}));
  EXPECT_EQ(tile_noise(n, 3, 100), (std::vector<double>{4, 5, 6}));
}

TEST(SynthRir, SchroederRt60WithinTenPercent) {
  for (double rt60 : {300.0, 600.0, 900.0, 1200.0}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const AudioClip h = synth_rir(rt60, kSampleRate, 2.0 * rt60 / 1000.0, seed);
      const double est = oracle_rt60_ms(h.samples, kSampleRate);
      EXPECT_GE(est, 0.9 * rt60) << rt60;
      EXPECT_LE(est, 1.1 * rt60) << rt60;
      EXPECT_NEAR(schroeder_rt60_ms(h), est, 1e-6 * rt60);
    }
  }
}

TEST(SynthRir, UnitEnergyAndDirectPath) {
  const AudioClip h = synth_rir(600, kSampleRate, 0.6, 11);
  double e = 0.0;
  for (double x : h.samples) e += x * x;
  EXPECT_NEAR(e, 1.0, 1e-9);
  EXPECT_EQ(h.size(), 9600u);
  // The direct path is the envelope peak: no later tap exceeds it by more
  // than a Gaussian tail allows.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const AudioClip g = synth_rir(600, kSampleRate, 0.6, seed);
    EXPECT_GT(g.samples[0], 0.0);
    for (double x : g.samples) EXPECT_LE(std::abs(x), 6.0 * g.samples[0]);
  }
}

TEST(SynthRir, Errors) {
  EXPECT_EQ(error_of([] { synth_rir(0, kSampleRate, 1.0, 1); }), Errc::InvalidRt60);
  EXPECT_EQ(error_of([] { synth_rir(-5, kSampleRate, 1.0, 1); }), Errc::InvalidRt60);
  EXPECT_EQ(error_of([] { synth_rir(900, kSampleRate, 0.5, 1); }), Errc::TooShort);
}

TEST(ApplyReverb, UnitImpulseIsIdentity) {
  const AudioClip x = noise_clip(7, 4000, 0.05);
  AudioClip delta;
  delta.samples = {1.0, 0.0, 0.0};
  const AudioClip y = apply_reverb(x, delta);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.samples[i], x.samples[i], 1e-9);
}

TEST(ApplyReverb, DelayedImpulseShifts) {
  const AudioClip x = noise_clip(8, 2000, 0.05);
  AudioClip delta;
  delta.samples.assign(161, 0.0);
  delta.samples[160] = 1.0;
  const std::vector<double> y = convolve_truncated(x, delta);
  ASSERT_EQ(y.size(), x.size());
  for (std::size_t i = 0; i < 160; ++i) EXPECT_NEAR(y[i], 0.0, 1e-12);
  for (std::size_t i = 160; i < x.size(); ++i) EXPECT_NEAR(y[i], x.samples[i - 160], 1e-12);
}

TEST(ApplyReverb, PreservesLevel) {
  const AudioClip x = noise_clip(9, 16000, 0.05);
  const AudioClip y = apply_reverb(x, synth_rir(900, kSampleRate, 0.9, 4));
  EXPECT_NEAR(rms_dbfs(y), rms_dbfs(x), 1e-6);
}

TEST(ApplyReverb, MatchesDirectConvolution) {
  const AudioClip x = noise_clip(10, 300, 0.1);
  const AudioClip h = noise_clip(11, 40, 0.2);
  const std::vector<double> y = convolve_truncated(x, h);
  for (std::size_t n = 0; n < x.size(); ++n) {
    double acc = 0.0;
    for (std::size_t k = 0; k <= n && k < h.size(); ++k) acc += h.samples[k] * x.samples[n - k];
    EXPECT_NEAR(y[n], acc, 1e-12);
  }
}

TEST(LossTrace, DegenerateChains) {
  const LossTrace none = gen_loss_trace({0.0, 0.5}, 1000, 1);
  for (bool e : none.events) EXPECT_FALSE(e);
  const LossTrace all = gen_loss_trace({1.0, 0.0}, 1000, 1);
  for (bool e : all.events) EXPECT_TRUE(e);
}

TEST(LossTrace, StationaryRate) {
  const LossTrace t = gen_loss_trace({0.1, 0.4}, 100000, 42);
  EXPECT_NEAR(t.loss_fraction(), 0.2, 0.01);
  const GilbertParams g = GilbertParams::from_loss_rate(0.1, 0.5);
  EXPECT_NEAR(g.stationary_loss(), 0.1, 1e-12);
  EXPECT_NEAR(gen_loss_trace(g, 100000, 3).loss_fraction(), 0.1, 0.01);
}

TEST(LossTrace, Errors) {
  EXPECT_EQ(error_of([] { gen_loss_trace({1.5, 0.5}, 10, 1); }), Errc::InvalidParams);
  EXPECT_EQ(error_of([] { gen_loss_trace({0.1, 0.5}, 0, 1); }), Errc::InvalidParams);
}

TEST(LossTrace, FileRoundTrip) {
  const LossTrace t = gen_loss_trace({0.2, 0.5}, 300, 9);
  const auto p = std::filesystem::temp_directory_path() / "aimp_trace.txt";
  write_loss_trace(t, p);
  const LossTrace back = read_loss_trace(p);
  EXPECT_EQ(back.frame_ms, 20);
  EXPECT_EQ(back.events, t.events);
  EXPECT_EQ(parse_loss_trace("frame_ms=10\n0110\n").events, (std::vector<bool>{false, true, true, false}));
  EXPECT_EQ(error_of([] { parse_loss_trace("frame_ms=20\n"); }), Errc::EmptyTrace);
  EXPECT_EQ(error_of([] { parse_loss_trace("frames=20\n01"); }), Errc::InvalidParams);
}

TEST(ApplyTrace, Policies) {
  const AudioClip x = noise_clip(12, 3200, 0.1);  // 10 frames of 320
  LossTrace keep;
  keep.events.assign(10, false);
  EXPECT_EQ(apply_trace(x, keep, Concealment::zero_fill()).samples, x.samples);

  LossTrace drop;
  drop.events.assign(10, true);
  for (double v : apply_trace(x, drop, Concealment::zero_fill()).samples) EXPECT_EQ(v, 0.0);

  LossTrace one;
  one.events.assign(10, false);
  one.events[4] = true;
  const AudioClip y = apply_trace(x, one, Concealment::repeat_last(0.0));
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (i / 320 == 4) {
      EXPECT_EQ(y.samples[i], x.samples[i - 320]);
    } else {
      EXPECT_EQ(y.samples[i], x.samples[i]);
    }
  }
}

TEST(ApplyTrace, AttenuatedRepeatAndShortTrace) {
  const AudioClip x = noise_clip(13, 1000, 0.1);  // 3 full frames plus a partial one
  LossTrace t;
  t.events = {false, true};  // frames past the end follow the last event
  const AudioClip y = apply_trace(x, t, Concealment::repeat_last(6.0));
  const double g = std::pow(10.0, -6.0 / 20.0);
  for (std::size_t i = 0; i < 320; ++i) EXPECT_EQ(y.samples[i], x.samples[i]);
  for (std::size_t i = 320; i < 640; ++i) EXPECT_DOUBLE_EQ(y.samples[i], x.samples[i - 320] * g);
  for (std::size_t i = 640; i < 960; ++i) EXPECT_DOUBLE_EQ(y.samples[i], x.samples[i - 640] * g * g);
  LossTrace empty;
  EXPECT_EQ(error_of([&] { apply_trace(x, empty, Concealment::zero_fill()); }), Errc::EmptyTrace);
}

TEST(LowVolume, RangeAndLevel) {
  const AudioClip x = noise_clip(14, 4000, 0.05);
  EXPECT_NEAR(rms_dbfs(make_low_volume(x, -40.0)), -40.0, 1e-6);
  EXPECT_NEAR(rms_dbfs(make_low_volume(x, -50.0)), -50.0, 1e-6);
  EXPECT_NEAR(rms_dbfs(make_low_volume(x, -35.0)), -35.0, 1e-6);
  EXPECT_EQ(error_of([&] { make_low_volume(x, -30.0); }), Errc::OutOfRange);
  EXPECT_EQ(error_of([&] { make_low_volume(x, -50.5); }), Errc::OutOfRange);
  AudioClip silent;
  silent.samples.assign(10, 0.0);
  EXPECT_EQ(error_of([&] { make_low_volume(silent, -40.0); }), Errc::SilentInput);
}

TEST(PseudoSpeech, DeterministicLengthAndLevel) {
  const AudioClip a = pseudo_speech(77, 10.0), b = pseudo_speech(77, 10.0), c = pseudo_speech(78, 10.0);
  EXPECT_EQ(a.size(), 160000u);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_NE(a.samples, c.samples);
  EXPECT_NEAR(rms_dbfs(a), -25.0, 1e-6);
  EXPECT_EQ(error_of([] { pseudo_speech(1, 0.4); }), Errc::TooShort);
}

TEST(ShapedNoise, KindsAreDistinctAndDeterministic) {
  for (NoiseKind k : kAllNoiseKinds) {
    const AudioClip a = shaped_noise(k, 5, 8000), b = shaped_noise(k, 5, 8000);
    EXPECT_EQ(a.samples, b.samples) << to_string(k);
    EXPECT_FALSE(is_silent(a));
  }
}

TEST(BuildDataset, OnePerClass) {
  const auto corpus = pseudo_speech_corpus(2, 1.0, 1);
  const LabeledDataset ds = build_dataset(corpus, 1, {}, 3);
  ASSERT_EQ(ds.size(), 5u);
  for (int c = 0; c < kNumClasses; ++c) EXPECT_EQ(ds.records[c].true_label, class_from_code(c));
}

TEST(BuildDataset, UniformHistogramAndParameterGrids) {
  const auto corpus = pseudo_speech_corpus(5, 1.0, 2);
  const LabeledDataset ds = build_dataset(corpus, 40, {}, 4);
  ASSERT_EQ(ds.size(), 200u);
  for (std::size_t h : ds.class_histogram()) EXPECT_EQ(h, 40u);
  std::set<double> snrs, rt60s;
  for (const Record& r : ds.records) {
    const AudioClip& c = ds.clip(r);
    EXPECT_EQ(r.observed_label, r.true_label);
    for (double x : c.samples) ASSERT_LE(std::abs(x), 1.0);
    switch (r.true_label) {
      case ImpairmentClass::BackgroundNoise:
        ASSERT_TRUE(r.params.snr_db);
        snrs.insert(*r.params.snr_db);
        break;
      case ImpairmentClass::Reverb:
        ASSERT_TRUE(r.params.rt60_ms);
        rt60s.insert(*r.params.rt60_ms);
        break;
      case ImpairmentClass::SpeechDistortion:
        ASSERT_TRUE(r.params.loss_rate);
        EXPECT_TRUE(*r.params.loss_rate == 0.05 || *r.params.loss_rate == 0.1 || *r.params.loss_rate == 0.2);
        break;
      case ImpairmentClass::LowVolume:
        ASSERT_TRUE(r.params.target_dbfs);
        EXPECT_GE(*r.params.target_dbfs, -50.0);
        EXPECT_LE(*r.params.target_dbfs, -35.0);
        EXPECT_NEAR(rms_dbfs(c), *r.params.target_dbfs, 1e-6);
        break;
      case ImpairmentClass::NoImpairment:
        break;
    }
    if (r.true_label != ImpairmentClass::LowVolume) {
      EXPECT_NEAR(rms_dbfs(c), -25.0, 1e-6);
    }
  }
  for (double s : snrs) {
    EXPECT_EQ(std::fmod(s, 5.0), 0.0);
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 30.0);
  }
  EXPECT_GE(snrs.size(), 5u);
  EXPECT_EQ(rt60s, (std::set<double>{300, 600, 900, 1200}));
}

TEST(BuildDataset, DeterministicAndErrors) {
  const auto corpus = pseudo_speech_corpus(3, 1.0, 5);
  const LabeledDataset a = build_dataset(corpus, 3, {}, 9), b = build_dataset(corpus, 3, {}, 9);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.clip(a.records[i]).samples, b.clip(b.records[i]).samples);
  EXPECT_EQ(error_of([] { build_dataset({}, 3, {}, 1); }), Errc::EmptyCorpus);
}

TEST(Manifest, RoundTrip) {
  const auto corpus = pseudo_speech_corpus(2, 1.0, 6);
  LabeledDataset ds = build_dataset(corpus, 2, {}, 7);
  ds.records[3].split = Split::Val;
  ds.records[4].observed_label = ImpairmentClass::Reverb;
  const auto dir = std::filesystem::temp_directory_path() / "aimp_manifest_test";
  std::filesystem::remove_all(dir);
  const auto manifest = write_manifest(ds, dir);
  const LabeledDataset back = read_manifest(manifest);
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.records[i].true_label, ds.records[i].true_label);
    EXPECT_EQ(back.records[i].observed_label, ds.records[i].observed_label);
    EXPECT_EQ(back.records[i].split, ds.records[i].split);
    EXPECT_EQ(back.records[i].seed, ds.records[i].seed);
    const auto& x = ds.clip(ds.records[i]).samples;
    const auto& y = back.clip(back.records[i]).samples;
    ASSERT_EQ(x.size(), y.size());
    for (std::size_t k = 0; k < x.size(); ++k) ASSERT_LE(std::abs(x[k] - y[k]), 1.0 / 32768);
  }
}
