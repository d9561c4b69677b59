#include <aimp/dataset.hpp>
#include <aimp/features.hpp>
#include <aimp/tensor.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>

using namespace aimp;

namespace {

constexpr double kPi = std::numbers::pi;

AudioClip sine(double amp, double freq, std::size_t n) {
  AudioClip c;
  c.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) c.samples[i] = amp * std::sin(2.0 * kPi * freq * i / kSampleRate + 0.3);
  return c;
}

AudioClip white(std::uint64_t seed, std::size_t n, double amp) {
  Rng rng(seed);
  AudioClip c;
  c.samples.resize(n);
  for (double& x : c.samples) x = amp * rng.normal();
  return c;
}

// |X_k|^2 by direct summation over the zero-padded frame.
std::vector<double> dft_power(const std::vector<double>& frame, std::size_t nfft) {
  std::vector<double> out(nfft / 2 + 1);
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t n = 0; n < frame.size(); ++n) {
      acc += frame[n] * std::polar(1.0, -2.0 * kPi * static_cast<double>(k * n) / static_cast<double>(nfft));
    }
    out[k] = std::norm(acc);
  }
  return out;
}

std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / n));
  return w;
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

}  // namespace

TEST(Framing, CountExamples) {
  EXPECT_EQ(frame_count(320, {}), 1u);
  EXPECT_EQ(frame_count(30240, {}), 188u);
  EXPECT_EQ(kMelSegmentSamples, 30240u);
  AudioClip c;
  c.samples.assign(200, 0.1);
  EXPECT_EQ(error_of([&] { frame_signal(c); }), Errc::TooShort);
}

TEST(Framing, CountMatchesNaiveLoop) {
  Rng rng(3);
  for (int t = 0; t < 500; ++t) {
    const std::size_t frame = 1 + rng.below(400);
    const std::size_t hop = 1 + rng.below(frame);
    const std::size_t n = rng.below(5000);
    std::size_t naive = 0;
    for (std::size_t start = 0; start + frame <= n; start += hop) ++naive;
    EXPECT_EQ(frame_count(n, {frame, hop}), naive) << n << " " << frame << " " << hop;
  }
}

TEST(Framing, FramesAreWindowedCopies) {
  const AudioClip c = white(1, 1000, 0.1);
  const auto frames = frame_signal(c);
  const auto w = hann(320);
  ASSERT_EQ(frames.size(), 5u);
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (std::size_t i = 0; i < 320; ++i) EXPECT_NEAR(frames[f][i], c.samples[f * 160 + i] * w[i], 1e-15);
  }
}

TEST(PowerSpectrum, ZeroFrame) {
  const auto p = power_spectrum(std::vector<double>(320, 0.0));
  ASSERT_EQ(p.size(), 257u);
  for (double v : p) EXPECT_EQ(v, 0.0);
}

TEST(PowerSpectrum, MatchesDirectDft) {
  const AudioClip c = white(2, 320, 0.3);
  const auto p = power_spectrum(c.samples);
  const auto oracle = dft_power(c.samples, 512);
  for (std::size_t k = 0; k < p.size(); ++k) EXPECT_NEAR(p[k], oracle[k], 1e-9 * (1.0 + oracle[k]));
}

TEST(PowerSpectrum, BinSineConcentrates) {
  const std::size_t k0 = 40;  // 1250 Hz
  const AudioClip c = sine(0.5, k0 * kSampleRate / 512.0, 320);
  const auto w = hann(320);
  std::vector<double> frame(320);
  for (std::size_t i = 0; i < 320; ++i) frame[i] = c.samples[i] * w[i];
  const auto p = power_spectrum(frame);
  const auto oracle = dft_power(frame, 512);
  double total = 0.0, near = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    total += oracle[k];
    // Hann main lobe spans +-2 bins of the 320-point frame, +-3.2 bins at 512 points.
    if (k + 3 >= k0 && k <= k0 + 3) near += oracle[k];
  }
  EXPECT_GE(near / total, 0.9);
  EXPECT_EQ(std::max_element(p.begin(), p.end()) - p.begin(), static_cast<std::ptrdiff_t>(k0));
}

TEST(PowerSpectrum, Parseval) {
  const AudioClip c = white(3, 320, 0.2);
  const auto w = hann(320);
  std::vector<double> frame(320);
  double time_energy = 0.0;
  for (std::size_t i = 0; i < 320; ++i) {
    frame[i] = c.samples[i] * w[i];
    time_energy += frame[i] * frame[i];
  }
  const auto p = power_spectrum(frame);
  double spec = p.front() + p.back();
  for (std::size_t k = 1; k + 1 < p.size(); ++k) spec += 2.0 * p[k];
  EXPECT_NEAR(spec / 512.0, time_energy, 1e-6 * time_energy);
}

TEST(MelFilterbank, MelScale) {
  EXPECT_NEAR(hz_to_mel(700.0), 2595.0 * std::log10(2.0), 1e-12);
  EXPECT_NEAR(hz_to_mel(700.0), 781.17, 0.01);
  for (double f : {0.0, 100.0, 1000.0, 7999.0}) EXPECT_NEAR(mel_to_hz(hz_to_mel(f)), f, 1e-9);
}

TEST(MelFilterbank, ShapeCentersAndCoverage) {
  const MelFilterbank fb = mel_filterbank();
  ASSERT_EQ(fb.n_mels(), 128u);
  ASSERT_EQ(fb.bins(), 257u);
  const auto centers = fb.center_frequencies();
  ASSERT_EQ(centers.size(), 128u);
  for (std::size_t i = 1; i < centers.size(); ++i) EXPECT_GT(centers[i], centers[i - 1]);
  // Equal spacing on the mel scale.
  const double step = hz_to_mel(centers[1]) - hz_to_mel(centers[0]);
  for (std::size_t i = 1; i < centers.size(); ++i) EXPECT_NEAR(hz_to_mel(centers[i]) - hz_to_mel(centers[i - 1]), step, 1e-9);
  EXPECT_NEAR(step, hz_to_mel(8000.0) / 129.0, 1e-9);
  for (std::size_t m = 0; m < 128; ++m) {
    double row = 0.0;
    for (std::size_t k = 0; k < 257; ++k) {
      EXPECT_GE(fb.weight(m, k), 0.0);
      row += fb.weight(m, k);
    }
    EXPECT_GT(row, 0.0) << m;
  }
  const double bin_hz = 16000.0 / 512.0;
  for (std::size_t k = 0; k < 257; ++k) {
    const double f = k * bin_hz;
    if (f < centers.front() || f > centers.back()) continue;
    double col = 0.0;
    for (std::size_t m = 0; m < 128; ++m) col += fb.weight(m, k);
    EXPECT_GT(col, 0.0) << "bin " << k;
  }
}

TEST(MelFilterbank, TooManyBands) {
  EXPECT_EQ(error_of([] { mel_filterbank(300, 16000, 512); }), Errc::TooManyBands);
  EXPECT_NO_THROW(mel_filterbank(40, 16000, 512));
}

TEST(LogMel, ShapeAndFloor) {
  const AudioClip c = white(4, 40000, 0.05);
  const Tensor<double> m = log_mel_spectrogram(c, 1234);
  EXPECT_EQ(m.shape, (Shape{128, 188}));
  AudioClip z;
  z.samples.assign(30240, 0.0);
  for (double v : log_mel_spectrogram(z, 0).data) EXPECT_EQ(v, std::log(1e-10));
  for (double v : m.data) EXPECT_GE(v, std::log(1e-10));
}

TEST(LogMel, ScalingAddsTwoLnTen) {
  const AudioClip c = white(5, 30240, 0.001);
  AudioClip s = c;
  for (double& x : s.samples) x *= 10.0;
  const Tensor<double> a = log_mel_spectrogram(c, 0), b = log_mel_spectrogram(s, 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.data[i] > std::log(1e-10) + 1e-6) {
      EXPECT_NEAR(b.data[i] - a.data[i], 2.0 * std::log(10.0), 1e-9);
    }
  }
}

TEST(LogMel, TranslationCovariance) {
  const AudioClip c = white(6, 31000, 0.05);
  const Tensor<double> a = log_mel_spectrogram(c, 0), b = log_mel_spectrogram(c, 160);
  for (std::size_t m = 0; m < 128; ++m) {
    for (std::size_t j = 0; j + 1 < 188; ++j) EXPECT_NEAR(b.at2(m, j), a.at2(m, j + 1), 1e-9);
  }
}

TEST(LogMel, FullClipColumnsMatchSegments) {
  const AudioClip c = white(7, 36000, 0.05);
  const Tensor<double> full = full_log_mel(c);
  EXPECT_EQ(full.dim(1), frame_count(c.size(), {}));
  for (std::size_t start : {0u, 7u, 20u}) {
    const Tensor<double> seg = log_mel_spectrogram(c, start * 160);
    for (std::size_t m = 0; m < 128; ++m) {
      for (std::size_t j = 0; j < 188; ++j) ASSERT_EQ(seg.at2(m, j), full.at2(m, start + j));
    }
  }
}

TEST(LogMel, MatchesDirectOracleOnOneFrame) {
  const AudioClip c = white(8, 30240, 0.05);
  const Tensor<double> m = log_mel_spectrogram(c, 0);
  const auto w = hann(320);
  std::vector<double> frame(320);
  for (std::size_t i = 0; i < 320; ++i) frame[i] = c.samples[160 * 5 + i] * w[i];
  const auto p = dft_power(frame, 512);
  const MelFilterbank fb = mel_filterbank();
  for (std::size_t b = 0; b < 128; ++b) {
    double e = 0.0;
    for (std::size_t k = 0; k < 257; ++k) e += fb.weight(b, k) * p[k];
    EXPECT_NEAR(m.at2(b, 5), std::log(std::max(e, 1e-10)), 1e-9);
  }
}

TEST(LogMel, TooShort) {
  const AudioClip c = white(9, 30240, 0.05);
  EXPECT_NO_THROW(log_mel_spectrogram(c, 0));
  EXPECT_EQ(error_of([&] { log_mel_spectrogram(c, 1); }), Errc::TooShort);
}

TEST(RawWindow, VerbatimAndBounds) {
  const AudioClip c = white(10, 160000, 0.05);
  const auto w = raw_window(c, 0);
  ASSERT_EQ(w.size(), 32000u);
  for (std::size_t i = 0; i < w.size(); ++i) ASSERT_EQ(w[i], c.samples[i]);
  EXPECT_EQ(raw_window(c, 128000).size(), 32000u);
  EXPECT_EQ(error_of([&] { raw_window(c, 128001); }), Errc::TooShort);
}

TEST(Engineered, SineAnalytic) {
  const double f = 50 * kSampleRate / 512.0;  // exact bin
  const EngineeredVector v = engineered_vector(sine(0.3, f, 16000));
  EXPECT_NEAR(v.at("zero_crossing_rate_mean"), 2.0 * f / kSampleRate, 0.01 * 2.0 * f / kSampleRate);
  EXPECT_NEAR(v.at("spectral_flux_mean"), 0.0, 1e-6);
  EXPECT_LE(v.at("spectral_flatness_mean"), 0.05);
  EXPECT_NEAR(v.at("spectral_centroid_mean"), f, 100.0);
}

TEST(Engineered, WhiteNoiseIsFlat) {
  const EngineeredVector v = engineered_vector(white(11, 16000, 0.1));
  EXPECT_GE(v.at("spectral_flatness_mean"), 0.9);
  EXPECT_NEAR(v.at("zero_crossing_rate_mean"), 0.5, 0.05);
}

TEST(Engineered, ClippingProbabilityCounts) {
  AudioClip c = white(12, 20000, 0.05);
  for (std::size_t i = 0; i < c.size(); i += 20) c.samples[i] = (i / 20) % 2 ? 1.0 : -1.0;
  EXPECT_NEAR(engineered_vector(c).at("clipping_probability"), 0.05, 1e-9);
}

TEST(Engineered, TimeDomainFeaturesMatchDirectLoops) {
  const AudioClip c = white(13, 4000, 0.1);
  const EngineeredVector v = engineered_vector(c);
  const std::size_t n = frame_count(c.size(), {});
  double e_mean = 0.0, z_mean = 0.0, e_sq = 0.0;
  for (std::size_t f = 0; f < n; ++f) {
    double e = 0.0;
    int z = 0;
    for (std::size_t i = 0; i < 320; ++i) {
      const double x = c.samples[f * 160 + i];
      e += x * x;
      if (i > 0 && std::signbit(x) != std::signbit(c.samples[f * 160 + i - 1])) ++z;
    }
    e /= 320.0;
    e_mean += e / n;
    e_sq += e * e / n;
    z_mean += z / 319.0 / n;
  }
  EXPECT_NEAR(v.at("signal_energy_mean"), e_mean, 1e-12);
  EXPECT_NEAR(v.at("signal_energy_var"), e_sq - e_mean * e_mean, 1e-12);
  EXPECT_NEAR(v.at("zero_crossing_rate_mean"), z_mean, 1e-12);
}

TEST(Engineered, CentroidMatchesDirectDft) {
  const AudioClip c = white(14, 1600, 0.1);
  const EngineeredVector v = engineered_vector(c);
  const std::size_t n = frame_count(c.size(), {});
  const auto w = hann(320);
  double mean = 0.0;
  for (std::size_t f = 0; f < n; ++f) {
    std::vector<double> frame(320);
    for (std::size_t i = 0; i < 320; ++i) frame[i] = c.samples[f * 160 + i] * w[i];
    const auto p = dft_power(frame, 512);
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) num += k * 16000.0 / 512.0 * p[k], den += p[k];
    mean += num / den / n;
  }
  EXPECT_NEAR(v.at("spectral_centroid_mean"), mean, 1e-6);
}

TEST(Engineered, SnrCapsAndVad) {
  // Loud half followed by a quiet half: 40 dB apart.
  AudioClip c = white(15, 16000, 0.1);
  for (std::size_t i = 8000; i < 16000; ++i) c.samples[i] *= 0.01;
  const double snr = engineered_vector(c).at("global_snr");
  EXPECT_NEAR(snr, 40.0, 1.5);
  // Stationary noise: every frame passes the VAD, so the cap applies.
  EXPECT_EQ(engineered_vector(white(16, 16000, 0.1)).at("global_snr"), 60.0);
  AudioClip silent;
  silent.samples.assign(1000, 0.0);
  EXPECT_EQ(engineered_vector(silent).at("global_snr"), -10.0);
}

TEST(Engineered, RangesOverDeskCorpus) {
  const auto corpus = pseudo_speech_corpus(4, 2.0, 1);
  const LabeledDataset ds = build_dataset(corpus, 4, {}, 2);
  for (const Record& r : ds.records) {
    const EngineeredVector v = engineered_vector(ds.clip(r));
    for (std::size_t i = 1; i < 16; i += 2) EXPECT_GE(v[i], 0.0) << kEngineeredNames[i];
    EXPECT_GE(v.at("spectral_flatness_mean"), 0.0);
    EXPECT_LE(v.at("spectral_flatness_mean"), 1.0);
    EXPECT_LE(v.at("spectral_rolloff_mean"), 8000.0);
    EXPECT_GE(v.at("energy_entropy_mean"), 0.0);
    EXPECT_LE(v.at("energy_entropy_mean"), 1.0);
    EXPECT_GE(v.at("clipping_probability"), 0.0);
    EXPECT_LE(v.at("clipping_probability"), 1.0);
    for (double x : v.values) EXPECT_TRUE(std::isfinite(x));
  }
}

TEST(Engineered, TooShortAndNames) {
  AudioClip c;
  c.samples.assign(400, 0.1);
  EXPECT_EQ(error_of([&] { engineered_vector(c); }), Errc::TooShort);
  EXPECT_EQ(kEngineeredNames.size(), 18u);
  EXPECT_THROW(EngineeredVector{}.at("pitch"), Error);
}

TEST(Standardizer, ZeroMeanUnitVariance) {
  std::vector<EngineeredVector> rows(50);
  Rng rng(17);
  for (auto& r : rows) {
    for (std::size_t i = 0; i < kEngineeredDim; ++i) r[i] = 3.0 * i + rng.normal() * (i + 1);
  }
  rows[0][5] = rows[1][5] = 0.0;
  for (auto& r : rows) r[7] = 2.5;  // constant column keeps unit divisor
  const Standardizer s = Standardizer::fit(rows);
  for (std::size_t i = 0; i < kEngineeredDim; ++i) {
    double m = 0.0, v = 0.0;
    std::vector<double> out(kEngineeredDim);
    for (const auto& r : rows) {
      s.apply<double>(r, out);
      m += out[i] / rows.size();
      v += out[i] * out[i] / rows.size();
    }
    EXPECT_NEAR(m, 0.0, 1e-9);
    EXPECT_NEAR(v, i == 7 ? 0.0 : 1.0, 1e-9);
  }
}

TEST(Cache, FeatureAndTensorFilesRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "aimp_feature_cache";
  std::filesystem::create_directories(dir);
  std::vector<std::pair<std::string, EngineeredVector>> rows(2);
  rows[0].first = "a.wav";
  rows[1].first = "b.wav";
  for (std::size_t i = 0; i < kEngineeredDim; ++i) rows[0].second[i] = 0.1 * i, rows[1].second[i] = -1.0 / (i + 1);
  write_feature_cache(rows, dir / "eng.jsonl");
  const auto back = read_feature_cache(dir / "eng.jsonl");
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_EQ(back[r].first, rows[r].first);
    EXPECT_EQ(back[r].second.values, rows[r].second.values);
  }
  Tensor<float> t({3, 4});
  for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = static_cast<float>(i) * 0.25f - 1.0f;
  write_tensor_file(t, dir / "t.bin");
  const Tensor<float> u = read_tensor_file(dir / "t.bin");
  EXPECT_EQ(u.shape, t.shape);
  EXPECT_EQ(u.data, t.data);
  detail::write_file(dir / "bad.bin", {'n', 'o', 'p', 'e'});
  EXPECT_EQ(error_of([&] { read_tensor_file(dir / "bad.bin"); }), Errc::IoError);
}
