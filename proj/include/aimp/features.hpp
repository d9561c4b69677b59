#pragma once

// Input representations: the 18-value engineered feature vector, the 128-band
// log-mel spectrogram, and fixed-length raw sample windows.

#include <aimp/audio_io.hpp>
#include <aimp/error.hpp>
#include <aimp/fft.hpp>
#include <aimp/tensor.hpp>

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <span>
#include <string_view>
#include <vector>

namespace aimp {

struct FrameParams {
  std::size_t frame_len = 320;
  std::size_t hop = 160;
};

inline constexpr std::size_t kNfft = 512;
inline constexpr std::size_t kSpectrumBins = kNfft / 2 + 1;
inline constexpr std::size_t kMelBands = 128;
inline constexpr std::size_t kMelFrames = 188;
/// Segment length that yields exactly kMelFrames frames at 320/160.
inline constexpr std::size_t kMelSegmentSamples = (kMelFrames - 1) * 160 + 320;
inline constexpr std::size_t kRawWindowSamples = 32000;
inline constexpr double kLogFloor = 1e-10;

inline std::size_t frame_count(std::size_t n_samples, const FrameParams& p) {
  if (p.hop == 0 || p.hop > p.frame_len) throw Error(Errc::InvalidParams, "require 0 < hop <= frame_len");
  if (n_samples < p.frame_len) return 0;
  return (n_samples - p.frame_len) / p.hop + 1;
}

/// Periodic Hann window.
inline const std::vector<double>& hann_window(std::size_t n) {
  thread_local std::map<std::size_t, std::vector<double>> cache;
  auto& w = cache[n];
  if (w.size() != n) {
    w.resize(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  }
  return w;
}

/// Hann-windowed copies of every full frame; no padding.
inline std::vector<std::vector<double>> frame_signal(const AudioClip& clip, const FrameParams& params = {}) {
  const std::size_t n_frames = frame_count(clip.size(), params);
  if (n_frames == 0) throw Error(Errc::TooShort, "clip shorter than one frame");
  const auto& w = hann_window(params.frame_len);
  std::vector<std::vector<double>> frames(n_frames, std::vector<double>(params.frame_len));
  for (std::size_t f = 0; f < n_frames; ++f) {
    const double* src = clip.samples.data() + f * params.hop;
    for (std::size_t i = 0; i < params.frame_len; ++i) frames[f][i] = src[i] * w[i];
  }
  return frames;
}

/// |X_k|^2 for k = 0..nfft/2 of the zero-padded frame.
inline std::vector<double> power_spectrum(std::span<const double> frame, std::size_t nfft = kNfft) {
  if (frame.size() > nfft) throw Error(Errc::InvalidParams, "frame longer than transform");
  std::vector<double> out(nfft / 2 + 1);
  cached_fft(nfft).power(frame, out);
  return out;
}

// --------------------------------------------------------------------------
// Mel filterbank

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular filters with centers equally spaced on the mel scale over
/// [0, fs/2]. A filter narrower than one FFT bin is widened to span one bin on
/// each side of its center, so every row has positive weight.
class MelFilterbank {
 public:
  MelFilterbank(std::size_t n_mels = kMelBands, int fs = kSampleRate, std::size_t nfft = kNfft)
      : n_mels_(n_mels), bins_(nfft / 2 + 1) {
    if (n_mels == 0) throw Error(Errc::InvalidParams, "n_mels must be >= 1");
    if (n_mels + 2 > bins_) throw Error(Errc::TooManyBands, "more mel bands than spectrum bins");
    const double top = hz_to_mel(fs / 2.0);
    centers_.resize(n_mels + 2);
    for (std::size_t i = 0; i < n_mels + 2; ++i) centers_[i] = mel_to_hz(top * i / (n_mels + 1));
    const double bin_hz = static_cast<double>(fs) / static_cast<double>(nfft);
    weights_.assign(n_mels * bins_, 0.0);
    first_.resize(n_mels);
    last_.resize(n_mels);
    for (std::size_t m = 0; m < n_mels; ++m) {
      const double c = centers_[m + 1];
      const double lo = std::min(centers_[m], c - bin_hz);
      const double hi = std::max(centers_[m + 2], c + bin_hz);
      first_[m] = bins_;
      last_[m] = 0;
      for (std::size_t k = 0; k < bins_; ++k) {
        const double f = k * bin_hz;
        double w = 0.0;
        if (f > lo && f <= c) {
          w = (f - lo) / (c - lo);
        } else if (f > c && f < hi) {
          w = (hi - f) / (hi - c);
        }
        if (w > 0.0) {
          weights_[m * bins_ + k] = w;
          first_[m] = std::min(first_[m], k);
          last_[m] = k;
        }
      }
      if (first_[m] > last_[m]) throw Error(Errc::TooManyBands, "empty mel filter");
    }
  }

  std::size_t n_mels() const noexcept { return n_mels_; }
  std::size_t bins() const noexcept { return bins_; }
  double weight(std::size_t m, std::size_t k) const { return weights_[m * bins_ + k]; }

  /// Filter center frequencies in Hz (n_mels entries, excluding the two edges).
  std::vector<double> center_frequencies() const { return {centers_.begin() + 1, centers_.end() - 1}; }

  void apply(std::span<const double> power, std::span<double> out) const {
    for (std::size_t m = 0; m < n_mels_; ++m) {
      double acc = 0.0;
      const double* w = weights_.data() + m * bins_;
      for (std::size_t k = first_[m]; k <= last_[m]; ++k) acc += w[k] * power[k];
      out[m] = acc;
    }
  }

 private:
  std::size_t n_mels_, bins_;
  std::vector<double> centers_;
  std::vector<double> weights_;
  std::vector<std::size_t> first_, last_;
};

inline MelFilterbank mel_filterbank(std::size_t n_mels = kMelBands, int fs = kSampleRate, std::size_t nfft = kNfft) {
  return MelFilterbank(n_mels, fs, nfft);
}

inline const MelFilterbank& default_mel_filterbank() {
  static const MelFilterbank fb;
  return fb;
}

/// (128, n_frames) natural-log mel energies of `samples`, floored at 1e-10.
inline Tensor<double> log_mel_frames(std::span<const double> samples, std::size_t n_frames,
                                     const FrameParams& params = {}) {
  const MelFilterbank& fb = default_mel_filterbank();
  const auto& w = hann_window(params.frame_len);
  RealFft& fft = cached_fft(kNfft);
  Tensor<double> out({fb.n_mels(), n_frames});
  std::vector<double> frame(params.frame_len), power(kSpectrumBins), mel(fb.n_mels());
  for (std::size_t f = 0; f < n_frames; ++f) {
    const double* src = samples.data() + f * params.hop;
    for (std::size_t i = 0; i < params.frame_len; ++i) frame[i] = src[i] * w[i];
    fft.power(frame, power);
    fb.apply(power, mel);
    for (std::size_t m = 0; m < fb.n_mels(); ++m) out.at2(m, f) = std::log(std::max(mel[m], kLogFloor));
  }
  return out;
}

/// 128 x 188 log-mel input starting at sample `start`.
inline Tensor<double> log_mel_spectrogram(const AudioClip& clip, std::size_t start) {
  if (start > clip.size() || clip.size() - start < kMelSegmentSamples) {
    throw Error(Errc::TooShort, "need " + std::to_string(kMelSegmentSamples) + " samples after offset");
  }
  return log_mel_frames(std::span(clip.samples).subspan(start, kMelSegmentSamples), kMelFrames);
}

/// Log-mel of every full frame of the clip; column j equals column 0 of the
/// segment starting at j * hop.
inline Tensor<double> full_log_mel(const AudioClip& clip) {
  const std::size_t n = frame_count(clip.size(), FrameParams{});
  if (n == 0) throw Error(Errc::TooShort, "clip shorter than one frame");
  return log_mel_frames(clip.samples, n);
}

inline std::vector<double> raw_window(const AudioClip& clip, std::size_t start) {
  if (start > clip.size() || clip.size() - start < kRawWindowSamples) {
    throw Error(Errc::TooShort, "need " + std::to_string(kRawWindowSamples) + " samples after offset");
  }
  return {clip.samples.begin() + static_cast<std::ptrdiff_t>(start),
          clip.samples.begin() + static_cast<std::ptrdiff_t>(start + kRawWindowSamples)};
}

// --------------------------------------------------------------------------
// Engineered features

inline constexpr std::size_t kEngineeredDim = 18;

inline constexpr std::array<std::string_view, kEngineeredDim> kEngineeredNames = {
    "spectral_centroid_mean", "spectral_centroid_var", "spectral_flux_mean",      "spectral_flux_var",
    "spectral_flatness_mean", "spectral_flatness_var", "spectral_dynamics_mean",  "spectral_dynamics_var",
    "spectral_rolloff_mean",  "spectral_rolloff_var",  "zero_crossing_rate_mean", "zero_crossing_rate_var",
    "signal_energy_mean",     "signal_energy_var",     "energy_entropy_mean",     "energy_entropy_var",
    "global_snr",             "clipping_probability"};

struct EngineeredVector {
  std::array<double, kEngineeredDim> values{};

  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
  double at(std::string_view name) const {
    for (std::size_t i = 0; i < kEngineeredDim; ++i) {
      if (kEngineeredNames[i] == name) return values[i];
    }
    throw Error(Errc::InvalidParams, "unknown feature " + std::string(name));
  }
};

struct EngineeredConfig {
  double rolloff_fraction = 0.85;
  std::size_t entropy_subframes = 10;
  std::size_t lpc_order = 10;
  double vad_threshold = 0.1;  // fraction of the mean frame energy
  double snr_floor_db = -10.0;
  double snr_cap_db = 60.0;
  double clip_level = 0.99;
};

namespace detail {

/// Order-p LPC envelope g / |A(e^jw)|^2 on the nfft/2+1 grid (autocorrelation
/// method, Levinson-Durbin). Returns false for a zero-energy frame.
inline bool lpc_envelope(std::span<const double> frame, std::size_t order, std::span<double> env) {
  std::vector<double> r(order + 1, 0.0);
  for (std::size_t lag = 0; lag <= order; ++lag) {
    for (std::size_t i = lag; i < frame.size(); ++i) r[lag] += frame[i] * frame[i - lag];
  }
  if (r[0] <= 0.0) return false;
  r[0] *= 1.0 + 1e-9;
  std::vector<double> a(order + 1, 0.0), prev(order + 1, 0.0);
  a[0] = 1.0;
  double err = r[0];
  for (std::size_t i = 1; i <= order; ++i) {
    double acc = r[i];
    for (std::size_t j = 1; j < i; ++j) acc += a[j] * r[i - j];
    const double k = -acc / err;
    prev = a;
    for (std::size_t j = 1; j < i; ++j) a[j] = prev[j] + k * prev[i - j];
    a[i] = k;
    err *= 1.0 - k * k;
    if (err <= 0.0) {
      err = r[0] * 1e-12;
      break;
    }
  }
  std::vector<double> inv(env.size());
  cached_fft(2 * (env.size() - 1)).power(a, inv);
  for (std::size_t k = 0; k < env.size(); ++k) env[k] = err / std::max(inv[k], 1e-300);
  return true;
}

struct Pooled {
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  void add(double x) {
    sum += x;
    sum_sq += x * x;
    ++n;
  }
  double mean() const { return n ? sum / n : 0.0; }
  double variance() const {
    if (n == 0) return 0.0;
    const double m = mean();
    return std::max(0.0, sum_sq / n - m * m);
  }
};

}  // namespace detail

/// Pooled engineered features of the whole clip (20 ms frames, 10 ms hop).
///
/// Per frame: centroid (Hz), flux between L2-normalized magnitude spectra,
/// flatness of the order-10 LPC envelope, dynamics (mean squared difference of
/// consecutive log spectra), 85% rolloff (Hz), zero-crossing rate, energy
/// (mean square of the raw frame) and the normalized Shannon entropy of energy
/// over 10 sub-frames. Spectral features use the Hann-windowed frame; the
/// time-domain ones the raw frame. global_snr splits frames with an energy VAD
/// at 0.1x the mean frame energy and is clamped to [-10, 60] dB; degenerate
/// splits return the bound. clipping_probability counts |x| >= 0.99.
inline EngineeredVector engineered_vector(const AudioClip& clip, const EngineeredConfig& cfg = {}) {
  const FrameParams fp;
  const std::size_t n_frames = frame_count(clip.size(), fp);
  if (n_frames < 2) throw Error(Errc::TooShort, "engineered features need at least two frames");
  const double fs = clip.sample_rate_hz;
  const double bin_hz = fs / kNfft;
  const auto& w = hann_window(fp.frame_len);
  RealFft& fft = cached_fft(kNfft);

  std::vector<double> frame(fp.frame_len), power(kSpectrumBins), mag(kSpectrumBins), prev_mag(kSpectrumBins);
  std::vector<double> logp(kSpectrumBins), prev_logp(kSpectrumBins), env(kSpectrumBins);
  std::vector<double> energies(n_frames);
  detail::Pooled centroid, flux, flatness, dynamics, rolloff, zcr, energy, entropy;

  for (std::size_t f = 0; f < n_frames; ++f) {
    const double* raw = clip.samples.data() + f * fp.hop;
    for (std::size_t i = 0; i < fp.frame_len; ++i) frame[i] = raw[i] * w[i];
    fft.power(frame, power);

    double total = 0.0, weighted = 0.0;
    for (std::size_t k = 0; k < kSpectrumBins; ++k) {
      total += power[k];
      weighted += k * bin_hz * power[k];
    }
    centroid.add(total > 0.0 ? weighted / total : 0.0);

    double roll = 0.0;
    if (total > 0.0) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kSpectrumBins; ++k) {
        acc += power[k];
        if (acc >= cfg.rolloff_fraction * total) {
          roll = k * bin_hz;
          break;
        }
      }
    }
    rolloff.add(roll);

    double norm = 0.0;
    for (std::size_t k = 0; k < kSpectrumBins; ++k) {
      mag[k] = std::sqrt(power[k]);
      norm += power[k];
      logp[k] = std::log(std::max(power[k], kLogFloor));
    }
    norm = std::sqrt(norm);
    for (double& m : mag) m = norm > 0.0 ? m / norm : 0.0;
    if (f > 0) {
      double fl = 0.0, dyn = 0.0;
      for (std::size_t k = 0; k < kSpectrumBins; ++k) {
        fl += (mag[k] - prev_mag[k]) * (mag[k] - prev_mag[k]);
        dyn += (logp[k] - prev_logp[k]) * (logp[k] - prev_logp[k]);
      }
      flux.add(fl);
      dynamics.add(dyn / kSpectrumBins);
    }
    std::swap(mag, prev_mag);
    std::swap(logp, prev_logp);

    double flat = 1.0;
    if (detail::lpc_envelope(frame, cfg.lpc_order, env)) {
      double log_sum = 0.0, sum = 0.0;
      for (double e : env) {
        const double v = std::max(e, kLogFloor);
        log_sum += std::log(v);
        sum += v;
      }
      flat = std::clamp(std::exp(log_sum / kSpectrumBins) / (sum / kSpectrumBins), 0.0, 1.0);
    }
    flatness.add(flat);

    std::size_t crossings = 0;
    double e = 0.0;
    for (std::size_t i = 0; i < fp.frame_len; ++i) {
      if (i > 0 && (raw[i] >= 0.0) != (raw[i - 1] >= 0.0)) ++crossings;
      e += raw[i] * raw[i];
    }
    zcr.add(static_cast<double>(crossings) / static_cast<double>(fp.frame_len - 1));
    e /= static_cast<double>(fp.frame_len);
    energy.add(e);
    energies[f] = e;

    const std::size_t sub = fp.frame_len / cfg.entropy_subframes;
    double sub_total = 0.0;
    std::vector<double> sub_e(cfg.entropy_subframes, 0.0);
    for (std::size_t j = 0; j < cfg.entropy_subframes; ++j) {
      for (std::size_t i = j * sub; i < (j + 1) * sub; ++i) sub_e[j] += raw[i] * raw[i];
      sub_total += sub_e[j];
    }
    double h = 0.0;
    if (sub_total > 0.0) {
      for (double s : sub_e) {
        const double p = s / sub_total;
        if (p > 0.0) h -= p * std::log(p);
      }
      h /= std::log(static_cast<double>(cfg.entropy_subframes));
    }
    entropy.add(std::clamp(h, 0.0, 1.0));
  }

  EngineeredVector v;
  std::size_t i = 0;
  for (const detail::Pooled* p : {&centroid, &flux, &flatness, &dynamics, &rolloff, &zcr, &energy, &entropy}) {
    v[i++] = p->mean();
    v[i++] = p->variance();
  }

  double mean_energy = 0.0;
  for (double e : energies) mean_energy += e;
  mean_energy /= static_cast<double>(n_frames);
  detail::Pooled speech, noise;
  for (double e : energies) (e > cfg.vad_threshold * mean_energy ? speech : noise).add(e);
  double snr;
  if (speech.n == 0) {
    snr = cfg.snr_floor_db;
  } else if (noise.n == 0 || noise.mean() <= 0.0) {
    snr = cfg.snr_cap_db;
  } else {
    snr = 10.0 * std::log10(speech.mean() / noise.mean());
  }
  v[16] = std::clamp(snr, cfg.snr_floor_db, cfg.snr_cap_db);

  std::size_t clipped = 0;
  for (double x : clip.samples) clipped += std::abs(x) >= cfg.clip_level ? 1 : 0;
  v[17] = static_cast<double>(clipped) / static_cast<double>(clip.size());
  return v;
}

/// Per-feature standardization fitted on a training set.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  bool empty() const noexcept { return mean.empty(); }

  static Standardizer fit(std::span<const EngineeredVector> rows) {
    if (rows.empty()) throw Error(Errc::EmptySet, "cannot fit a standardizer on no rows");
    Standardizer s;
    s.mean.assign(kEngineeredDim, 0.0);
    s.stddev.assign(kEngineeredDim, 0.0);
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < kEngineeredDim; ++i) s.mean[i] += r[i];
    }
    for (double& m : s.mean) m /= static_cast<double>(rows.size());
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < kEngineeredDim; ++i) s.stddev[i] += (r[i] - s.mean[i]) * (r[i] - s.mean[i]);
    }
    for (double& sd : s.stddev) {
      sd = std::sqrt(sd / static_cast<double>(rows.size()));
      if (!(sd > 1e-12)) sd = 1.0;
    }
    return s;
  }

  template <typename T>
  void apply(const EngineeredVector& v, std::span<T> out) const {
    for (std::size_t i = 0; i < kEngineeredDim; ++i) {
      out[i] = static_cast<T>(empty() ? v[i] : (v[i] - mean[i]) / stddev[i]);
    }
  }
};

// Feature cache: one JSON object per line {clip_id, engineered: [18 reals]}.

inline void write_feature_cache(const std::vector<std::pair<std::string, EngineeredVector>>& rows,
                                const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  for (const auto& [id, v] : rows) {
    nlohmann::json j = {{"clip_id", id}, {"engineered", v.values}};
    out << j.dump() << '\n';
  }
  if (!out) throw Error(Errc::IoError, "short write to " + path.string());
}

inline std::vector<std::pair<std::string, EngineeredVector>> read_feature_cache(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  std::vector<std::pair<std::string, EngineeredVector>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EngineeredVector v;
      const auto& arr = j.at("engineered");
      if (arr.size() != kEngineeredDim) throw Error(Errc::IoError, "engineered vector must have 18 entries");
      for (std::size_t i = 0; i < kEngineeredDim; ++i) v[i] = arr.at(i).get<double>();
      rows.emplace_back(j.at("clip_id").get<std::string>(), v);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::IoError, "bad feature cache line: " + std::string(e.what()));
    }
  }
  return rows;
}

}  // namespace aimp
