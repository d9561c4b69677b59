#pragma once

// Synthesis of the impairment classes from clean speech: noise mixing at a
// target SNR, exponential-decay room impulse responses, Gilbert-model packet
// loss with concealment, low volume, plus a pseudo-speech generator used as a
// stand-in clean corpus.

#include <aimp/audio_io.hpp>
#include <aimp/error.hpp>
#include <aimp/fft.hpp>
#include <aimp/rng.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace aimp {

/// Class codes are stable and used in every file format.
enum class ImpairmentClass : int {
  BackgroundNoise = 0,
  Reverb = 1,
  SpeechDistortion = 2,
  LowVolume = 3,
  NoImpairment = 4,
};

inline constexpr int kNumClasses = 5;

inline constexpr std::array<ImpairmentClass, kNumClasses> kAllClasses = {
    ImpairmentClass::BackgroundNoise, ImpairmentClass::Reverb, ImpairmentClass::SpeechDistortion,
    ImpairmentClass::LowVolume, ImpairmentClass::NoImpairment};

constexpr int code(ImpairmentClass c) { return static_cast<int>(c); }

inline ImpairmentClass class_from_code(int c) {
  if (c < 0 || c >= kNumClasses) throw Error(Errc::BadLabel, "class code out of range: " + std::to_string(c));
  return static_cast<ImpairmentClass>(c);
}

constexpr std::string_view to_string(ImpairmentClass c) {
  switch (c) {
    case ImpairmentClass::BackgroundNoise: return "BackgroundNoise";
    case ImpairmentClass::Reverb: return "Reverb";
    case ImpairmentClass::SpeechDistortion: return "SpeechDistortion";
    case ImpairmentClass::LowVolume: return "LowVolume";
    case ImpairmentClass::NoImpairment: return "NoImpairment";
  }
  return "Unknown";
}

// --------------------------------------------------------------------------
// Background noise

inline void require_same_rate(const AudioClip& a, const AudioClip& b) {
  if (a.sample_rate_hz != b.sample_rate_hz) {
    throw Error(Errc::SampleRateMismatch, std::to_string(a.sample_rate_hz) + " Hz vs " +
                                              std::to_string(b.sample_rate_hz) + " Hz");
  }
}

/// Noise looped (when shorter) or read from `offset` (when longer) to `length` samples.
inline std::vector<double> tile_noise(const AudioClip& noise, std::size_t length, std::size_t offset = 0) {
  if (noise.empty()) throw Error(Errc::EmptyAudio, "empty noise clip");
  const std::size_t n = noise.size();
  if (n <= length) offset = 0;
  offset = std::min(offset, n - std::min(n, length));
  std::vector<double> out(length);
  for (std::size_t i = 0; i < length; ++i) out[i] = noise.samples[(offset + i) % n];
  return out;
}

/// Gain applied to `noise` so that 10*log10(P_speech / P_noise) == snr_db.
inline double noise_gain_for_snr(std::span<const double> speech, std::span<const double> noise, double snr_db) {
  const double ps = mean_square(speech);
  const double pn = mean_square(noise);
  if (ps <= 0.0) throw Error(Errc::SilentInput, "speech is silent");
  if (pn <= 0.0) throw Error(Errc::SilentInput, "noise is silent");
  return std::sqrt(ps / (pn * std::pow(10.0, snr_db / 10.0)));
}

/// Speech plus scaled noise at the requested SNR (whole-clip powers), hard-clipped.
inline AudioClip mix_at_snr(const AudioClip& speech, const AudioClip& noise, double snr_db,
                            std::size_t noise_offset = 0) {
  if (!std::isfinite(snr_db)) throw Error(Errc::InvalidParams, "snr must be finite");
  require_same_rate(speech, noise);
  if (speech.empty() || is_silent(speech)) throw Error(Errc::SilentInput, "speech is silent");
  if (noise.empty() || is_silent(noise)) throw Error(Errc::SilentInput, "noise is silent");
  const std::vector<double> tiled = tile_noise(noise, speech.size(), noise_offset);
  const double gain = noise_gain_for_snr(speech.samples, tiled, snr_db);
  AudioClip out = speech;
  for (std::size_t i = 0; i < out.size(); ++i) out.samples[i] += gain * tiled[i];
  hard_clip(out.samples);
  return out;
}

enum class NoiseKind { White, Pink, Brown, Babble };

inline constexpr std::array<NoiseKind, 4> kAllNoiseKinds = {NoiseKind::White, NoiseKind::Pink, NoiseKind::Brown,
                                                            NoiseKind::Babble};

constexpr std::string_view to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::White: return "white";
    case NoiseKind::Pink: return "pink";
    case NoiseKind::Brown: return "brown";
    case NoiseKind::Babble: return "babble";
  }
  return "unknown";
}

/// Seeded stand-in for recorded environment noise, normalized to -25 dBFS.
///
/// Pink uses Kellet's filter; brown is leaky-integrated white noise (rumble);
/// babble is low-passed noise with a 3-6 Hz syllabic amplitude modulation.
inline AudioClip shaped_noise(NoiseKind kind, std::uint64_t seed, std::size_t n_samples, int fs = kSampleRate) {
  if (n_samples == 0) throw Error(Errc::TooShort, "noise length must be positive");
  Rng rng(seed);
  AudioClip out;
  out.sample_rate_hz = fs;
  out.samples.resize(n_samples);
  switch (kind) {
    case NoiseKind::White:
      for (double& x : out.samples) x = rng.normal();
      break;
    case NoiseKind::Pink: {
      double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
      for (double& x : out.samples) {
        const double w = rng.normal();
        b0 = 0.99886 * b0 + w * 0.0555179;
        b1 = 0.99332 * b1 + w * 0.0750759;
        b2 = 0.96900 * b2 + w * 0.1538520;
        b3 = 0.86650 * b3 + w * 0.3104856;
        b4 = 0.55000 * b4 + w * 0.5329522;
        b5 = -0.7616 * b5 - w * 0.0168980;
        x = b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362;
        b6 = w * 0.115926;
      }
      break;
    }
    case NoiseKind::Brown: {
      double acc = 0.0;
      for (double& x : out.samples) {
        acc = 0.995 * acc + rng.normal();
        x = acc;
      }
      break;
    }
    case NoiseKind::Babble: {
      double lp1 = 0.0, lp2 = 0.0, phase = 0.0;
      double rate_hz = rng.uniform(3.0, 6.0);
      for (std::size_t i = 0; i < n_samples; ++i) {
        const double w = rng.normal();
        lp1 += 0.25 * (w - lp1);
        lp2 += 0.25 * (lp1 - lp2);
        phase += rate_hz / fs;
        if (phase >= 1.0) {
          phase -= 1.0;
          rate_hz = rng.uniform(3.0, 6.0);
        }
        const double env = 0.55 + 0.45 * std::sin(2.0 * std::numbers::pi * phase);
        out.samples[i] = lp2 * env;
      }
      break;
    }
  }
  return normalize_to_dbfs(out, -25.0);
}

// --------------------------------------------------------------------------
// Reverberation

/// Exponentially decaying Gaussian-noise RIR with a unit-magnitude direct path,
/// normalized to unit energy.
inline AudioClip synth_rir(double rt60_ms, int sample_rate_hz, double length_s, std::uint64_t seed) {
  if (!(rt60_ms > 0.0) || !std::isfinite(rt60_ms)) throw Error(Errc::InvalidRt60, "rt60 must be positive");
  if (sample_rate_hz <= 0) throw Error(Errc::InvalidParams, "sample rate must be positive");
  if (!(length_s >= rt60_ms / 1000.0)) throw Error(Errc::TooShort, "rir length shorter than rt60");
  const auto n = static_cast<std::size_t>(std::ceil(length_s * sample_rate_hz));
  const double decay = 3.0 * std::numbers::ln10 / (sample_rate_hz * rt60_ms / 1000.0);
  Rng rng(seed);
  AudioClip h;
  h.sample_rate_hz = sample_rate_hz;
  h.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) h.samples[i] = rng.normal() * std::exp(-decay * static_cast<double>(i));
  h.samples[0] = 1.0;
  const double energy = mean_square(h.samples) * static_cast<double>(n);
  const double scale = 1.0 / std::sqrt(energy);
  for (double& x : h.samples) x *= scale;
  return h;
}

/// RT60 (ms) from a straight-line fit to the Schroeder energy decay curve
/// between -5 and -35 dB.
inline double schroeder_rt60_ms(const AudioClip& rir) {
  const std::size_t n = rir.size();
  if (n < 2) throw Error(Errc::TooShort, "rir too short for decay analysis");
  std::vector<double> edc(n);
  double acc = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    acc += rir.samples[i] * rir.samples[i];
    edc[i] = acc;
  }
  if (acc <= 0.0) throw Error(Errc::SilentInput, "rir has no energy");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double db = 10.0 * std::log10(edc[i] / acc);
    if (db > -5.0) continue;
    if (db < -35.0) break;
    const double x = static_cast<double>(i);
    sx += x;
    sy += db;
    sxx += x * x;
    sxy += x * db;
    ++count;
  }
  if (count < 2) throw Error(Errc::TooShort, "decay range -5..-35 dB not covered");
  const double cnt = static_cast<double>(count);
  const double slope = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
  return -60.0 / slope / rir.sample_rate_hz * 1000.0;
}

/// Linear convolution truncated to the input length; no level correction.
inline std::vector<double> convolve_truncated(const AudioClip& clip, const AudioClip& rir) {
  require_same_rate(clip, rir);
  std::vector<double> full = fft_convolve(clip.samples, rir.samples);
  full.resize(clip.size());
  return full;
}

/// Convolve with `rir`, then restore the input's RMS level and hard-clip.
inline AudioClip apply_reverb(const AudioClip& clip, const AudioClip& rir) {
  require_same_rate(clip, rir);
  if (clip.empty() || is_silent(clip)) throw Error(Errc::SilentInput, "input is silent");
  AudioClip out;
  out.sample_rate_hz = clip.sample_rate_hz;
  out.samples = convolve_truncated(clip, rir);
  if (mean_square(out.samples) <= 0.0) throw Error(Errc::SilentInput, "reverberated signal is silent");
  return normalize_to_dbfs(out, rms_dbfs(clip));
}

// --------------------------------------------------------------------------
// Packet loss

struct GilbertParams {
  double p_loss = 0.0;     // healthy -> lost, per frame
  double p_recover = 1.0;  // lost -> healthy, per frame

  double stationary_loss() const {
    const double s = p_loss + p_recover;
    return s > 0.0 ? p_loss / s : 0.0;
  }

  /// Parameters with the given stationary loss rate and recovery probability.
  static GilbertParams from_loss_rate(double loss_rate, double p_recover) {
    if (!(loss_rate >= 0.0 && loss_rate < 1.0)) throw Error(Errc::InvalidParams, "loss rate must be in [0,1)");
    return {loss_rate * p_recover / (1.0 - loss_rate), p_recover};
  }
};

struct LossTrace {
  int frame_ms = 20;
  std::vector<bool> events;  // true = lost

  double loss_fraction() const {
    if (events.empty()) return 0.0;
    std::size_t lost = 0;
    for (bool e : events) lost += e ? 1 : 0;
    return static_cast<double>(lost) / static_cast<double>(events.size());
  }
};

/// Two-state Markov chain started from its stationary distribution.
inline LossTrace gen_loss_trace(const GilbertParams& params, std::size_t n_frames, std::uint64_t seed,
                                int frame_ms = 20) {
  const auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!in_unit(params.p_loss) || !in_unit(params.p_recover)) {
    throw Error(Errc::InvalidParams, "gilbert probabilities must lie in [0,1]");
  }
  if (n_frames == 0) throw Error(Errc::InvalidParams, "n_frames must be >= 1");
  if (frame_ms <= 0) throw Error(Errc::InvalidParams, "frame_ms must be positive");
  Rng rng(seed);
  LossTrace trace;
  trace.frame_ms = frame_ms;
  trace.events.resize(n_frames);
  bool lost = rng.bernoulli(params.stationary_loss());
  for (std::size_t i = 0; i < n_frames; ++i) {
    if (i > 0) lost = lost ? !rng.bernoulli(params.p_recover) : rng.bernoulli(params.p_loss);
    trace.events[i] = lost;
  }
  return trace;
}

struct Concealment {
  enum class Kind { ZeroFill, RepeatLastFrame };
  Kind kind = Kind::ZeroFill;
  double attenuation_db = 0.0;  // per repeat, RepeatLastFrame only

  static Concealment zero_fill() { return {}; }
  static Concealment repeat_last(double attenuation_db) { return {Kind::RepeatLastFrame, attenuation_db}; }
};

/// Replace the lost frames of `clip` per the concealment policy. Frames past
/// the end of the trace follow its last event.
inline AudioClip apply_trace(const AudioClip& clip, const LossTrace& trace, const Concealment& concealment) {
  if (trace.events.empty()) throw Error(Errc::EmptyTrace, "loss trace has no events");
  if (trace.frame_ms <= 0) throw Error(Errc::InvalidParams, "frame_ms must be positive");
  const auto frame = static_cast<std::size_t>(trace.frame_ms) * static_cast<std::size_t>(clip.sample_rate_hz) / 1000;
  if (frame == 0) throw Error(Errc::InvalidParams, "frame shorter than one sample");
  AudioClip out = clip;
  const double repeat_gain = std::pow(10.0, -concealment.attenuation_db / 20.0);
  const std::size_t n_frames = (clip.size() + frame - 1) / frame;
  for (std::size_t f = 0; f < n_frames; ++f) {
    const bool lost = trace.events[std::min(f, trace.events.size() - 1)];
    if (!lost) continue;
    const std::size_t begin = f * frame;
    const std::size_t end = std::min(begin + frame, clip.size());
    if (concealment.kind == Concealment::Kind::ZeroFill || f == 0) {
      std::fill(out.samples.begin() + begin, out.samples.begin() + end, 0.0);
    } else {
      const std::size_t prev = begin - frame;
      for (std::size_t i = begin; i < end; ++i) out.samples[i] = out.samples[prev + (i - begin)] * repeat_gain;
    }
  }
  return out;
}

/// Text format: `frame_ms=<int>` on the first line, then one '0'/'1' per frame.
inline void write_loss_trace(const LossTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << "frame_ms=" << trace.frame_ms << '\n';
  for (bool e : trace.events) out << (e ? '1' : '0');
  out << '\n';
  if (!out) throw Error(Errc::IoError, "short write to " + path.string());
}

inline LossTrace parse_loss_trace(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string header;
  if (!std::getline(in, header) || header.rfind("frame_ms=", 0) != 0) {
    throw Error(Errc::InvalidParams, "loss trace must start with frame_ms=<int>");
  }
  LossTrace trace;
  try {
    std::size_t used = 0;
    trace.frame_ms = std::stoi(header.substr(9), &used);
    if (header.find_first_not_of(" \t\r", 9 + used) != std::string::npos) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw Error(Errc::InvalidParams, "bad frame_ms value: " + header);
  }
  if (trace.frame_ms <= 0) throw Error(Errc::InvalidParams, "frame_ms must be positive");
  char c;
  while (in.get(c)) {
    if (c == '0' || c == '1') {
      trace.events.push_back(c == '1');
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      throw Error(Errc::InvalidParams, std::string("unexpected character in loss trace: ") + c);
    }
  }
  if (trace.events.empty()) throw Error(Errc::EmptyTrace, "loss trace has no events");
  return trace;
}

inline LossTrace read_loss_trace(const std::filesystem::path& path) {
  const std::vector<char> bytes = detail::read_file(path);
  return parse_loss_trace(std::string_view(bytes.data(), bytes.size()));
}

// --------------------------------------------------------------------------
// Low volume and clean source material

inline constexpr double kLowVolumeMinDbfs = -50.0;
inline constexpr double kLowVolumeMaxDbfs = -35.0;
inline constexpr double kPlaybackDbfs = -25.0;

inline AudioClip make_low_volume(const AudioClip& clip, double target_dbfs) {
  if (!(target_dbfs >= kLowVolumeMinDbfs && target_dbfs <= kLowVolumeMaxDbfs)) {
    throw Error(Errc::OutOfRange, "low-volume target must lie in [-50, -35] dBFS");
  }
  return normalize_to_dbfs(clip, target_dbfs);
}

/// Deterministic speech-like signal at -25 dBFS.
///
/// A sawtooth glottal source whose pitch random-walks inside a per-speaker
/// range (within 80-300 Hz) drives 2-3 parallel formant resonators whose
/// centers glide between syllables. Voiced syllables alternate with unvoiced
/// (high-passed noise) segments and pauses. A -60 dB noise floor is added so
/// pauses are not digital silence.
inline AudioClip pseudo_speech(std::uint64_t seed, double duration_s, int fs = kSampleRate) {
  if (!(duration_s >= 0.5)) throw Error(Errc::TooShort, "pseudo speech needs at least 0.5 s");
  Rng rng(seed);
  const auto n = static_cast<std::size_t>(std::llround(duration_s * fs));
  AudioClip out;
  out.sample_rate_hz = fs;
  out.samples.assign(n, 0.0);

  const bool high_voice = rng.bernoulli(0.5);
  const double f0_lo = high_voice ? 160.0 : 80.0;
  const double f0_hi = high_voice ? 300.0 : 180.0;
  double f0 = rng.uniform(f0_lo, f0_hi);
  const int n_formants = 2 + static_cast<int>(rng.below(2));
  static constexpr std::array<std::array<double, 2>, 3> kFormantRange = {{{300, 900}, {900, 2500}, {2500, 3500}}};

  struct Resonator {
    double freq, target, bw, weight, y1 = 0, y2 = 0;
  };
  std::array<Resonator, 3> formants{};
  for (int k = 0; k < n_formants; ++k) {
    const auto& r = kFormantRange[static_cast<std::size_t>(k)];
    formants[static_cast<std::size_t>(k)] = {rng.uniform(r[0], r[1]), 0.0, rng.uniform(60.0, 160.0),
                                             1.0 / (k + 1.0)};
    formants[static_cast<std::size_t>(k)].target = formants[static_cast<std::size_t>(k)].freq;
  }
  double fric_y1 = 0.0, fric_y2 = 0.0;

  enum class Seg { Voiced, Unvoiced, Pause };
  std::size_t pos = 0;
  double phase = 0.0;
  int syllables_left = 1 + static_cast<int>(rng.below(4));
  while (pos < n) {
    Seg seg;
    std::size_t len;
    if (syllables_left == 0) {
      seg = Seg::Pause;
      len = static_cast<std::size_t>(rng.uniform(0.06, 0.30) * fs);
      syllables_left = 1 + static_cast<int>(rng.below(4));
    } else if (rng.bernoulli(0.25)) {
      seg = Seg::Unvoiced;
      len = static_cast<std::size_t>(rng.uniform(0.03, 0.10) * fs);
    } else {
      seg = Seg::Voiced;
      len = static_cast<std::size_t>(rng.uniform(0.08, 0.25) * fs);
      --syllables_left;
      for (int k = 0; k < n_formants; ++k) {
        const auto& r = kFormantRange[static_cast<std::size_t>(k)];
        formants[static_cast<std::size_t>(k)].target = rng.uniform(r[0], r[1]);
      }
    }
    len = std::min(len, n - pos);
    const double amp = seg == Seg::Voiced ? rng.uniform(0.6, 1.0) : seg == Seg::Unvoiced ? rng.uniform(0.1, 0.3) : 0.0;
    const double fric_freq = rng.uniform(3000.0, 6000.0);
    const double fric_r = std::exp(-std::numbers::pi * 1500.0 / fs);
    const double fric_c = 2.0 * fric_r * std::cos(2.0 * std::numbers::pi * fric_freq / fs);
    for (std::size_t i = 0; i < len; ++i) {
      const double t = static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(len, 1));
      const double env = amp * std::sin(std::numbers::pi * t);
      if ((pos + i) % 80 == 0) {
        f0 += rng.normal() * 2.0;
        if (f0 < f0_lo) f0 = 2.0 * f0_lo - f0;
        if (f0 > f0_hi) f0 = 2.0 * f0_hi - f0;
        f0 = std::clamp(f0, 80.0, 300.0);
        for (int k = 0; k < n_formants; ++k) {
          auto& fm = formants[static_cast<std::size_t>(k)];
          fm.freq += 0.05 * (fm.target - fm.freq);
        }
      }
      double sample = 0.0;
      if (seg == Seg::Voiced) {
        phase += f0 / fs;
        if (phase >= 1.0) phase -= 1.0;
        const double source = 2.0 * phase - 1.0;
        for (int k = 0; k < n_formants; ++k) {
          auto& fm = formants[static_cast<std::size_t>(k)];
          const double r = std::exp(-std::numbers::pi * fm.bw / fs);
          const double c = 2.0 * r * std::cos(2.0 * std::numbers::pi * fm.freq / fs);
          const double y = (1.0 - r) * source + c * fm.y1 - r * r * fm.y2;
          fm.y2 = fm.y1;
          fm.y1 = y;
          sample += fm.weight * y;
        }
      } else if (seg == Seg::Unvoiced) {
        const double y = (1.0 - fric_r) * rng.normal() + fric_c * fric_y1 - fric_r * fric_r * fric_y2;
        fric_y2 = fric_y1;
        fric_y1 = y;
        sample = y;
      }
      out.samples[pos + i] = env * sample;
    }
    pos += len;
  }
  if (mean_square(out.samples) <= 0.0) out.samples[0] = 1e-3;
  out = normalize_to_dbfs(out, kPlaybackDbfs);
  const double floor_rms = std::pow(10.0, (kPlaybackDbfs - 60.0) / 20.0);
  for (double& x : out.samples) x += floor_rms * rng.normal();
  return normalize_to_dbfs(out, kPlaybackDbfs);
}

}  // namespace aimp
