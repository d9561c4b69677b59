#pragma once

// Mono audio container, PCM16 WAV I/O and RMS level utilities.

#include <aimp/error.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace aimp {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

inline constexpr int kSampleRate = 16000;

/// Mono sample buffer; full scale is 1.0.
struct AudioClip {
  std::vector<double> samples;
  int sample_rate_hz = kSampleRate;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate_hz; }
};

/// Saturate every sample into [-1, 1].
inline void hard_clip(std::span<double> samples) {
  for (double& x : samples) x = std::clamp(x, -1.0, 1.0);
}

inline double mean_square(std::span<const double> samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (double x : samples) acc += x * x;
  return acc / static_cast<double>(samples.size());
}

/// RMS level in dBFS; an all-zero clip yields -infinity ("silent").
inline double rms_dbfs(const AudioClip& clip) {
  if (clip.empty()) throw Error(Errc::EmptyAudio, "rms_dbfs of an empty clip");
  const double ms = mean_square(clip.samples);
  if (ms <= 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(ms);
}

inline bool is_silent(const AudioClip& clip) {
  return std::isinf(rms_dbfs(clip));
}

inline AudioClip normalize_to_dbfs(const AudioClip& clip, double target_dbfs) {
  if (target_dbfs > 0.0) throw Error(Errc::OutOfRange, "target level must be <= 0 dBFS");
  const double level = rms_dbfs(clip);
  if (std::isinf(level)) throw Error(Errc::SilentInput, "cannot normalize a silent clip");
  const double gain = std::pow(10.0, (target_dbfs - level) / 20.0);
  AudioClip out = clip;
  for (double& x : out.samples) x *= gain;
  hard_clip(out.samples);
  return out;
}

namespace detail {

template <typename T>
void put_le(std::vector<char>& buf, T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  buf.insert(buf.end(), bytes.begin(), bytes.end());
}

template <typename T>
T get_le(const char* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  return value;
}

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::IoError, "short write to " + path.string());
}

}  // namespace detail

/// Decode a RIFF/WAVE PCM16 mono file; samples are int16 / 32768.
inline AudioClip read_wav(const std::filesystem::path& path) {
  const std::vector<char> bytes = detail::read_file(path);
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw Error(Errc::NotWav, path.string() + " is not a RIFF/WAVE file");
  }

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = bytes.data() + pos;
    const auto chunk_size = detail::get_le<std::uint32_t>(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + chunk_size > bytes.size() && std::memcmp(id, "data", 4) != 0) {
      throw Error(Errc::NotWav, "truncated chunk in " + path.string());
    }
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (chunk_size < 16) throw Error(Errc::NotWav, "short fmt chunk");
      format = detail::get_le<std::uint16_t>(bytes.data() + body);
      channels = detail::get_le<std::uint16_t>(bytes.data() + body + 2);
      rate = detail::get_le<std::uint32_t>(bytes.data() + body + 4);
      bits = detail::get_le<std::uint16_t>(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw Error(Errc::NotWav, "data chunk before fmt chunk");
      if (format != 1) throw Error(Errc::UnsupportedFormat, "only PCM is supported");
      if (channels != 1) throw Error(Errc::UnsupportedFormat, "only mono is supported");
      if (bits != 16) throw Error(Errc::UnsupportedFormat, "only 16-bit samples are supported");
      if (rate == 0) throw Error(Errc::UnsupportedFormat, "zero sample rate");
      const std::size_t avail = std::min<std::size_t>(chunk_size, bytes.size() - body);
      const std::size_t n = avail / 2;
      if (n == 0) throw Error(Errc::EmptyAudio, path.string() + " has no samples");
      AudioClip clip;
      clip.sample_rate_hz = static_cast<int>(rate);
      clip.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        clip.samples[i] = detail::get_le<std::int16_t>(bytes.data() + body + 2 * i) / 32768.0;
      }
      return clip;
    }
    pos = body + chunk_size + (chunk_size & 1u);
  }
  throw Error(have_fmt ? Errc::EmptyAudio : Errc::NotWav, "no data chunk in " + path.string());
}

/// Encode as PCM16 mono; values are rounded and saturated to [-32768, 32767].
inline void write_wav(const AudioClip& clip, const std::filesystem::path& path) {
  if (clip.empty()) throw Error(Errc::EmptyAudio, "refusing to write an empty clip");
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  const auto rate = static_cast<std::uint32_t>(clip.sample_rate_hz);
  std::vector<char> buf;
  buf.reserve(44 + 2 * n);
  buf.insert(buf.end(), {'R', 'I', 'F', 'F'});
  detail::put_le<std::uint32_t>(buf, 36 + 2 * n);
  buf.insert(buf.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::put_le<std::uint32_t>(buf, 16);
  detail::put_le<std::uint16_t>(buf, 1);
  detail::put_le<std::uint16_t>(buf, 1);
  detail::put_le<std::uint32_t>(buf, rate);
  detail::put_le<std::uint32_t>(buf, rate * 2);
  detail::put_le<std::uint16_t>(buf, 2);
  detail::put_le<std::uint16_t>(buf, 16);
  buf.insert(buf.end(), {'d', 'a', 't', 'a'});
  detail::put_le<std::uint32_t>(buf, 2 * n);
  for (double x : clip.samples) {
    const double scaled = std::round(x * 32768.0);
    detail::put_le<std::int16_t>(buf, static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0)));
  }
  detail::write_file(path, buf);
}

}  // namespace aimp
