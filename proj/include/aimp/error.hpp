#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace aimp {

enum class Errc {
  NotWav,
  UnsupportedFormat,
  EmptyAudio,
  IoError,
  SilentInput,
  SampleRateMismatch,
  InvalidRt60,
  TooShort,
  InvalidParams,
  EmptyTrace,
  OutOfRange,
  EmptyCorpus,
  TooManyBands,
  ShapeMismatch,
  BadLabel,
  EmptySet,
  CorruptModel,
  BadConfusion,
  TooSmall,
  InvalidGrid,
  InvalidConfig,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::NotWav: return "NotWav";
    case Errc::UnsupportedFormat: return "UnsupportedFormat";
    case Errc::EmptyAudio: return "EmptyAudio";
    case Errc::IoError: return "IoError";
    case Errc::SilentInput: return "SilentInput";
    case Errc::SampleRateMismatch: return "SampleRateMismatch";
    case Errc::InvalidRt60: return "InvalidRt60";
    case Errc::TooShort: return "TooShort";
    case Errc::InvalidParams: return "InvalidParams";
    case Errc::EmptyTrace: return "EmptyTrace";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::EmptyCorpus: return "EmptyCorpus";
    case Errc::TooManyBands: return "TooManyBands";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::BadLabel: return "BadLabel";
    case Errc::EmptySet: return "EmptySet";
    case Errc::CorruptModel: return "CorruptModel";
    case Errc::BadConfusion: return "BadConfusion";
    case Errc::TooSmall: return "TooSmall";
    case Errc::InvalidGrid: return "InvalidGrid";
    case Errc::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

/// Every failure in the library is reported as an Error carrying a stable code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace aimp
