#pragma once

// Labeled dataset of synthesized clips, the class-balanced builder, and the
// JSON-lines manifest format.

#include <aimp/audio_io.hpp>
#include <aimp/impair_synth.hpp>
#include <aimp/rng.hpp>

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace aimp {

enum class Split { Unassigned, Train, Val, Test };

constexpr std::string_view to_string(Split s) {
  switch (s) {
    case Split::Unassigned: return "unassigned";
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "unassigned";
}

inline Split split_from_string(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  if (s == "unassigned") return Split::Unassigned;
  throw Error(Errc::InvalidConfig, "unknown split tag: " + std::string(s));
}

inline ImpairmentClass class_from_string(std::string_view s) {
  for (ImpairmentClass c : kAllClasses) {
    if (to_string(c) == s) return c;
  }
  throw Error(Errc::BadLabel, "unknown class name: " + std::string(s));
}

/// Parameters drawn while synthesizing one record; unset fields do not apply.
struct SynthParams {
  std::optional<double> snr_db;
  std::optional<std::string> noise_source;
  std::optional<double> rt60_ms;
  std::optional<double> loss_rate;
  std::optional<double> p_loss;
  std::optional<double> p_recover;
  std::optional<double> target_dbfs;
};

inline nlohmann::json to_json(const SynthParams& p) {
  nlohmann::json j = nlohmann::json::object();
  if (p.snr_db) j["snr_db"] = *p.snr_db;
  if (p.noise_source) j["noise_source"] = *p.noise_source;
  if (p.rt60_ms) j["rt60_ms"] = *p.rt60_ms;
  if (p.loss_rate) j["loss_rate"] = *p.loss_rate;
  if (p.p_loss) j["p_loss"] = *p.p_loss;
  if (p.p_recover) j["p_recover"] = *p.p_recover;
  if (p.target_dbfs) j["target_dbfs"] = *p.target_dbfs;
  return j;
}

inline SynthParams synth_params_from_json(const nlohmann::json& j) {
  SynthParams p;
  const auto num = [&](const char* key, std::optional<double>& dst) {
    if (j.contains(key)) dst = j.at(key).get<double>();
  };
  num("snr_db", p.snr_db);
  num("rt60_ms", p.rt60_ms);
  num("loss_rate", p.loss_rate);
  num("p_loss", p.p_loss);
  num("p_recover", p.p_recover);
  num("target_dbfs", p.target_dbfs);
  if (j.contains("noise_source")) p.noise_source = j.at("noise_source").get<std::string>();
  return p;
}

struct Record {
  std::size_t clip_id = 0;  // index into LabeledDataset::clips
  ImpairmentClass true_label = ImpairmentClass::NoImpairment;
  ImpairmentClass observed_label = ImpairmentClass::NoImpairment;
  SynthParams params;
  Split split = Split::Unassigned;
  std::uint64_t seed = 0;
  std::string clip_path;
};

/// Records reference shared, immutable audio; copies of a dataset (and
/// label-noise copies of a record) never duplicate samples.
struct LabeledDataset {
  std::vector<std::shared_ptr<const AudioClip>> clips;
  std::vector<Record> records;

  const AudioClip& clip(const Record& r) const { return *clips.at(r.clip_id); }
  std::size_t size() const noexcept { return records.size(); }

  std::array<std::size_t, kNumClasses> class_histogram() const {
    std::array<std::size_t, kNumClasses> h{};
    for (const Record& r : records) ++h[static_cast<std::size_t>(code(r.true_label))];
    return h;
  }

  /// Records with the given split tag, sharing this dataset's clips.
  LabeledDataset subset(Split split) const {
    LabeledDataset out;
    out.clips = clips;
    for (const Record& r : records) {
      if (r.split == split) out.records.push_back(r);
    }
    return out;
  }
};

struct SynthConfig {
  std::vector<double> snr_grid_db = {0, 5, 10, 15, 20, 25, 30};
  std::vector<double> rt60_grid_ms = {300, 600, 900, 1200};
  std::vector<double> loss_rates = {0.05, 0.1, 0.2};
  double p_recover = 0.5;
  Concealment concealment = Concealment::zero_fill();
  double low_volume_min_dbfs = kLowVolumeMinDbfs;
  double low_volume_max_dbfs = kLowVolumeMaxDbfs;
  double playback_dbfs = kPlaybackDbfs;
  /// Recorded noise clips; when empty, seeded shaped noise is generated per record.
  std::vector<AudioClip> noise_corpus;
};

namespace detail {

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v) {
  return v[rng.below(v.size())];
}

inline AudioClip synthesize_record(const AudioClip& clean, ImpairmentClass cls, const SynthConfig& cfg,
                                   std::uint64_t seed, SynthParams& params) {
  Rng rng(seed);
  switch (cls) {
    case ImpairmentClass::BackgroundNoise: {
      const double snr = pick(rng, cfg.snr_grid_db);
      params.snr_db = snr;
      if (cfg.noise_corpus.empty()) {
        const NoiseKind kind = kAllNoiseKinds[rng.below(kAllNoiseKinds.size())];
        params.noise_source = std::string(to_string(kind));
        const AudioClip noise = shaped_noise(kind, rng.next_u64(), clean.size(), clean.sample_rate_hz);
        return normalize_to_dbfs(mix_at_snr(clean, noise, snr), cfg.playback_dbfs);
      }
      const std::size_t idx = rng.below(cfg.noise_corpus.size());
      const AudioClip& noise = cfg.noise_corpus[idx];
      params.noise_source = "corpus:" + std::to_string(idx);
      const std::size_t slack = noise.size() > clean.size() ? noise.size() - clean.size() : 0;
      const std::size_t offset = slack > 0 ? rng.below(slack + 1) : 0;
      return normalize_to_dbfs(mix_at_snr(clean, noise, snr, offset), cfg.playback_dbfs);
    }
    case ImpairmentClass::Reverb: {
      const double rt60 = pick(rng, cfg.rt60_grid_ms);
      params.rt60_ms = rt60;
      const AudioClip rir = synth_rir(rt60, clean.sample_rate_hz, rt60 / 1000.0, rng.next_u64());
      return normalize_to_dbfs(apply_reverb(clean, rir), cfg.playback_dbfs);
    }
    case ImpairmentClass::SpeechDistortion: {
      const double rate = pick(rng, cfg.loss_rates);
      const GilbertParams gp = GilbertParams::from_loss_rate(rate, cfg.p_recover);
      params.loss_rate = rate;
      params.p_loss = gp.p_loss;
      params.p_recover = gp.p_recover;
      const std::size_t frame = static_cast<std::size_t>(clean.sample_rate_hz) * 20 / 1000;
      const std::size_t n_frames = (clean.size() + frame - 1) / frame;
      // A trace that blanks the whole clip cannot be level-normalized; redraw.
      for (;;) {
        const LossTrace trace = gen_loss_trace(gp, n_frames, rng.next_u64());
        AudioClip out = apply_trace(clean, trace, cfg.concealment);
        if (!is_silent(out)) return normalize_to_dbfs(out, cfg.playback_dbfs);
      }
    }
    case ImpairmentClass::LowVolume: {
      const double target = rng.uniform(cfg.low_volume_min_dbfs, cfg.low_volume_max_dbfs);
      params.target_dbfs = target;
      return make_low_volume(clean, target);
    }
    case ImpairmentClass::NoImpairment:
      return normalize_to_dbfs(clean, cfg.playback_dbfs);
  }
  throw Error(Errc::BadLabel, "unknown impairment class");
}

}  // namespace detail

/// `per_class` records of each class. Record i (class-major order) takes
/// clean clip i modulo the corpus size and draws its parameters from the
/// stream derive_seed(seed, i).
inline LabeledDataset build_dataset(const std::vector<AudioClip>& clean_corpus, std::size_t per_class,
                                    const SynthConfig& cfg, std::uint64_t seed) {
  if (clean_corpus.empty()) throw Error(Errc::EmptyCorpus, "clean corpus is empty");
  if (per_class == 0) throw Error(Errc::InvalidParams, "per_class must be >= 1");
  if (cfg.snr_grid_db.empty() || cfg.rt60_grid_ms.empty() || cfg.loss_rates.empty()) {
    throw Error(Errc::InvalidParams, "synthesis grids must be non-empty");
  }
  for (const AudioClip& c : clean_corpus) {
    if (c.sample_rate_hz != kSampleRate) throw Error(Errc::SampleRateMismatch, "corpus clips must be 16 kHz");
  }
  for (const AudioClip& c : cfg.noise_corpus) {
    if (c.sample_rate_hz != kSampleRate) throw Error(Errc::SampleRateMismatch, "noise clips must be 16 kHz");
  }
  LabeledDataset ds;
  ds.clips.reserve(per_class * kNumClasses);
  ds.records.reserve(per_class * kNumClasses);
  for (ImpairmentClass cls : kAllClasses) {
    for (std::size_t j = 0; j < per_class; ++j) {
      const std::size_t index = ds.records.size();
      Record r;
      r.seed = derive_seed(seed, index);
      r.true_label = cls;
      r.observed_label = cls;
      const AudioClip& clean = clean_corpus[index % clean_corpus.size()];
      AudioClip clip = detail::synthesize_record(clean, cls, cfg, r.seed, r.params);
      r.clip_id = ds.clips.size();
      ds.clips.push_back(std::make_shared<const AudioClip>(std::move(clip)));
      ds.records.push_back(std::move(r));
    }
  }
  return ds;
}

/// Pseudo-speech clean corpus of `count` clips.
inline std::vector<AudioClip> pseudo_speech_corpus(std::size_t count, double duration_s, std::uint64_t seed) {
  std::vector<AudioClip> corpus;
  corpus.reserve(count);
  for (std::size_t i = 0; i < count; ++i) corpus.push_back(pseudo_speech(derive_seed(seed, i), duration_s));
  return corpus;
}

// --------------------------------------------------------------------------
// Manifest: one JSON object per line
// {clip_path, true_label, observed_label, class_params, split, seed}

inline nlohmann::json record_to_json(const Record& r) {
  return {{"clip_path", r.clip_path},
          {"true_label", code(r.true_label)},
          {"observed_label", code(r.observed_label)},
          {"class_params", to_json(r.params)},
          {"split", std::string(to_string(r.split))},
          {"seed", r.seed}};
}

/// Writes every referenced clip to `dir`/clips/<clip_id>.wav and the manifest
/// to `dir`/manifest.jsonl. Returns the manifest path.
inline std::filesystem::path write_manifest(LabeledDataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "clips", ec);
  if (ec) throw Error(Errc::IoError, "cannot create " + (dir / "clips").string());
  std::vector<bool> written(ds.clips.size(), false);
  for (Record& r : ds.records) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.wav", r.clip_id);
    r.clip_path = (fs::path("clips") / name).generic_string();
    if (!written[r.clip_id]) {
      write_wav(ds.clip(r), dir / r.clip_path);
      written[r.clip_id] = true;
    }
  }
  const fs::path manifest = dir / "manifest.jsonl";
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + manifest.string());
  for (const Record& r : ds.records) out << record_to_json(r).dump() << '\n';
  if (!out) throw Error(Errc::IoError, "short write to " + manifest.string());
  return manifest;
}

/// Loads a manifest; clip paths are resolved relative to the manifest's directory.
inline LabeledDataset read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw Error(Errc::IoError, "cannot open " + manifest.string());
  LabeledDataset ds;
  std::map<std::string, std::size_t> clip_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::InvalidConfig, manifest.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    Record r;
    try {
      r.clip_path = j.at("clip_path").get<std::string>();
      r.true_label = class_from_code(j.at("true_label").get<int>());
      r.observed_label = class_from_code(j.at("observed_label").get<int>());
      if (j.contains("class_params")) r.params = synth_params_from_json(j.at("class_params"));
      r.split = split_from_string(j.value("split", std::string("unassigned")));
      r.seed = j.value("seed", std::uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::InvalidConfig, manifest.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    auto [it, inserted] = clip_ids.try_emplace(r.clip_path, ds.clips.size());
    if (inserted) {
      ds.clips.push_back(std::make_shared<const AudioClip>(read_wav(manifest.parent_path() / r.clip_path)));
    }
    r.clip_id = it->second;
    ds.records.push_back(std::move(r));
  }
  return ds;
}

}  // namespace aimp
