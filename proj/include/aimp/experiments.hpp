#pragma once

// Experiment harness: stratified splitting, example sampling per classifier
// kind, evaluation, single runs, classifier x noise grids and the
// training-size vs. label-noise sweep, plus report emission.

#include <aimp/dataset.hpp>
#include <aimp/error.hpp>
#include <aimp/features.hpp>
#include <aimp/label_noise.hpp>
#include <aimp/nn/layers.hpp>
#include <aimp/nn/model.hpp>
#include <aimp/nn/serialize.hpp>
#include <aimp/nn/train.hpp>
#include <aimp/rng.hpp>

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace aimp {

using nn::ModelKind;

// ---------------------------------------------------------------------------
// Splitting

struct SplitFractions {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

inline void validate(const SplitFractions& f) {
  if (!(f.train > 0.0 && f.val > 0.0 && f.test > 0.0)) {
    throw Error(Errc::InvalidConfig, "split fractions must be positive");
  }
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw Error(Errc::InvalidConfig, "split fractions must sum to 1");
  }
}

namespace detail {

/// Largest-remainder apportionment of n items to three shares, each share
/// getting at least one item; every count stays within one of its quota.
inline std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& shares) {
  std::array<double, 3> quota{};
  std::array<std::size_t, 3> count{};
  std::size_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    quota[s] = shares[s] * static_cast<double>(n);
    count[s] = static_cast<std::size_t>(std::floor(quota[s]));
    assigned += count[s];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return quota[a] - std::floor(quota[a]) > quota[b] - std::floor(quota[b]);
  });
  for (int i = 0; assigned < n; ++i, ++assigned) ++count[order[i % 3]];
  for (int s = 0; s < 3; ++s) {
    if (count[s] > 0) continue;
    int donor = -1;
    for (int d = 0; d < 3; ++d) {
      if (count[d] >= 2 && (donor < 0 || count[d] - quota[d] > count[donor] - quota[donor])) donor = d;
    }
    --count[donor];
    ++count[s];
  }
  return count;
}

}  // namespace detail

/// Tags every record with a split, stratified by true class. Records sharing
/// a clip always land in the same split.
inline LabeledDataset split_dataset(const LabeledDataset& ds, const SplitFractions& f, std::uint64_t seed) {
  validate(f);
  // Group records by clip; a clip's class is that of its first record.
  std::map<std::size_t, std::vector<std::size_t>> by_clip;
  std::vector<std::size_t> clip_order;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto [it, inserted] = by_clip.try_emplace(ds.records[i].clip_id);
    if (inserted) clip_order.push_back(ds.records[i].clip_id);
    it->second.push_back(i);
  }
  std::array<std::vector<std::size_t>, kNumClasses> per_class;
  for (std::size_t clip : clip_order) {
    per_class[code(ds.records[by_clip[clip].front()].true_label)].push_back(clip);
  }

  LabeledDataset out = ds;
  for (int c = 0; c < kNumClasses; ++c) {
    auto& clips = per_class[c];
    const std::size_t n = clips.size();
    if (n < 3) {
      throw Error(Errc::TooSmall, std::string(to_string(class_from_code(c))) + " has " + std::to_string(n) +
                                      " clips; at least 3 are needed to stratify");
    }
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    for (std::size_t i = n; i > 1; --i) std::swap(clips[i - 1], clips[rng.below(i)]);
    const auto counts = detail::apportion(n, {f.train, f.val, f.test});
    const std::size_t n_train = counts[0], n_val = counts[1];
    for (std::size_t i = 0; i < n; ++i) {
      const Split s = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
      for (std::size_t r : by_clip[clips[i]]) out.records[r].split = s;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-clip representations

/// Caches full-clip log-mel spectrograms and engineered vectors by clip id.
class FeatureStore {
 public:
  explicit FeatureStore(std::vector<std::shared_ptr<const AudioClip>> clips, EngineeredConfig cfg = {})
      : clips_(std::move(clips)), cfg_(cfg), mel_(clips_.size()), eng_(clips_.size()) {}

  const AudioClip& clip(std::size_t id) const { return *clips_.at(id); }

  const Tensor<float>& log_mel(std::size_t id) {
    auto& slot = mel_.at(id);
    if (!slot) {
      const Tensor<double> m = full_log_mel(clip(id));
      slot.emplace(m.shape);
      std::transform(m.data.begin(), m.data.end(), slot->data.begin(), [](double v) { return static_cast<float>(v); });
    }
    return *slot;
  }

  const EngineeredVector& engineered(std::size_t id) {
    auto& slot = eng_.at(id);
    if (!slot) slot = engineered_vector(clip(id), cfg_);
    return *slot;
  }

  /// Computes whatever `kind` needs for `ids` so later reads are cache hits.
  void warm(ModelKind kind, const std::vector<std::size_t>& ids) {
    for (std::size_t id : ids) {
      if (kind == ModelKind::MelCnn2D) log_mel(id);
      if (kind == ModelKind::DenseNet18) engineered(id);
    }
  }

 private:
  std::vector<std::shared_ptr<const AudioClip>> clips_;
  EngineeredConfig cfg_;
  std::vector<std::optional<Tensor<float>>> mel_;
  std::vector<std::optional<EngineeredVector>> eng_;
};

inline std::size_t required_samples(ModelKind kind) {
  switch (kind) {
    case ModelKind::MelCnn2D: return kMelSegmentSamples;
    case ModelKind::RawCnn1D: return kRawWindowSamples;
    case ModelKind::DenseNet18: return FrameParams{}.frame_len;
  }
  return 0;
}

/// An example is a clip plus a start offset (frames for mel, samples for raw).
struct Draw {
  std::size_t clip_id = 0;
  std::size_t offset = 0;
};

namespace detail {

inline std::size_t max_offset(ModelKind kind, const AudioClip& clip) {
  const std::size_t need = required_samples(kind);
  if (clip.size() < need) {
    throw Error(Errc::TooShort, "clip of " + std::to_string(clip.size()) + " samples is shorter than the " +
                                    std::to_string(need) + " needed by " + std::string(nn::to_string(kind)));
  }
  switch (kind) {
    case ModelKind::MelCnn2D: return frame_count(clip.size(), FrameParams{}) - kMelFrames;
    case ModelKind::RawCnn1D: return clip.size() - kRawWindowSamples;
    case ModelKind::DenseNet18: return 0;
  }
  return 0;
}

inline nn::ExampleSet make_examples(ModelKind kind, std::vector<Draw> draws, std::vector<int> labels,
                                    std::shared_ptr<FeatureStore> store) {
  std::vector<std::size_t> ids;
  for (const Draw& d : draws) ids.push_back(d.clip_id);
  store->warm(kind, ids);
  nn::ExampleSet set;
  set.example_shape = nn::build_architecture(kind).input;
  set.labels = std::move(labels);
  auto shared = std::make_shared<const std::vector<Draw>>(std::move(draws));
  switch (kind) {
    case ModelKind::MelCnn2D:
      set.fill = [shared, store](std::size_t i, std::span<float> out) {
        const Draw& d = (*shared)[i];
        const Tensor<float>& m = store->log_mel(d.clip_id);
        const std::size_t frames = m.dim(1);
        for (std::size_t b = 0; b < kMelBands; ++b) {
          std::copy_n(m.data.begin() + static_cast<std::ptrdiff_t>(b * frames + d.offset), kMelFrames,
                      out.begin() + static_cast<std::ptrdiff_t>(b * kMelFrames));
        }
      };
      break;
    case ModelKind::RawCnn1D:
      set.fill = [shared, store](std::size_t i, std::span<float> out) {
        const Draw& d = (*shared)[i];
        const auto& s = store->clip(d.clip_id).samples;
        std::transform(s.begin() + static_cast<std::ptrdiff_t>(d.offset),
                       s.begin() + static_cast<std::ptrdiff_t>(d.offset + kRawWindowSamples), out.begin(),
                       [](double v) { return static_cast<float>(v); });
      };
      break;
    case ModelKind::DenseNet18:
      set.fill = [shared, store](std::size_t i, std::span<float> out) {
        const EngineeredVector& v = store->engineered((*shared)[i].clip_id);
        for (std::size_t k = 0; k < kEngineeredDim; ++k) out[k] = static_cast<float>(v[k]);
      };
      break;
  }
  return set;
}

}  // namespace detail

/// Sampled training examples: one record per draw (a copy of the source
/// record, so label noise can be applied per example) and its crop.
struct TrainingDraws {
  LabeledDataset records;
  std::vector<Draw> draws;
};

/// `n` draws with replacement over the records of `ds`: a random record, then
/// a random segment offset for mel/raw (whole-clip features for the dense
/// classifier).
inline TrainingDraws draw_training_examples(const LabeledDataset& ds, ModelKind kind, std::size_t n,
                                            std::uint64_t seed, FeatureStore& store) {
  if (ds.records.empty()) throw Error(Errc::EmptySet, "no records to sample from");
  std::vector<std::size_t> max_off(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) max_off[i] = detail::max_offset(kind, store.clip(ds.records[i].clip_id));
  Rng rng(seed);
  TrainingDraws out;
  out.records.clips = ds.clips;
  out.records.records.reserve(n);
  out.draws.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = rng.below(ds.size());
    out.records.records.push_back(ds.records[r]);
    out.draws[i].clip_id = ds.records[r].clip_id;
    out.draws[i].offset = max_off[r] > 0 ? rng.below(max_off[r] + 1) : 0;
  }
  return out;
}

/// Label noise on individual training examples. Appended noisy copies keep
/// the crop of the example they were copied from.
inline TrainingDraws apply_noise(const TrainingDraws& t, const NoiseSpec& spec, std::uint64_t seed) {
  TrainingDraws out;
  out.records = apply_noise(t.records, spec, seed);
  out.draws = t.draws;
  const std::size_t n = t.draws.size();
  if (out.records.size() > n) {
    const std::size_t k = (out.records.size() - n) / n;
    for (std::size_t i = n; i < out.records.size(); ++i) out.draws.push_back(t.draws[(i - n) / k]);
  }
  return out;
}

/// Example set labelled with each draw's observed label.
inline nn::ExampleSet training_examples(const TrainingDraws& t, ModelKind kind, std::shared_ptr<FeatureStore> store) {
  std::vector<int> labels;
  labels.reserve(t.records.size());
  for (const Record& r : t.records.records) labels.push_back(code(r.observed_label));
  return detail::make_examples(kind, t.draws, std::move(labels), std::move(store));
}

inline nn::ExampleSet sample_training_examples(const LabeledDataset& ds, ModelKind kind, std::size_t n,
                                               std::uint64_t seed, std::shared_ptr<FeatureStore> store) {
  return training_examples(draw_training_examples(ds, kind, n, seed, *store), kind, store);
}

/// Deterministic evaluation examples labelled with true labels: `crops`
/// evenly spaced segments per record for mel/raw, one vector per record for
/// the dense classifier.
inline nn::ExampleSet evaluation_examples(const LabeledDataset& ds, ModelKind kind, std::size_t crops,
                                          std::shared_ptr<FeatureStore> store) {
  if (ds.records.empty()) throw Error(Errc::EmptySet, "evaluation split is empty");
  if (crops == 0) throw Error(Errc::InvalidConfig, "eval_crops_per_clip must be >= 1");
  const std::size_t per = kind == ModelKind::DenseNet18 ? 1 : crops;
  std::vector<Draw> draws;
  std::vector<int> labels;
  for (const Record& r : ds.records) {
    const std::size_t hi = detail::max_offset(kind, store->clip(r.clip_id));
    for (std::size_t c = 0; c < per; ++c) {
      const std::size_t off =
          per == 1 ? hi / 2 : static_cast<std::size_t>(std::llround(static_cast<double>(hi) * c / (per - 1.0)));
      draws.push_back({r.clip_id, off});
      labels.push_back(code(r.true_label));
    }
  }
  return detail::make_examples(kind, std::move(draws), std::move(labels), std::move(store));
}

/// Input normalization fitted on training examples: per-feature for the
/// dense classifier, one global mean/stddev for spectrogram and waveform inputs.
inline nn::InputScaling fit_input_scaling(ModelKind kind, const nn::ExampleSet& train, std::size_t max_examples = 512) {
  const std::size_t dim = shape_size(train.example_shape);
  const std::size_t n = std::min(train.size(), max_examples);
  if (n == 0) throw Error(Errc::EmptySet, "cannot fit input scaling on no examples");
  std::vector<float> row(dim);
  nn::InputScaling s;
  if (kind == ModelKind::DenseNet18) {
    std::vector<EngineeredVector> rows(n);
    for (std::size_t i = 0; i < n; ++i) {
      train.fill(i, row);
      for (std::size_t k = 0; k < kEngineeredDim; ++k) rows[i][k] = row[k];
    }
    const Standardizer st = Standardizer::fit(rows);
    s.mean = st.mean;
    s.stddev = st.stddev;
    return s;
  }
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    train.fill(i, row);
    for (float v : row) {
      sum += v;
      sq += static_cast<double>(v) * v;
    }
  }
  const double count = static_cast<double>(n) * static_cast<double>(dim);
  const double mean = sum / count;
  const double sd = std::sqrt(std::max(sq / count - mean * mean, 0.0));
  s.mean = {mean};
  s.stddev = {sd > 1e-12 ? sd : 1.0};
  return s;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  double accuracy = 0.0;
  /// confusion[predicted][truth], each column normalized by its true-class count.
  std::array<std::array<double, kNumClasses>, kNumClasses> confusion{};
  std::array<double, kNumClasses> recall{};
  std::array<std::size_t, kNumClasses> support{};
  std::size_t n_test = 0;
};

inline EvalReport evaluate_predictions(std::span<const int> predicted, std::span<const int> truth) {
  if (truth.empty()) throw Error(Errc::EmptySet, "no test examples");
  if (predicted.size() != truth.size()) throw Error(Errc::ShapeMismatch, "prediction count mismatch");
  EvalReport r;
  r.n_test = truth.size();
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> counts{};
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int p = code(class_from_code(predicted[i]));
    const int t = code(class_from_code(truth[i]));
    ++counts[p][t];
    ++r.support[t];
    correct += p == t;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n_test);
  for (int t = 0; t < kNumClasses; ++t) {
    if (r.support[t] == 0) continue;
    for (int p = 0; p < kNumClasses; ++p) {
      r.confusion[p][t] = static_cast<double>(counts[p][t]) / static_cast<double>(r.support[t]);
    }
    r.recall[t] = r.confusion[t][t];
  }
  return r;
}

/// Argmax of eval-mode logits against the set's labels.
inline EvalReport evaluate(const nn::Model<float>& model, const nn::ExampleSet& test) {
  if (test.empty()) throw Error(Errc::EmptySet, "test split is empty");
  const std::vector<int> pred = nn::predict(model, test);
  return evaluate_predictions(pred, test.labels);
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json conf = nlohmann::json::array();
  for (const auto& row : r.confusion) conf.push_back(row);
  return {{"accuracy", r.accuracy},
          {"confusion", conf},
          {"recall", r.recall},
          {"support", r.support},
          {"n_test", r.n_test}};
}

// ---------------------------------------------------------------------------
// Configuration

struct SynthSource {
  std::size_t per_class = 100;
  double clip_seconds = 4.0;
  std::size_t corpus_size = 0;  // distinct clean clips; 0 means one per record
  Concealment concealment = Concealment::zero_fill();
};

struct DatasetSource {
  std::optional<std::filesystem::path> manifest;
  SynthSource synth;
};

struct Seeds {
  std::uint64_t dataset = 1;
  std::uint64_t split = 2;
  std::uint64_t noise = 3;
  std::uint64_t training = 4;
};

struct GridParams {
  std::vector<ModelKind> classifiers;
  std::vector<NoiseSpec> noise;
};

struct SweepParams {
  std::vector<double> noise_levels;
  double threshold = 0.8;
  std::vector<std::size_t> size_grid;
  std::size_t replicas = 3;
};

/// What label noise corrupts: each sampled training example, or each
/// training clip (all of its crops then share one label).
enum class NoiseUnit { Example, Clip };

struct ExperimentConfig {
  DatasetSource dataset;
  ModelKind classifier = ModelKind::MelCnn2D;
  NoiseSpec noise = UniformFlip{0.0};
  NoiseUnit noise_unit = NoiseUnit::Example;
  nn::TrainConfig train;
  SplitFractions split;
  Seeds seeds;
  std::size_t n_training_examples = 20000;
  std::size_t eval_crops_per_clip = 4;
  std::size_t replicas = 1;
  GridParams grid;
  std::optional<SweepParams> sweep;
  std::filesystem::path output_dir;
};

namespace detail {

inline nlohmann::json optimizer_to_json(const nn::OptimizerSpec& o) {
  if (const auto* a = std::get_if<nn::Adam>(&o)) {
    return {{"type", "adam"}, {"lr", a->lr}, {"beta1", a->beta1}, {"beta2", a->beta2}, {"eps", a->eps}};
  }
  const auto& s = std::get<nn::Sgd>(o);
  return {{"type", "sgd"}, {"lr", s.lr}, {"momentum", s.momentum}};
}

inline nn::OptimizerSpec optimizer_from_json(const nlohmann::json& j) {
  const std::string type = j.value("type", std::string("adam"));
  if (type == "adam") {
    nn::Adam a;
    a.lr = j.value("lr", a.lr);
    a.beta1 = j.value("beta1", a.beta1);
    a.beta2 = j.value("beta2", a.beta2);
    a.eps = j.value("eps", a.eps);
    return a;
  }
  if (type == "sgd") {
    nn::Sgd s;
    s.lr = j.value("lr", s.lr);
    s.momentum = j.value("momentum", s.momentum);
    return s;
  }
  throw Error(Errc::InvalidConfig, "unknown optimizer: " + type);
}

inline void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> keys,
                               std::string_view where) {
  if (!j.is_object()) throw Error(Errc::InvalidConfig, std::string(where) + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw Error(Errc::InvalidConfig, "unknown key '" + k + "' in " + std::string(where));
    }
  }
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  if (c.dataset.manifest) {
    j["dataset"] = {{"manifest", c.dataset.manifest->generic_string()}};
  } else {
    const auto& s = c.dataset.synth;
    j["dataset"] = {{"synth",
                     {{"per_class", s.per_class},
                      {"clip_seconds", s.clip_seconds},
                      {"corpus_size", s.corpus_size},
                      {"concealment", s.concealment.kind == Concealment::Kind::ZeroFill ? "zero_fill" : "repeat_last"},
                      {"repeat_attenuation_db", s.concealment.attenuation_db}}}};
  }
  j["classifier"] = std::string(nn::to_string(c.classifier));
  j["noise"] = to_json(c.noise);
  j["noise_unit"] = c.noise_unit == NoiseUnit::Example ? "example" : "clip";
  j["train"] = {{"optimizer", detail::optimizer_to_json(c.train.optimizer)},
                {"batch_size", c.train.batch_size},
                {"max_epochs", c.train.max_epochs},
                {"patience", c.train.patience},
                {"min_delta", c.train.min_delta}};
  j["split"] = {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}};
  j["seeds"] = {{"dataset", c.seeds.dataset},
                {"split", c.seeds.split},
                {"noise", c.seeds.noise},
                {"training", c.seeds.training}};
  j["n_training_examples"] = c.n_training_examples;
  j["eval_crops_per_clip"] = c.eval_crops_per_clip;
  j["replicas"] = c.replicas;
  if (!c.grid.classifiers.empty() || !c.grid.noise.empty()) {
    nlohmann::json kinds = nlohmann::json::array(), noise = nlohmann::json::array();
    for (ModelKind k : c.grid.classifiers) kinds.push_back(std::string(nn::to_string(k)));
    for (const NoiseSpec& n : c.grid.noise) noise.push_back(to_json(n));
    j["grid"] = {{"classifiers", kinds}, {"noise", noise}};
  }
  if (c.sweep) {
    j["sweep"] = {{"noise_levels", c.sweep->noise_levels},
                  {"threshold", c.sweep->threshold},
                  {"size_grid", c.sweep->size_grid},
                  {"replicas", c.sweep->replicas}};
  }
  if (!c.output_dir.empty()) j["output_dir"] = c.output_dir.generic_string();
  return j;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  using detail::require_known_keys;
  ExperimentConfig c;
  try {
    require_known_keys(j,
                       {"dataset", "classifier", "noise", "noise_unit", "train", "split", "seeds", "n_training_examples",
                        "eval_crops_per_clip", "replicas", "grid", "sweep", "output_dir"},
                       "config");
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      require_known_keys(d, {"manifest", "synth"}, "dataset");
      if (d.contains("manifest")) c.dataset.manifest = d.at("manifest").get<std::string>();
      if (d.contains("synth")) {
        const auto& s = d.at("synth");
        require_known_keys(s, {"per_class", "clip_seconds", "corpus_size", "concealment", "repeat_attenuation_db"},
                           "dataset.synth");
        c.dataset.synth.per_class = s.value("per_class", c.dataset.synth.per_class);
        c.dataset.synth.clip_seconds = s.value("clip_seconds", c.dataset.synth.clip_seconds);
        c.dataset.synth.corpus_size = s.value("corpus_size", c.dataset.synth.corpus_size);
        const std::string conceal = s.value("concealment", std::string("zero_fill"));
        const double att = s.value("repeat_attenuation_db", 0.0);
        if (conceal == "zero_fill") {
          c.dataset.synth.concealment = Concealment::zero_fill();
        } else if (conceal == "repeat_last") {
          c.dataset.synth.concealment = Concealment::repeat_last(att);
        } else {
          throw Error(Errc::InvalidConfig, "unknown concealment: " + conceal);
        }
        if (!(c.dataset.synth.clip_seconds > 0.0) || c.dataset.synth.per_class == 0) {
          throw Error(Errc::InvalidConfig, "synth needs per_class >= 1 and clip_seconds > 0");
        }
      }
    }
    if (j.contains("classifier")) c.classifier = nn::model_kind_from_string(j.at("classifier").get<std::string>());
    if (j.contains("noise")) c.noise = noise_spec_from_json(j.at("noise"));
    if (j.contains("noise_unit")) {
      const std::string u = j.at("noise_unit").get<std::string>();
      if (u == "example") {
        c.noise_unit = NoiseUnit::Example;
      } else if (u == "clip") {
        c.noise_unit = NoiseUnit::Clip;
      } else {
        throw Error(Errc::InvalidConfig, "noise_unit must be 'example' or 'clip'");
      }
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      require_known_keys(t, {"optimizer", "batch_size", "max_epochs", "patience", "min_delta"}, "train");
      if (t.contains("optimizer")) c.train.optimizer = detail::optimizer_from_json(t.at("optimizer"));
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.max_epochs = t.value("max_epochs", c.train.max_epochs);
      c.train.patience = t.value("patience", c.train.patience);
      c.train.min_delta = t.value("min_delta", c.train.min_delta);
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      require_known_keys(s, {"train", "val", "test"}, "split");
      c.split.train = s.value("train", c.split.train);
      c.split.val = s.value("val", c.split.val);
      c.split.test = s.value("test", c.split.test);
    }
    if (j.contains("seeds")) {
      const auto& s = j.at("seeds");
      require_known_keys(s, {"dataset", "split", "noise", "training"}, "seeds");
      c.seeds.dataset = s.value("dataset", c.seeds.dataset);
      c.seeds.split = s.value("split", c.seeds.split);
      c.seeds.noise = s.value("noise", c.seeds.noise);
      c.seeds.training = s.value("training", c.seeds.training);
    }
    c.n_training_examples = j.value("n_training_examples", c.n_training_examples);
    c.eval_crops_per_clip = j.value("eval_crops_per_clip", c.eval_crops_per_clip);
    c.replicas = j.value("replicas", c.replicas);
    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      require_known_keys(g, {"classifiers", "noise"}, "grid");
      for (const auto& k : g.value("classifiers", nlohmann::json::array())) {
        c.grid.classifiers.push_back(nn::model_kind_from_string(k.get<std::string>()));
      }
      for (const auto& n : g.value("noise", nlohmann::json::array())) c.grid.noise.push_back(noise_spec_from_json(n));
    }
    if (j.contains("sweep")) {
      const auto& s = j.at("sweep");
      require_known_keys(s, {"noise_levels", "threshold", "size_grid", "replicas"}, "sweep");
      SweepParams sp;
      sp.noise_levels = s.value("noise_levels", sp.noise_levels);
      sp.threshold = s.value("threshold", sp.threshold);
      sp.size_grid = s.value("size_grid", sp.size_grid);
      sp.replicas = s.value("replicas", sp.replicas);
      c.sweep = sp;
    }
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string("config: ") + e.what());
  }
  validate(c.split);
  nn::validate(c.train);
  if (c.n_training_examples == 0) throw Error(Errc::InvalidConfig, "n_training_examples must be >= 1");
  if (c.replicas == 0) throw Error(Errc::InvalidConfig, "replicas must be >= 1");
  return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidConfig, path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Running

/// Split-tagged dataset plus the shared feature cache.
struct PreparedData {
  LabeledDataset dataset;
  std::shared_ptr<FeatureStore> store;
  bool synthesized = false;

  LabeledDataset train() const { return dataset.subset(Split::Train); }
  LabeledDataset val() const { return dataset.subset(Split::Val); }
  LabeledDataset test() const { return dataset.subset(Split::Test); }
};

inline LabeledDataset synthesize_desk_corpus(const SynthSource& s, std::uint64_t seed) {
  const std::size_t n_records = s.per_class * kNumClasses;
  const std::size_t corpus_size = s.corpus_size == 0 ? n_records : s.corpus_size;
  SynthConfig cfg;
  cfg.concealment = s.concealment;
  return build_dataset(pseudo_speech_corpus(corpus_size, s.clip_seconds, derive_seed(seed, 0)), s.per_class, cfg,
                       derive_seed(seed, 1));
}

inline PreparedData prepare_data(const ExperimentConfig& cfg) {
  PreparedData p;
  LabeledDataset ds;
  if (cfg.dataset.manifest) {
    ds = read_manifest(*cfg.dataset.manifest);
  } else {
    ds = synthesize_desk_corpus(cfg.dataset.synth, cfg.seeds.dataset);
    p.synthesized = true;
  }
  for (Record& r : ds.records) r.observed_label = r.true_label;
  p.dataset = split_dataset(ds, cfg.split, cfg.seeds.split);
  p.store = std::make_shared<FeatureStore>(p.dataset.clips);
  return p;
}

/// Seeds of replica `i`: replica 0 uses the configured seeds directly.
inline Seeds replica_seeds(const Seeds& base, std::size_t i) {
  if (i == 0) return base;
  Seeds s = base;
  s.noise = derive_seed(base.noise, i);
  s.training = derive_seed(base.training, i);
  return s;
}

struct RunResult {
  ModelKind classifier = ModelKind::MelCnn2D;
  NoiseSpec noise = UniformFlip{0.0};
  std::size_t n_training_examples = 0;
  EvalReport report;
  nn::TrainResult training;
  nn::Model<float> model;
  TrainingDraws examples;  // what the model was trained on, noisy labels included
};

/// One training run: noise on training data only, clean-label validation for
/// early stopping, clean-label test evaluation.
inline RunResult run_once(const PreparedData& data, ModelKind kind, const NoiseSpec& noise, NoiseUnit unit,
                          std::size_t n_examples, const nn::TrainConfig& train_cfg, std::size_t eval_crops,
                          const Seeds& seeds) {
  RunResult res;
  res.classifier = kind;
  res.noise = noise;
  const LabeledDataset train = data.train(), val = data.val(), test = data.test();
  for (const LabeledDataset* s : {&val, &test}) {
    for (const Record& r : s->records) {
      if (r.observed_label != r.true_label) throw Error(Errc::InvalidConfig, "evaluation labels must be clean");
    }
  }
  const std::uint64_t draw_seed = derive_seed(seeds.training, 2);
  if (unit == NoiseUnit::Clip) {
    res.examples = draw_training_examples(apply_noise(train, noise, seeds.noise), kind, n_examples, draw_seed,
                                          *data.store);
  } else {
    res.examples = apply_noise(draw_training_examples(train, kind, n_examples, draw_seed, *data.store), noise,
                               seeds.noise);
  }
  res.n_training_examples = res.examples.draws.size();
  const nn::ExampleSet train_set = training_examples(res.examples, kind, data.store);
  const nn::ExampleSet val_set = evaluation_examples(val, kind, eval_crops, data.store);
  const nn::ExampleSet test_set = evaluation_examples(test, kind, eval_crops, data.store);

  res.model = nn::Model<float>(nn::build_architecture(kind));
  res.model.init(derive_seed(seeds.training, 1));
  res.model.input_scaling = fit_input_scaling(kind, train_set);
  nn::TrainConfig tc = train_cfg;
  tc.seed = derive_seed(seeds.training, 3);
  res.training = nn::train(res.model, train_set, val_set, tc);
  res.report = evaluate(res.model, test_set);
  return res;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw Error(Errc::EmptySet, "median of nothing");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Aggregate of replicated runs for one (classifier, noise regime) cell.
struct CellResult {
  std::string regime;
  ModelKind classifier = ModelKind::MelCnn2D;
  std::size_t n_training_examples = 0;
  std::vector<double> accuracies;
  double median_accuracy = 0.0;
  EvalReport report;  // from the replica whose accuracy is the median (lowest index on ties)
  std::vector<nn::EpochRecord> history;
};

inline CellResult run_cell(const PreparedData& data, const ExperimentConfig& cfg, ModelKind kind,
                           const NoiseSpec& noise, std::size_t n_examples, std::size_t replicas,
                           const std::function<void(const RunResult&, std::size_t)>& on_run = {}) {
  CellResult cell;
  cell.regime = describe(noise);
  cell.classifier = kind;
  cell.n_training_examples = 0;
  std::vector<EvalReport> reports;
  std::vector<std::vector<nn::EpochRecord>> histories;
  for (std::size_t i = 0; i < replicas; ++i) {
    RunResult r = run_once(data, kind, noise, cfg.noise_unit, n_examples, cfg.train, cfg.eval_crops_per_clip,
                           replica_seeds(cfg.seeds, i));
    if (on_run) on_run(r, i);
    cell.n_training_examples = r.n_training_examples;
    cell.accuracies.push_back(r.report.accuracy);
    reports.push_back(r.report);
    histories.push_back(std::move(r.training.history));
  }
  cell.median_accuracy = median(cell.accuracies);
  std::size_t pick = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < replicas; ++i) {
    const double d = std::abs(cell.accuracies[i] - cell.median_accuracy);
    if (d < best) best = d, pick = i;
  }
  cell.report = reports[pick];
  cell.history = histories[pick];
  return cell;
}

struct SweepRow {
  double noise_rate = 0.0;
  std::optional<std::size_t> minimal_size;     // empty when the threshold was never reached
  double achieved_accuracy = 0.0;              // median at minimal_size, else the best median seen
  std::vector<std::pair<std::size_t, double>> medians;  // (size, median accuracy) in grid order
};

inline void validate_sweep(const std::vector<double>& noise_levels, double threshold,
                           const std::vector<std::size_t>& size_grid) {
  if (size_grid.empty()) throw Error(Errc::InvalidGrid, "size grid is empty");
  for (std::size_t i = 0; i < size_grid.size(); ++i) {
    if (size_grid[i] == 0 || (i > 0 && size_grid[i] <= size_grid[i - 1])) {
      throw Error(Errc::InvalidGrid, "size grid must be positive and strictly increasing");
    }
  }
  if (!(threshold > 0.0 && threshold < 1.0)) throw Error(Errc::InvalidGrid, "threshold must be in (0,1)");
  for (double p : noise_levels) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(Errc::InvalidGrid, "noise levels must be in [0,1]");
  }
}

/// Geometric size grid: first, first*ratio, ... while <= last.
inline std::vector<std::size_t> geometric_grid(std::size_t first, std::size_t last, double ratio = 2.0) {
  if (first == 0 || !(ratio > 1.0)) throw Error(Errc::InvalidGrid, "geometric grid needs first >= 1 and ratio > 1");
  std::vector<std::size_t> g;
  for (double v = static_cast<double>(first); v <= static_cast<double>(last) + 0.5; v *= ratio) {
    g.push_back(static_cast<std::size_t>(std::llround(v)));
  }
  return g;
}

/// For each uniform-flip rate, walks the size grid until the replicate median
/// test accuracy reaches `threshold`.
inline std::vector<SweepRow> size_vs_noise_sweep(
    const PreparedData& data, const ExperimentConfig& cfg, const std::vector<double>& noise_levels, double threshold,
    const std::vector<std::size_t>& size_grid, std::size_t replicas,
    const std::function<void(double, std::size_t, double)>& on_point = {}) {
  validate_sweep(noise_levels, threshold, size_grid);
  if (replicas == 0) throw Error(Errc::InvalidGrid, "replicas must be >= 1");
  std::vector<SweepRow> rows;
  for (double p : noise_levels) {
    SweepRow row;
    row.noise_rate = p;
    for (std::size_t size : size_grid) {
      const CellResult cell = run_cell(data, cfg, cfg.classifier, UniformFlip{p}, size, replicas);
      row.medians.emplace_back(size, cell.median_accuracy);
      if (on_point) on_point(p, size, cell.median_accuracy);
      if (cell.median_accuracy >= threshold) {
        row.minimal_size = size;
        row.achieved_accuracy = cell.median_accuracy;
        break;
      }
      row.achieved_accuracy = std::max(row.achieved_accuracy, cell.median_accuracy);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Reports

struct Results {
  nlohmann::json config = nlohmann::json::object();
  std::vector<CellResult> cells;
  bool sweep_requested = false;
  double sweep_threshold = 0.0;
  std::vector<SweepRow> sweep;
  std::vector<std::string> warnings;
};

inline nlohmann::json to_json(const CellResult& c) {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& h : c.history) hist.push_back(nn::to_json(h));
  return {{"regime", c.regime},
          {"classifier", std::string(nn::to_string(c.classifier))},
          {"n_training_examples", c.n_training_examples},
          {"accuracies", c.accuracies},
          {"median_accuracy", c.median_accuracy},
          {"report", to_json(c.report)},
          {"history", hist}};
}

inline nlohmann::json to_json(const SweepRow& r) {
  nlohmann::json medians = nlohmann::json::array();
  for (const auto& [size, acc] : r.medians) medians.push_back({{"size", size}, {"median_accuracy", acc}});
  return {{"noise_rate", r.noise_rate},
          {"minimal_size", r.minimal_size ? nlohmann::json(*r.minimal_size) : nlohmann::json("not reached")},
          {"achieved_accuracy", r.achieved_accuracy},
          {"medians", medians}};
}

inline nlohmann::json to_json(const Results& r) {
  nlohmann::json cells = nlohmann::json::array(), sweep = nlohmann::json::array();
  for (const auto& c : r.cells) cells.push_back(to_json(c));
  for (const auto& s : r.sweep) sweep.push_back(to_json(s));
  nlohmann::json j = {{"config", r.config}, {"cells", cells}, {"warnings", r.warnings}};
  if (r.sweep_requested) j["sweep"] = {{"threshold", r.sweep_threshold}, {"rows", sweep}};
  return j;
}

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(Errc::IoError, "short write to " + path.string());
}

/// Table-shaped grid: one row per regime, accuracy and training size per classifier.
inline std::string table_csv(const std::vector<CellResult>& cells) {
  std::vector<std::string> regimes;
  std::vector<ModelKind> kinds;
  for (const auto& c : cells) {
    if (std::find(regimes.begin(), regimes.end(), c.regime) == regimes.end()) regimes.push_back(c.regime);
    if (std::find(kinds.begin(), kinds.end(), c.classifier) == kinds.end()) kinds.push_back(c.classifier);
  }
  std::ostringstream out;
  out << "regime";
  for (ModelKind k : kinds) out << ',' << nn::to_string(k) << "_accuracy," << nn::to_string(k) << "_training_size";
  out << '\n';
  for (const auto& regime : regimes) {
    out << regime;
    for (ModelKind k : kinds) {
      const auto it = std::find_if(cells.begin(), cells.end(),
                                   [&](const CellResult& c) { return c.regime == regime && c.classifier == k; });
      if (it == cells.end()) {
        out << ",,";
      } else {
        out << ',' << fmt(it->median_accuracy) << ',' << it->n_training_examples;
      }
    }
    out << '\n';
  }
  return out.str();
}

inline std::string confusion_csv(const std::vector<CellResult>& cells) {
  std::ostringstream out;
  out << "regime,classifier,predicted,truth,fraction\n";
  for (const auto& c : cells) {
    for (int p = 0; p < kNumClasses; ++p) {
      for (int t = 0; t < kNumClasses; ++t) {
        out << c.regime << ',' << nn::to_string(c.classifier) << ',' << to_string(class_from_code(p)) << ','
            << to_string(class_from_code(t)) << ',' << fmt(c.report.confusion[p][t]) << '\n';
      }
    }
  }
  return out.str();
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "noise_rate,minimal_size,achieved_accuracy\n";
  for (const auto& r : rows) {
    out << fmt(r.noise_rate) << ',' << (r.minimal_size ? std::to_string(*r.minimal_size) : "not reached") << ','
        << fmt(r.achieved_accuracy) << '\n';
  }
  return out.str();
}

/// Line chart of minimal training size (log scale) against noise rate;
/// unreached points are drawn as open circles at the top edge.
inline std::string sweep_svg(const std::vector<SweepRow>& rows, double threshold) {
  const double W = 640, H = 400, left = 80, right = 30, top = 40, bottom = 60;
  std::size_t lo = std::numeric_limits<std::size_t>::max(), hi = 0;
  for (const auto& r : rows) {
    for (const auto& [size, acc] : r.medians) lo = std::min(lo, size), hi = std::max(hi, size);
  }
  if (hi == 0) lo = 1, hi = 10;
  const double ylo = std::floor(std::log10(static_cast<double>(lo))), yhi = std::ceil(std::log10(static_cast<double>(hi)) + 1e-9);
  const double yspan = std::max(yhi - ylo, 1.0);
  double pmax = 0.0;
  for (const auto& r : rows) pmax = std::max(pmax, r.noise_rate);
  if (pmax <= 0.0) pmax = 1.0;
  auto X = [&](double p) { return left + (W - left - right) * p / pmax; };
  auto Y = [&](double size) { return H - bottom - (H - top - bottom) * (std::log10(size) - ylo) / yspan; };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">Training examples needed for "
    << fmt(threshold * 100) << "% test accuracy</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom
    << "\" stroke=\"black\"/>\n";
  for (double e = ylo; e <= yhi + 1e-9; e += 1.0) {
    const double y = Y(std::pow(10.0, e));
    s << "<line x1=\"" << left - 5 << "\" y1=\"" << y << "\" x2=\"" << W - right << "\" y2=\"" << y
      << "\" stroke=\"#ddd\"/>\n";
    s << "<text x=\"" << left - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">1e" << static_cast<int>(e)
      << "</text>\n";
  }
  for (const auto& r : rows) {
    const double x = X(r.noise_rate);
    s << "<text x=\"" << x << "\" y=\"" << H - bottom + 18 << "\" text-anchor=\"middle\">" << fmt(r.noise_rate)
      << "</text>\n";
  }
  s << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 15
    << "\" text-anchor=\"middle\">label noise rate</text>\n";
  s << "<text transform=\"translate(20," << (top + H - bottom) / 2
    << ") rotate(-90)\" text-anchor=\"middle\">training examples (log scale)</text>\n";
  std::string path;
  for (const auto& r : rows) {
    if (!r.minimal_size) continue;
    path += (path.empty() ? "M" : " L") + fmt(X(r.noise_rate)) + "," + fmt(Y(static_cast<double>(*r.minimal_size)));
  }
  if (!path.empty()) s << "<path d=\"" << path << "\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n";
  for (const auto& r : rows) {
    const double x = X(r.noise_rate);
    if (r.minimal_size) {
      s << "<circle cx=\"" << x << "\" cy=\"" << Y(static_cast<double>(*r.minimal_size))
        << "\" r=\"4\" fill=\"#1f77b4\"/>\n";
    } else {
      s << "<circle cx=\"" << x << "\" cy=\"" << top << "\" r=\"4\" fill=\"none\" stroke=\"#d62728\"/>\n";
      s << "<text x=\"" << x << "\" y=\"" << top - 6 << "\" text-anchor=\"middle\" fill=\"#d62728\">not reached</text>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace detail

/// Writes results.json, table.csv and confusion.csv; for sweeps also
/// sweep.csv and sweep.svg (skipped, with a warning, when the sweep is empty).
inline void emit_report(Results results, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(Errc::IoError, "cannot create " + dir.string());
  if (results.sweep_requested) {
    if (results.sweep.empty()) {
      results.warnings.push_back("sweep produced no rows; chart not written");
    } else {
      detail::write_text(dir / "sweep.csv", detail::sweep_csv(results.sweep));
      detail::write_text(dir / "sweep.svg", detail::sweep_svg(results.sweep, results.sweep_threshold));
    }
  }
  if (!results.cells.empty()) {
    detail::write_text(dir / "table.csv", detail::table_csv(results.cells));
    detail::write_text(dir / "confusion.csv", detail::confusion_csv(results.cells));
  }
  detail::write_text(dir / "results.json", to_json(results).dump(2) + "\n");
}

/// Full pipeline for the configured classifier and noise; artifacts go to
/// cfg.output_dir when it is set.
struct ExperimentOutcome {
  EvalReport report;
  std::vector<nn::EpochRecord> history;
  std::size_t n_training_examples = 0;
};

/// One JSON line per training example: source clip, crop offset, true and
/// observed label.
inline void write_training_examples(const TrainingDraws& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  for (std::size_t i = 0; i < t.draws.size(); ++i) {
    const Record& r = t.records.records[i];
    out << nlohmann::json{{"clip_id", t.draws[i].clip_id},
                          {"offset", t.draws[i].offset},
                          {"true_label", std::string(to_string(r.true_label))},
                          {"observed_label", std::string(to_string(r.observed_label))}}
               .dump()
        << '\n';
  }
  if (!out) throw Error(Errc::IoError, "short write to " + path.string());
}

inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg) {
  const PreparedData data = prepare_data(cfg);
  RunResult r = run_once(data, cfg.classifier, cfg.noise, cfg.noise_unit, cfg.n_training_examples, cfg.train,
                         cfg.eval_crops_per_clip, cfg.seeds);
  if (!cfg.output_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.output_dir, ec);
    if (ec) throw Error(Errc::IoError, "cannot create " + cfg.output_dir.string());
    LabeledDataset manifest = data.dataset;
    write_manifest(manifest, cfg.output_dir / "dataset");
    write_training_examples(r.examples, cfg.output_dir / "training_examples.jsonl");
    nn::save_model(r.model, cfg.output_dir / "model.bin");
    nn::write_history(r.training.history, cfg.output_dir / "history.jsonl");
    Results res;
    res.config = to_json(cfg);
    CellResult cell;
    cell.regime = describe(cfg.noise);
    cell.classifier = cfg.classifier;
    cell.n_training_examples = r.n_training_examples;
    cell.accuracies = {r.report.accuracy};
    cell.median_accuracy = r.report.accuracy;
    cell.report = r.report;
    cell.history = r.training.history;
    res.cells.push_back(cell);
    emit_report(res, cfg.output_dir);
  }
  return {r.report, r.training.history, r.n_training_examples};
}

}  // namespace aimp
