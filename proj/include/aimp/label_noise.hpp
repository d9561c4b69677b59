#pragma once

// Label corruption: uniform flips at an exact error rate, noisy-per-clean
// augmentation and simulated raters with aggregation. Only observed_label is
// ever modified.

#include <aimp/dataset.hpp>
#include <aimp/error.hpp>
#include <aimp/rng.hpp>

#include <json.hpp>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

namespace aimp {

using Confusion = std::array<std::array<double, kNumClasses>, kNumClasses>;

struct UniformFlip {
  double rate = 0.0;
};

struct NoisyPerClean {
  std::size_t k = 0;
  bool uniform_over_all = false;  // draw noisy labels over all 5 classes instead of the 4 wrong ones
};

enum class Aggregation { MajorityVote, SingleRater };

/// Defaults model crowd labels that are right about two thirds of the time.
/// Rows are true classes, columns the label a rater reports.
inline Confusion default_rater_confusion() {
  // BackgroundNoise, Reverb, SpeechDistortion, LowVolume, NoImpairment
  return {{
      {0.55, 0.05, 0.05, 0.05, 0.30},
      {0.075, 0.70, 0.075, 0.05, 0.10},
      {0.075, 0.075, 0.70, 0.05, 0.10},
      {0.05, 0.05, 0.05, 0.55, 0.30},
      {0.05, 0.05, 0.05, 0.05, 0.80},
  }};
}

struct RaterModel {
  Confusion confusion = default_rater_confusion();
  std::size_t n_raters = 10;
  Aggregation aggregation = Aggregation::MajorityVote;
};

using NoiseSpec = std::variant<UniformFlip, NoisyPerClean, RaterModel>;

inline void validate_confusion(const Confusion& c) {
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    double sum = 0.0;
    for (double v : c[i]) {
      if (!(v >= 0.0)) throw Error(Errc::BadConfusion, "confusion entries must be non-negative");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw Error(Errc::BadConfusion, "confusion row " + std::to_string(i) + " sums to " + std::to_string(sum));
    }
  }
}

namespace detail {

/// Uniform over the four classes other than `truth`.
inline ImpairmentClass wrong_class(ImpairmentClass truth, Rng& rng) {
  const int t = code(truth);
  const int r = static_cast<int>(rng.below(kNumClasses - 1));
  return class_from_code(r < t ? r : r + 1);
}

inline ImpairmentClass sample_row(const std::array<double, kNumClasses>& row, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t c = 0; c + 1 < kNumClasses; ++c) {
    acc += row[c];
    if (u < acc) return class_from_code(static_cast<int>(c));
  }
  // Land on the last class with positive mass (guards against rounding in the row sum).
  for (std::size_t c = kNumClasses; c-- > 0;) {
    if (row[c] > 0.0) return class_from_code(static_cast<int>(c));
  }
  return class_from_code(kNumClasses - 1);
}

}  // namespace detail

/// Replaces observed_label on exactly round(p * N) records, chosen without
/// replacement, with a class drawn uniformly from the four wrong ones.
inline LabeledDataset flip_uniform(const LabeledDataset& ds, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error(Errc::InvalidParams, "flip rate must be in [0,1]");
  LabeledDataset out = ds;
  const std::size_t n = ds.size();
  const auto n_flip = static_cast<std::size_t>(std::llround(p * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng pick(seed);
  for (std::size_t i = 0; i < n_flip; ++i) std::swap(idx[i], idx[i + pick.below(n - i)]);
  for (std::size_t i = 0; i < n_flip; ++i) {
    Record& r = out.records[idx[i]];
    Rng rng(derive_seed(seed, idx[i] + 1));
    r.observed_label = detail::wrong_class(r.true_label, rng);
  }
  return out;
}

/// Keeps the N records verbatim and appends k noisy-labelled copies of each
/// (record-major). Copies share the original clip.
inline LabeledDataset augment_noisy_per_clean(const LabeledDataset& ds, std::size_t k, std::uint64_t seed,
                                              bool uniform_over_all = false) {
  LabeledDataset out = ds;
  out.records.reserve(ds.size() * (k + 1));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    for (std::size_t j = 0; j < k; ++j) {
      Record copy = ds.records[i];
      copy.observed_label = uniform_over_all ? class_from_code(static_cast<int>(rng.below(kNumClasses)))
                                             : detail::wrong_class(copy.true_label, rng);
      out.records.push_back(std::move(copy));
    }
  }
  return out;
}

struct RaterResult {
  LabeledDataset dataset;  // observed_label = aggregate
  std::vector<std::vector<ImpairmentClass>> rater_labels;
};

/// Majority vote; ties go to the lowest class code.
inline ImpairmentClass majority_vote(const std::vector<ImpairmentClass>& votes) {
  std::array<std::size_t, kNumClasses> count{};
  for (ImpairmentClass v : votes) ++count[static_cast<std::size_t>(code(v))];
  std::size_t best = 0;
  for (std::size_t c = 1; c < kNumClasses; ++c) {
    if (count[c] > count[best]) best = c;
  }
  return class_from_code(static_cast<int>(best));
}

inline RaterResult simulate_raters(const LabeledDataset& ds, const RaterModel& model, std::uint64_t seed) {
  validate_confusion(model.confusion);
  if (model.n_raters == 0) throw Error(Errc::InvalidParams, "n_raters must be >= 1");
  RaterResult res;
  res.dataset = ds;
  res.rater_labels.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Record& r = res.dataset.records[i];
    Rng rng(derive_seed(seed, i));
    auto& votes = res.rater_labels[i];
    votes.resize(model.n_raters);
    const auto& row = model.confusion[static_cast<std::size_t>(code(r.true_label))];
    for (auto& v : votes) v = detail::sample_row(row, rng);
    r.observed_label = model.aggregation == Aggregation::SingleRater ? votes[0] : majority_vote(votes);
  }
  return res;
}

/// Applies a noise specification; every variant leaves true_label untouched.
inline LabeledDataset apply_noise(const LabeledDataset& ds, const NoiseSpec& spec, std::uint64_t seed) {
  return std::visit(
      [&](const auto& s) -> LabeledDataset {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, UniformFlip>) {
          return flip_uniform(ds, s.rate, seed);
        } else if constexpr (std::is_same_v<S, NoisyPerClean>) {
          return augment_noisy_per_clean(ds, s.k, seed, s.uniform_over_all);
        } else {
          return simulate_raters(ds, s, seed).dataset;
        }
      },
      spec);
}

/// Short label for reports, e.g. "flip_0.2", "noisy_per_clean_2", "raters_10_majority".
inline std::string describe(const NoiseSpec& spec) {
  return std::visit(
      [](const auto& s) -> std::string {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, UniformFlip>) {
          nlohmann::json j = s.rate;
          return "flip_" + j.dump();
        } else if constexpr (std::is_same_v<S, NoisyPerClean>) {
          return "noisy_per_clean_" + std::to_string(s.k) + (s.uniform_over_all ? "_uniform" : "");
        } else {
          return "raters_" + std::to_string(s.n_raters) +
                 (s.aggregation == Aggregation::MajorityVote ? "_majority" : "_single");
        }
      },
      spec);
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const NoiseSpec& spec) {
  return std::visit(
      [](const auto& s) -> nlohmann::json {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, UniformFlip>) {
          return {{"type", "uniform_flip"}, {"rate", s.rate}};
        } else if constexpr (std::is_same_v<S, NoisyPerClean>) {
          return {{"type", "noisy_per_clean"}, {"k", s.k}, {"uniform_over_all", s.uniform_over_all}};
        } else {
          nlohmann::json rows = nlohmann::json::array();
          for (const auto& row : s.confusion) rows.push_back(row);
          return {{"type", "raters"},
                  {"n_raters", s.n_raters},
                  {"aggregation", s.aggregation == Aggregation::MajorityVote ? "majority_vote" : "single_rater"},
                  {"confusion", rows}};
        }
      },
      spec);
}

inline NoiseSpec noise_spec_from_json(const nlohmann::json& j) {
  try {
    const std::string type = j.at("type").get<std::string>();
    if (type == "uniform_flip") {
      const double rate = j.at("rate").get<double>();
      if (!(rate >= 0.0 && rate <= 1.0)) throw Error(Errc::InvalidConfig, "uniform_flip rate must be in [0,1]");
      return UniformFlip{rate};
    }
    if (type == "noisy_per_clean") {
      const auto k = j.at("k").get<long long>();
      if (k < 0) throw Error(Errc::InvalidConfig, "noisy_per_clean k must be >= 0");
      return NoisyPerClean{static_cast<std::size_t>(k), j.value("uniform_over_all", false)};
    }
    if (type == "raters") {
      RaterModel m;
      const auto n = j.value("n_raters", 10LL);
      if (n < 1) throw Error(Errc::InvalidConfig, "n_raters must be >= 1");
      m.n_raters = static_cast<std::size_t>(n);
      const std::string agg = j.value("aggregation", std::string("majority_vote"));
      if (agg == "majority_vote") {
        m.aggregation = Aggregation::MajorityVote;
      } else if (agg == "single_rater") {
        m.aggregation = Aggregation::SingleRater;
      } else {
        throw Error(Errc::InvalidConfig, "unknown aggregation: " + agg);
      }
      if (j.contains("confusion")) {
        const auto& rows = j.at("confusion");
        if (!rows.is_array() || rows.size() != kNumClasses) throw Error(Errc::BadConfusion, "confusion must be 5x5");
        for (std::size_t r = 0; r < kNumClasses; ++r) {
          if (!rows[r].is_array() || rows[r].size() != kNumClasses) {
            throw Error(Errc::BadConfusion, "confusion must be 5x5");
          }
          for (std::size_t c = 0; c < kNumClasses; ++c) m.confusion[r][c] = rows[r][c].get<double>();
        }
      }
      validate_confusion(m.confusion);
      return m;
    }
    throw Error(Errc::InvalidConfig, "unknown noise type: " + type);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string("noise spec: ") + e.what());
  }
}

/// One JSON object per record: {clip_id, true_label, rater_labels, aggregate}.
inline void write_rater_labels(const RaterResult& res, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  for (std::size_t i = 0; i < res.dataset.size(); ++i) {
    const Record& r = res.dataset.records[i];
    std::vector<int> votes;
    for (ImpairmentClass v : res.rater_labels[i]) votes.push_back(code(v));
    out << nlohmann::json{{"clip_id", r.clip_id},
                          {"true_label", code(r.true_label)},
                          {"rater_labels", votes},
                          {"aggregate", code(r.observed_label)}}
               .dump()
        << '\n';
  }
  if (!out) throw Error(Errc::IoError, "short write to " + path.string());
}

}  // namespace aimp
