// aimp: dataset synthesis, feature caching, training, evaluation, grids and sweeps.

#include <aimp/aimp.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>
#include <string>
#include <vector>

namespace {

using nlohmann::json;
using namespace aimp;

void print(const json& j) { std::cout << j.dump(2) << '\n'; }

// --out wins over the config's output_dir, which wins over the default.
std::filesystem::path output_dir_or(const ExperimentConfig& cfg, const std::filesystem::path& out,
                                    const std::filesystem::path& fallback) {
  if (!out.empty()) return out;
  return cfg.output_dir.empty() ? fallback : cfg.output_dir;
}

int cmd_synth(std::size_t per_class, std::uint64_t seed, double clip_seconds, std::size_t corpus_size,
              const std::filesystem::path& out) {
  SynthSource src;
  src.per_class = per_class;
  src.clip_seconds = clip_seconds;
  src.corpus_size = corpus_size;
  LabeledDataset ds = synthesize_desk_corpus(src, seed);
  const auto manifest = write_manifest(ds, out);
  const auto hist = ds.class_histogram();
  print({{"manifest", manifest.generic_string()}, {"records", ds.size()}, {"per_class", hist}});
  return 0;
}

int cmd_features(const std::filesystem::path& manifest, const std::filesystem::path& out) {
  const LabeledDataset ds = read_manifest(manifest);
  std::vector<std::pair<std::string, EngineeredVector>> rows;
  std::vector<bool> done(ds.clips.size(), false);
  for (const Record& r : ds.records) {
    if (done[r.clip_id]) continue;
    done[r.clip_id] = true;
    rows.emplace_back(r.clip_path, engineered_vector(ds.clip(r)));
  }
  write_feature_cache(rows, out);
  print({{"cache", out.generic_string()}, {"clips", rows.size()}});
  return 0;
}

int cmd_train(const std::filesystem::path& config_path, const std::filesystem::path& out) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  cfg.output_dir = output_dir_or(cfg, out, "run");
  const ExperimentOutcome res = run_experiment(cfg);
  print({{"output_dir", cfg.output_dir.generic_string()},
         {"n_training_examples", res.n_training_examples},
         {"epochs", res.history.size()},
         {"report", to_json(res.report)}});
  return 0;
}

int cmd_eval(const std::filesystem::path& model_path, const std::filesystem::path& manifest, std::size_t crops,
             const std::string& split) {
  const nn::Model<float> model = nn::load_model(model_path);
  LabeledDataset ds = read_manifest(manifest);
  if (split != "all") ds = ds.subset(split_from_string(split));
  auto store = std::make_shared<FeatureStore>(ds.clips);
  const EvalReport r = evaluate(model, evaluation_examples(ds, model.spec().kind, crops, store));
  print(to_json(r));
  return 0;
}

int cmd_grid(const std::filesystem::path& config_path, const std::filesystem::path& out) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  const auto dir = output_dir_or(cfg, out, "grid");
  const std::vector<ModelKind> kinds =
      cfg.grid.classifiers.empty() ? std::vector<ModelKind>{cfg.classifier} : cfg.grid.classifiers;
  const std::vector<NoiseSpec> regimes = cfg.grid.noise.empty() ? std::vector<NoiseSpec>{cfg.noise} : cfg.grid.noise;
  const PreparedData data = prepare_data(cfg);
  Results res;
  res.config = to_json(cfg);
  for (const NoiseSpec& noise : regimes) {
    for (ModelKind kind : kinds) {
      res.cells.push_back(run_cell(data, cfg, kind, noise, cfg.n_training_examples, cfg.replicas));
      std::cerr << describe(noise) << ' ' << nn::to_string(kind) << " median accuracy "
                << res.cells.back().median_accuracy << '\n';
    }
  }
  emit_report(res, dir);
  print({{"output_dir", dir.generic_string()}, {"cells", res.cells.size()}});
  return 0;
}

int cmd_sweep(const std::filesystem::path& config_path, const std::filesystem::path& out,
              std::optional<double> threshold,
              std::vector<double> noise_levels, std::vector<std::size_t> size_grid) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  const auto dir = output_dir_or(cfg, out, "sweep");
  SweepParams sp = cfg.sweep.value_or(SweepParams{});
  if (threshold) sp.threshold = *threshold;
  if (!noise_levels.empty()) sp.noise_levels = std::move(noise_levels);
  if (!size_grid.empty()) sp.size_grid = std::move(size_grid);
  if (sp.noise_levels.empty()) throw Error(Errc::InvalidGrid, "no noise levels given");
  validate_sweep(sp.noise_levels, sp.threshold, sp.size_grid);
  cfg.sweep = sp;
  const PreparedData data = prepare_data(cfg);
  Results res;
  res.config = to_json(cfg);
  res.sweep_requested = true;
  res.sweep_threshold = sp.threshold;
  res.sweep = size_vs_noise_sweep(data, cfg, sp.noise_levels, sp.threshold, sp.size_grid, sp.replicas,
                                  [](double p, std::size_t size, double acc) {
                                    std::cerr << "p=" << p << " size=" << size << " median accuracy " << acc << '\n';
                                  });
  emit_report(res, dir);
  json rows = json::array();
  for (const SweepRow& r : res.sweep) rows.push_back(to_json(r));
  print({{"output_dir", dir.generic_string()}, {"rows", rows}});
  return 0;
}

void report_error(std::string_view code, std::string_view message) {
  std::cerr << json{{"error", code}, {"message", message}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio impairment classification under label noise"};
  app.require_subcommand(1);

  std::size_t per_class = 100, corpus_size = 0, crops = 4;
  std::uint64_t seed = 1;
  double clip_seconds = 4.0;
  std::filesystem::path out, config, model, manifest;
  std::string split = "test";
  std::optional<double> threshold;
  std::vector<double> noise_levels;
  std::vector<std::size_t> size_grid;

  auto* synth = app.add_subcommand("synth", "Synthesize a labelled pseudo-speech dataset");
  synth->add_option("--per-class", per_class, "Clips per impairment class")->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed, "Dataset seed");
  synth->add_option("--clip-seconds", clip_seconds, "Clip duration")->check(CLI::PositiveNumber);
  synth->add_option("--corpus-size", corpus_size, "Distinct clean clips (0: one per record)");
  synth->add_option("--out", out, "Output directory")->required();

  auto* features = app.add_subcommand("features", "Precompute the engineered-feature cache");
  features->add_option("--manifest", manifest, "Dataset manifest")->required();
  features->add_option("--out", out, "Cache file (JSON lines)")->required();

  auto* train = app.add_subcommand("train", "Run one experiment");
  train->add_option("--config", config, "Experiment config (JSON)")->required();
  train->add_option("--out", out, "Output directory (overrides the config)");

  auto* eval = app.add_subcommand("eval", "Evaluate a saved model on a manifest");
  eval->add_option("--model", model, "Model file")->required();
  eval->add_option("--manifest", manifest, "Dataset manifest")->required();
  eval->add_option("--crops", crops, "Evaluation crops per clip")->check(CLI::PositiveNumber);
  eval->add_option("--split", split, "Records to evaluate")->check(CLI::IsMember({"train", "val", "test", "all"}));

  auto* grid = app.add_subcommand("grid", "Classifier x noise-regime grid");
  grid->add_option("--config", config, "Experiment config (JSON)")->required();
  grid->add_option("--out", out, "Output directory (overrides the config)");

  auto* sweep = app.add_subcommand("sweep", "Minimal training size per noise level");
  sweep->add_option("--config", config, "Experiment config (JSON)")->required();
  sweep->add_option("--out", out, "Output directory (overrides the config)");
  sweep->add_option("--threshold", threshold, "Target test accuracy");
  sweep->add_option("--noise-levels", noise_levels, "Flip rates, comma separated")->delimiter(',');
  sweep->add_option("--size-grid", size_grid, "Increasing example counts, comma separated")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    report_error("Usage", e.what());
    return 64;
  }

  try {
    if (*synth) return cmd_synth(per_class, seed, clip_seconds, corpus_size, out);
    if (*features) return cmd_features(manifest, out);
    if (*train) return cmd_train(config, out);
    if (*eval) return cmd_eval(model, manifest, crops, split);
    if (*grid) return cmd_grid(config, out);
    if (*sweep) return cmd_sweep(config, out, threshold, noise_levels, size_grid);
  } catch (const Error& e) {
    report_error(to_string(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error("Internal", e.what());
    return 1;
  }
  return 0;
}
