#pragma once

// Mini-batch training with seeded shuffling, early stopping on validation
// loss and best-epoch restoration.

#include <aimp/error.hpp>
#include <aimp/nn/model.hpp>
#include <aimp/nn/optim.hpp>
#include <aimp/rng.hpp>

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace aimp::nn {

/// A lazily materialized set of labelled examples. `fill(i, out)` writes
/// example i (shape `example_shape`, row-major) into `out`.
struct ExampleSet {
  Shape example_shape;
  std::vector<int> labels;
  std::function<void(std::size_t, std::span<float>)> fill;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
};

/// Examples stored contiguously in a (N, ...) tensor.
inline ExampleSet tensor_examples(Tensor<float> inputs, std::vector<int> labels) {
  if (inputs.rank() < 1 || inputs.dim(0) != labels.size()) {
    throw Error(Errc::ShapeMismatch, "input rows do not match label count");
  }
  ExampleSet s;
  s.example_shape.assign(inputs.shape.begin() + 1, inputs.shape.end());
  const std::size_t stride = shape_size(s.example_shape);
  s.labels = std::move(labels);
  auto data = std::make_shared<const Tensor<float>>(std::move(inputs));
  s.fill = [data, stride](std::size_t i, std::span<float> out) {
    std::copy_n(data->data.begin() + static_cast<std::ptrdiff_t>(i * stride), stride, out.begin());
  };
  return s;
}

struct TrainConfig {
  OptimizerSpec optimizer = Adam{};
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  double min_delta = 1e-4;
  std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& c) {
  validate(c.optimizer);
  if (c.batch_size == 0) throw Error(Errc::InvalidConfig, "batch_size must be positive");
  if (c.max_epochs == 0) throw Error(Errc::InvalidConfig, "max_epochs must be positive");
  if (c.patience < 1) throw Error(Errc::InvalidConfig, "patience must be at least 1");
  if (!(c.min_delta >= 0.0)) throw Error(Errc::InvalidConfig, "min_delta must be non-negative");
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

/// Copies examples `idx` into `batch` (resized to (idx.size(), example...))
/// and applies the model's input scaling.
inline void assemble_batch(const Model<float>& model, const ExampleSet& set, std::span<const std::size_t> idx,
                           Tensor<float>& batch) {
  Shape s{idx.size()};
  s.insert(s.end(), set.example_shape.begin(), set.example_shape.end());
  batch.resize(s);
  const std::size_t stride = shape_size(set.example_shape);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    std::span<float> row(batch.data.data() + b * stride, stride);
    set.fill(idx[b], row);
    model.input_scaling.apply(row);
  }
}

struct LossAccuracy {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Eval-mode predictions (argmax of logits, lowest index on ties).
inline std::vector<int> predict(const Model<float>& model, const ExampleSet& set, std::size_t batch_size = 64,
                                double* mean_loss = nullptr) {
  if (set.example_shape != model.spec().input) {
    throw Error(Errc::ShapeMismatch, "example shape " + shape_string(set.example_shape) + " does not match model input " +
                                         shape_string(model.spec().input));
  }
  std::vector<int> out(set.size());
  Workspace<float> ws;
  Tensor<float> batch;
  Rng unused(0);
  std::vector<std::size_t> idx;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, set.size() - start);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), start);
    assemble_batch(model, set, idx, batch);
    const Tensor<float>& logits = forward(model, batch, Mode::Eval, unused, ws);
    const std::size_t C = logits.dim(1);
    for (std::size_t b = 0; b < n; ++b) {
      const float* z = &logits[b * C];
      out[start + b] = static_cast<int>(std::max_element(z, z + C) - z);
    }
    if (mean_loss) {
      loss_sum += softmax_cross_entropy(logits, std::span<const int>(set.labels.data() + start, n), nullptr) *
                  static_cast<double>(n);
    }
  }
  if (mean_loss) *mean_loss = set.empty() ? 0.0 : loss_sum / static_cast<double>(set.size());
  return out;
}

inline LossAccuracy evaluate_loss(const Model<float>& model, const ExampleSet& set, std::size_t batch_size = 64) {
  if (set.empty()) throw Error(Errc::EmptySet, "evaluation set is empty");
  LossAccuracy r;
  const std::vector<int> pred = predict(model, set, batch_size, &r.loss);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == set.labels[i];
  r.accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
  return r;
}

/// Trains `model` in place and leaves it holding the parameters of the epoch
/// with the lowest validation loss. Training stops at max_epochs or once the
/// validation loss has failed to improve by more than min_delta for more than
/// `patience` consecutive epochs.
inline TrainResult train(Model<float>& model, const ExampleSet& train_set, const ExampleSet& val_set,
                         const TrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  validate(cfg);
  if (train_set.empty()) throw Error(Errc::EmptySet, "training set is empty");
  if (val_set.empty()) throw Error(Errc::EmptySet, "validation set is empty");
  if (train_set.example_shape != model.spec().input) {
    throw Error(Errc::ShapeMismatch, "training examples " + shape_string(train_set.example_shape) +
                                         " do not match model input " + shape_string(model.spec().input));
  }

  Optimizer<float> opt(cfg.optimizer, model.spec());
  Workspace<float> ws;
  ParamSet<float> grads = zero_params<float>(model.spec());
  Tensor<float> batch, dlogits;
  std::vector<std::size_t> order(train_set.size());
  std::vector<int> labels;

  TrainResult result;
  ParamSet<float> best = model.params();
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, 2 * epoch));
    Rng dropout_rng(derive_seed(cfg.seed, 2 * epoch + 1));
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, n);
      assemble_batch(model, train_set, idx, batch);
      labels.resize(n);
      for (std::size_t b = 0; b < n; ++b) labels[b] = train_set.labels[idx[b]];
      const Tensor<float>& logits = forward(model, batch, Mode::Train, dropout_rng, ws);
      loss_sum += softmax_cross_entropy(logits, labels, &dlogits) * static_cast<double>(n);
      for (auto& g : grads) {
        std::fill(g.weight.data.begin(), g.weight.data.end(), 0.0f);
        std::fill(g.bias.data.begin(), g.bias.data.end(), 0.0f);
      }
      backward(model, ws, dlogits, grads);
      opt.step(model.params(), grads);
    }

    const LossAccuracy val = evaluate_loss(model, val_set);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()), val.loss, val.accuracy};
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (val.loss < best_loss - cfg.min_delta) {
      best_loss = val.loss;
      best = model.params();
      result.best_epoch = epoch;
      stale = 0;
    } else if (++stale > cfg.patience) {
      break;
    }
  }
  model.params() = std::move(best);
  return result;
}

inline nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}, {"val_acc", r.val_acc}};
}

/// One JSON object per epoch, newline-separated.
inline void write_history(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  for (const auto& r : history) out << to_json(r).dump() << '\n';
  if (!out) throw Error(Errc::IoError, "write failed for " + path.string());
}

}  // namespace aimp::nn
