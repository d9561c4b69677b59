#pragma once

#include <aimp/nn/model.hpp>
#include <aimp/rng.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

namespace aimp::nn {

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t params_per_layer = 50;  // all parameters when a layer has fewer
  Mode mode = Mode::Train;            // dropout masks are pinned to `dropout_seed`
  std::uint64_t dropout_seed = 0;
  std::uint64_t sample_seed = 0;
  double denominator_floor = 1e-5;
};

/// Largest relative difference |a - n| / max(|a|, |n|, floor) between the
/// analytic gradient `a` and the central difference `n` over a random subset
/// of every parameterized layer's weights and biases.
inline double grad_check(const Model<double>& model, const Tensor<double>& batch, std::span<const int> labels,
                         const GradCheckOptions& opt = {}) {
  Model<double> m = model;
  auto loss_at = [&](const Model<double>& mm) {
    Rng rng(opt.dropout_seed);
    Workspace<double> ws;
    return softmax_cross_entropy(forward(mm, batch, opt.mode, rng, ws), labels, nullptr);
  };
  Rng rng(opt.dropout_seed);
  const LossAndGrad<double> analytic = loss_and_grad(m, batch, labels, opt.mode, rng);

  Rng pick(opt.sample_seed);
  double worst = 0.0;
  for (std::size_t l = 0; l < m.params().size(); ++l) {
    const std::size_t nw = m.params()[l].weight.size();
    const std::size_t nb = m.params()[l].bias.size();
    const std::size_t total = nw + nb;
    if (total == 0) continue;
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const std::size_t take = std::min(total, opt.params_per_layer);
    for (std::size_t i = 0; i < take; ++i) std::swap(idx[i], idx[i + pick.below(total - i)]);
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t k = idx[i];
      double& p = k < nw ? m.params()[l].weight[k] : m.params()[l].bias[k - nw];
      const double a = k < nw ? analytic.grads[l].weight[k] : analytic.grads[l].bias[k - nw];
      const double orig = p;
      p = orig + opt.step;
      const double up = loss_at(m);
      p = orig - opt.step;
      const double down = loss_at(m);
      p = orig;
      const double n = (up - down) / (2.0 * opt.step);
      const double denom = std::max({std::abs(a), std::abs(n), opt.denominator_floor});
      worst = std::max(worst, std::abs(a - n) / denom);
    }
  }
  return worst;
}

}  // namespace aimp::nn
