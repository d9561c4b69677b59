#pragma once

#include <aimp/error.hpp>
#include <aimp/nn/model.hpp>

#include <cmath>
#include <variant>

namespace aimp::nn {

struct Sgd {
  double lr = 1e-2;
  double momentum = 0.9;
};

struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

using OptimizerSpec = std::variant<Sgd, Adam>;

inline void validate(const OptimizerSpec& spec) {
  std::visit(
      [](const auto& o) {
        using O = std::decay_t<decltype(o)>;
        if (!(o.lr > 0.0)) throw Error(Errc::InvalidConfig, "learning rate must be positive");
        if constexpr (std::is_same_v<O, Sgd>) {
          if (!(o.momentum >= 0.0 && o.momentum < 1.0)) throw Error(Errc::InvalidConfig, "momentum must be in [0,1)");
        } else {
          if (!(o.beta1 >= 0.0 && o.beta1 < 1.0 && o.beta2 >= 0.0 && o.beta2 < 1.0 && o.eps > 0.0)) {
            throw Error(Errc::InvalidConfig, "invalid Adam hyperparameters");
          }
        }
      },
      spec);
}

/// Stateful optimizer over a ParamSet; state tensors mirror the parameters.
template <typename T>
class Optimizer {
 public:
  Optimizer(OptimizerSpec spec, const ModelSpec& model) : spec_(spec) {
    validate(spec_);
    m_ = zero_params<T>(model);
    if (std::holds_alternative<Adam>(spec_)) v_ = zero_params<T>(model);
  }

  void step(ParamSet<T>& params, const ParamSet<T>& grads) {
    ++t_;
    if (const auto* a = std::get_if<Adam>(&spec_)) {
      const double c1 = 1.0 - std::pow(a->beta1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(a->beta2, static_cast<double>(t_));
      const T lr_t = static_cast<T>(a->lr * std::sqrt(c2) / c1);
      const T b1 = static_cast<T>(a->beta1), b2 = static_cast<T>(a->beta2);
      const T eps_t = static_cast<T>(a->eps * std::sqrt(c2));
      for (std::size_t l = 0; l < params.size(); ++l) {
        adam_update(params[l].weight, grads[l].weight, m_[l].weight, v_[l].weight, lr_t, b1, b2, eps_t);
        adam_update(params[l].bias, grads[l].bias, m_[l].bias, v_[l].bias, lr_t, b1, b2, eps_t);
      }
    } else {
      const auto& s = std::get<Sgd>(spec_);
      const T lr = static_cast<T>(s.lr), mu = static_cast<T>(s.momentum);
      for (std::size_t l = 0; l < params.size(); ++l) {
        sgd_update(params[l].weight, grads[l].weight, m_[l].weight, lr, mu);
        sgd_update(params[l].bias, grads[l].bias, m_[l].bias, lr, mu);
      }
    }
  }

  std::uint64_t steps() const noexcept { return t_; }

 private:
  // Bias correction folded into the step size and epsilon.
  static void adam_update(Tensor<T>& p, const Tensor<T>& g, Tensor<T>& m, Tensor<T>& v, T lr, T b1, T b2, T eps) {
    const T one = T(1);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (one - b1) * g[i];
      v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
      p[i] -= lr * m[i] / (std::sqrt(v[i]) + eps);
    }
  }

  static void sgd_update(Tensor<T>& p, const Tensor<T>& g, Tensor<T>& m, T lr, T mu) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = mu * m[i] + g[i];
      p[i] -= lr * m[i];
    }
  }

  OptimizerSpec spec_;
  ParamSet<T> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace aimp::nn
