#pragma once

// Parameters, forward pass, reverse-mode backward pass and softmax
// cross-entropy for a ModelSpec.

#include <aimp/error.hpp>
#include <aimp/nn/gemm.hpp>
#include <aimp/nn/layers.hpp>
#include <aimp/rng.hpp>
#include <aimp/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <span>
#include <type_traits>
#include <vector>

namespace aimp::nn {

enum class Mode { Train, Eval };

template <typename T>
struct LayerParams {
  Tensor<T> weight;  // Dense: (in, out); Conv1D: (out_ch, in_ch*k); Conv2D: (out_ch, in_ch*kh*kw)
  Tensor<T> bias;    // (out) / (out_ch)
};

template <typename T>
using ParamSet = std::vector<LayerParams<T>>;

template <typename T>
ParamSet<T> zero_params(const ModelSpec& spec) {
  ParamSet<T> p(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, Dense>) {
            p[i].weight = Tensor<T>({l.in, l.out});
            p[i].bias = Tensor<T>({l.out});
          } else if constexpr (std::is_same_v<L, Conv1D>) {
            p[i].weight = Tensor<T>({l.out_ch, l.in_ch * l.kernel});
            p[i].bias = Tensor<T>({l.out_ch});
          } else if constexpr (std::is_same_v<L, Conv2D>) {
            p[i].weight = Tensor<T>({l.out_ch, l.in_ch * l.kernel_h * l.kernel_w});
            p[i].bias = Tensor<T>({l.out_ch});
          }
        },
        spec.layers[i]);
  }
  return p;
}

template <typename T>
std::size_t param_count(const ParamSet<T>& p) {
  std::size_t n = 0;
  for (const auto& l : p) n += l.weight.size() + l.bias.size();
  return n;
}

/// Optional per-input affine scaling stored with a model: x -> (x - mean) / stddev.
/// A single entry applies to every input value.
struct InputScaling {
  std::vector<double> mean;
  std::vector<double> stddev;

  bool empty() const noexcept { return mean.empty(); }

  template <typename T>
  void apply(std::span<T> x) const {
    if (empty()) return;
    if (mean.size() == 1) {
      const T m = static_cast<T>(mean[0]);
      const T inv = static_cast<T>(1.0 / stddev[0]);
      for (T& v : x) v = (v - m) * inv;
      return;
    }
    if (mean.size() != x.size()) throw Error(Errc::ShapeMismatch, "input scaling length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<T>((x[i] - mean[i]) / stddev[i]);
  }
};

template <typename T>
class Model {
 public:
  Model() = default;
  explicit Model(ModelSpec spec) : spec_(std::move(spec)), shapes_(infer_shapes(spec_)) {
    params_ = zero_params<T>(spec_);
  }

  /// Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases.
  void init(std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      auto& w = params_[i].weight;
      if (w.size() == 0) continue;
      const std::size_t fan_in = std::holds_alternative<Dense>(spec_.layers[i]) ? w.dim(0) : w.dim(1);
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (T& x : w.data) x = static_cast<T>(rng.uniform(-bound, bound));
      std::fill(params_[i].bias.data.begin(), params_[i].bias.data.end(), T(0));
    }
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  const std::vector<Shape>& shapes() const noexcept { return shapes_; }
  ParamSet<T>& params() noexcept { return params_; }
  const ParamSet<T>& params() const noexcept { return params_; }
  std::size_t input_size() const { return shape_size(spec_.input); }

  InputScaling input_scaling;

  template <typename U>
  Model<U> cast() const {
    Model<U> out(spec_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      std::transform(params_[i].weight.data.begin(), params_[i].weight.data.end(),
                     out.params()[i].weight.data.begin(), [](T x) { return static_cast<U>(x); });
      std::transform(params_[i].bias.data.begin(), params_[i].bias.data.end(), out.params()[i].bias.data.begin(),
                     [](T x) { return static_cast<U>(x); });
    }
    out.input_scaling = input_scaling;
    return out;
  }

 private:
  ModelSpec spec_;
  std::vector<Shape> shapes_;
  ParamSet<T> params_;
};

/// Activations and per-layer scratch for one forward/backward pass.
template <typename T>
struct Workspace {
  std::vector<Tensor<T>> acts;                    // acts[i] = input of layer i; acts.back() = logits
  std::vector<std::vector<std::uint32_t>> argmax;  // max-pool routing
  std::vector<std::vector<T>> masks;              // dropout scale masks
  std::vector<std::vector<T>> cols;               // im2col buffers, one per conv layer and example
  std::vector<T> dcol;
  Tensor<T> grad_a, grad_b;
  std::size_t batch = 0;
};

namespace detail {

inline std::array<std::size_t, 3> chw(const Shape& s) {
  if (s.size() == 2) return {1, s[0], s[1]};
  return {s[0], s[1], s[2]};
}

inline std::array<std::size_t, 2> cl(const Shape& s) {
  if (s.size() == 1) return {1, s[0]};
  return {s[0], s[1]};
}

template <typename T>
void im2col_2d(const T* x, std::size_t C, std::size_t H, std::size_t W, const Conv2D& l, std::size_t oh,
               std::size_t ow, T* col) {
  const std::size_t P = oh * ow;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < l.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < l.kernel_w; ++kj) {
        T* row = col + ((c * l.kernel_h + ki) * l.kernel_w + kj) * P;
        for (std::size_t y = 0; y < oh; ++y) {
          const T* src = x + (c * H + y * l.stride + ki) * W + kj;
          T* dst = row + y * ow;
          if (l.stride == 1) {
            std::memcpy(dst, src, ow * sizeof(T));
          } else {
            for (std::size_t xx = 0; xx < ow; ++xx) dst[xx] = src[xx * l.stride];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_2d(const T* col, std::size_t C, std::size_t H, std::size_t W, const Conv2D& l, std::size_t oh,
               std::size_t ow, T* dx) {
  const std::size_t P = oh * ow;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < l.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < l.kernel_w; ++kj) {
        const T* row = col + ((c * l.kernel_h + ki) * l.kernel_w + kj) * P;
        for (std::size_t y = 0; y < oh; ++y) {
          T* dst = dx + (c * H + y * l.stride + ki) * W + kj;
          const T* src = row + y * ow;
          for (std::size_t xx = 0; xx < ow; ++xx) dst[xx * l.stride] += src[xx];
        }
      }
    }
  }
}

template <typename T>
void im2col_1d(const T* x, std::size_t C, std::size_t L, const Conv1D& l, std::size_t ol, T* col) {
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t k = 0; k < l.kernel; ++k) {
      T* row = col + (c * l.kernel + k) * ol;
      const T* src = x + c * L + k;
      for (std::size_t p = 0; p < ol; ++p) row[p] = src[p * l.stride];
    }
  }
}

template <typename T>
void col2im_1d(const T* col, std::size_t C, std::size_t L, const Conv1D& l, std::size_t ol, T* dx) {
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t k = 0; k < l.kernel; ++k) {
      const T* row = col + (c * l.kernel + k) * ol;
      T* dst = dx + c * L + k;
      for (std::size_t p = 0; p < ol; ++p) dst[p * l.stride] += row[p];
    }
  }
}

}  // namespace detail

/// Runs the network on a batch of shape (B, input...) and leaves every
/// activation in `ws`. Train mode applies inverted dropout with masks drawn
/// from `rng`; eval mode is deterministic and ignores `rng`.
template <typename T>
const Tensor<T>& forward(const Model<T>& model, const Tensor<T>& batch, Mode mode, Rng& rng, Workspace<T>& ws) {
  const ModelSpec& spec = model.spec();
  const auto& shapes = model.shapes();
  const std::size_t in_size = shape_size(spec.input);
  if (batch.rank() < 1 || batch.dim(0) == 0 || batch.size() != batch.dim(0) * in_size) {
    throw Error(Errc::ShapeMismatch, "batch " + shape_string(batch.shape) + " does not match input " +
                                         shape_string(spec.input));
  }
  const std::size_t B = batch.dim(0);
  const std::size_t n_layers = spec.layers.size();
  ws.batch = B;
  ws.acts.resize(n_layers + 1);
  ws.argmax.resize(n_layers);
  ws.masks.resize(n_layers);
  ws.cols.resize(n_layers);
  ws.acts[0].resize([&] {
    Shape s{B};
    s.insert(s.end(), spec.input.begin(), spec.input.end());
    return s;
  }());
  std::copy(batch.data.begin(), batch.data.end(), ws.acts[0].data.begin());

  for (std::size_t li = 0; li < n_layers; ++li) {
    const Tensor<T>& x = ws.acts[li];
    Tensor<T>& y = ws.acts[li + 1];
    Shape out_shape{B};
    out_shape.insert(out_shape.end(), shapes[li + 1].begin(), shapes[li + 1].end());
    y.resize(out_shape);
    const std::size_t in_ex = shape_size(shapes[li]);
    const std::size_t out_ex = shape_size(shapes[li + 1]);
    const LayerParams<T>& p = model.params()[li];

    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, Dense>) {
            for (std::size_t b = 0; b < B; ++b) std::copy(p.bias.data.begin(), p.bias.data.end(), &y[b * l.out]);
            gemm_nn(B, l.out, l.in, x.data.data(), p.weight.data.data(), y.data.data());
          } else if constexpr (std::is_same_v<L, Conv2D>) {
            const auto [C, H, W] = detail::chw(shapes[li]);
            const std::size_t oh = shapes[li + 1][1], ow = shapes[li + 1][2], P = oh * ow;
            const std::size_t K = C * l.kernel_h * l.kernel_w;
            auto& col = ws.cols[li];
            col.resize(B * K * P);
            for (std::size_t b = 0; b < B; ++b) {
              T* cb = col.data() + b * K * P;
              detail::im2col_2d(&x[b * in_ex], C, H, W, l, oh, ow, cb);
              T* yb = &y[b * out_ex];
              for (std::size_t o = 0; o < l.out_ch; ++o) std::fill(yb + o * P, yb + (o + 1) * P, p.bias[o]);
              gemm_nn(l.out_ch, P, K, p.weight.data.data(), cb, yb);
            }
          } else if constexpr (std::is_same_v<L, Conv1D>) {
            const auto [C, Lin] = detail::cl(shapes[li]);
            const std::size_t P = shapes[li + 1][1];
            const std::size_t K = C * l.kernel;
            auto& col = ws.cols[li];
            col.resize(B * K * P);
            for (std::size_t b = 0; b < B; ++b) {
              T* cb = col.data() + b * K * P;
              detail::im2col_1d(&x[b * in_ex], C, Lin, l, P, cb);
              T* yb = &y[b * out_ex];
              for (std::size_t o = 0; o < l.out_ch; ++o) std::fill(yb + o * P, yb + (o + 1) * P, p.bias[o]);
              gemm_nn(l.out_ch, P, K, p.weight.data.data(), cb, yb);
            }
          } else if constexpr (std::is_same_v<L, MaxPool2D>) {
            const auto [C, H, W] = detail::chw(shapes[li]);
            const std::size_t oh = shapes[li + 1][1], ow = shapes[li + 1][2];
            auto& am = ws.argmax[li];
            am.resize(B * out_ex);
            for (std::size_t b = 0; b < B; ++b) {
              const T* xb = &x[b * in_ex];
              for (std::size_t c = 0; c < C; ++c) {
                for (std::size_t oy = 0; oy < oh; ++oy) {
                  for (std::size_t ox = 0; ox < ow; ++ox) {
                    std::size_t best = (c * H + oy * l.h) * W + ox * l.w;
                    T v = xb[best];
                    for (std::size_t i = 0; i < l.h; ++i) {
                      for (std::size_t j = 0; j < l.w; ++j) {
                        const std::size_t idx = (c * H + oy * l.h + i) * W + ox * l.w + j;
                        const bool gt = xb[idx] > v;
                        best = gt ? idx : best;
                        v = gt ? xb[idx] : v;
                      }
                    }
                    const std::size_t o = b * out_ex + (c * oh + oy) * ow + ox;
                    y[o] = v;
                    am[o] = static_cast<std::uint32_t>(best);
                  }
                }
              }
            }
          } else if constexpr (std::is_same_v<L, MaxPool1D>) {
            const auto [C, Lin] = detail::cl(shapes[li]);
            const std::size_t ol = shapes[li + 1][1];
            auto& am = ws.argmax[li];
            am.resize(B * out_ex);
            for (std::size_t b = 0; b < B; ++b) {
              const T* xb = &x[b * in_ex];
              for (std::size_t c = 0; c < C; ++c) {
                for (std::size_t q = 0; q < ol; ++q) {
                  const std::size_t base = c * Lin + q * l.size;
                  std::size_t best = base;
                  T v = xb[base];
                  for (std::size_t i = 1; i < l.size; ++i) {
                    const bool gt = xb[base + i] > v;
                    best = gt ? base + i : best;
                    v = gt ? xb[base + i] : v;
                  }
                  const std::size_t o = b * out_ex + c * ol + q;
                  y[o] = v;
                  am[o] = static_cast<std::uint32_t>(best);
                }
              }
            }
          } else if constexpr (std::is_same_v<L, ReLU>) {
            const T* __restrict xp = x.data.data();
            T* __restrict yp = y.data.data();
            for (std::size_t i = 0, n = x.size(); i < n; ++i) yp[i] = std::max(xp[i], T(0));
          } else if constexpr (std::is_same_v<L, Dropout>) {
            if (mode == Mode::Train && l.rate > 0.0) {
              auto& mask = ws.masks[li];
              mask.resize(x.size());
              const T keep_scale = static_cast<T>(1.0 / (1.0 - l.rate));
              for (std::size_t i = 0; i < x.size(); ++i) {
                mask[i] = rng.uniform() < l.rate ? T(0) : keep_scale;
                y[i] = x[i] * mask[i];
              }
            } else {
              ws.masks[li].clear();
              std::copy(x.data.begin(), x.data.end(), y.data.begin());
            }
          } else {
            std::copy(x.data.begin(), x.data.end(), y.data.begin());
          }
        },
        spec.layers[li]);
  }
  return ws.acts.back();
}

/// Logits for a batch; allocates its own workspace.
template <typename T>
Tensor<T> forward(const Model<T>& model, const Tensor<T>& batch, Mode mode, Rng& rng) {
  Workspace<T> ws;
  return forward(model, batch, mode, rng, ws);
}

/// Back-propagates d(loss)/d(logits) through the activations recorded in
/// `ws`, accumulating parameter gradients into `grads` (which must be
/// zero_params-shaped). The input gradient is not computed.
template <typename T>
void backward(const Model<T>& model, Workspace<T>& ws, const Tensor<T>& grad_logits, ParamSet<T>& grads) {
  const ModelSpec& spec = model.spec();
  const auto& shapes = model.shapes();
  const std::size_t B = ws.batch;
  Tensor<T>* g_out = &ws.grad_a;
  Tensor<T>* g_in = &ws.grad_b;
  *g_out = grad_logits;

  for (std::size_t li = spec.layers.size(); li-- > 0;) {
    const Tensor<T>& x = ws.acts[li];
    const bool need_input_grad = li > 0;
    const std::size_t in_ex = shape_size(shapes[li]);
    const std::size_t out_ex = shape_size(shapes[li + 1]);
    if (need_input_grad) {
      g_in->resize(x.shape);
    }
    const Tensor<T>& gy = *g_out;
    const LayerParams<T>& p = model.params()[li];
    LayerParams<T>& gp = grads[li];

    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, Dense>) {
            gemm_tn(l.in, l.out, B, x.data.data(), gy.data.data(), gp.weight.data.data());
            for (std::size_t b = 0; b < B; ++b) {
              for (std::size_t o = 0; o < l.out; ++o) gp.bias[o] += gy[b * l.out + o];
            }
            if (need_input_grad) {
              std::fill(g_in->data.begin(), g_in->data.end(), T(0));
              gemm_nt(B, l.in, l.out, gy.data.data(), p.weight.data.data(), g_in->data.data());
            }
          } else if constexpr (std::is_same_v<L, Conv2D>) {
            const auto [C, H, W] = detail::chw(shapes[li]);
            const std::size_t oh = shapes[li + 1][1], ow = shapes[li + 1][2], P = oh * ow;
            const std::size_t K = C * l.kernel_h * l.kernel_w;
            if (need_input_grad) {
              ws.dcol.resize(K * P);
              std::fill(g_in->data.begin(), g_in->data.end(), T(0));
            }
            for (std::size_t b = 0; b < B; ++b) {
              const T* gyb = &gy[b * out_ex];
              gemm_nt(l.out_ch, K, P, gyb, ws.cols[li].data() + b * K * P, gp.weight.data.data());
              for (std::size_t o = 0; o < l.out_ch; ++o) {
                T acc = 0;
                for (std::size_t q = 0; q < P; ++q) acc += gyb[o * P + q];
                gp.bias[o] += acc;
              }
              if (need_input_grad) {
                std::fill(ws.dcol.begin(), ws.dcol.end(), T(0));
                gemm_tn(K, P, l.out_ch, p.weight.data.data(), gyb, ws.dcol.data());
                detail::col2im_2d(ws.dcol.data(), C, H, W, l, oh, ow, &(*g_in)[b * in_ex]);
              }
            }
          } else if constexpr (std::is_same_v<L, Conv1D>) {
            const auto [C, Lin] = detail::cl(shapes[li]);
            const std::size_t P = shapes[li + 1][1];
            const std::size_t K = C * l.kernel;
            if (need_input_grad) {
              ws.dcol.resize(K * P);
              std::fill(g_in->data.begin(), g_in->data.end(), T(0));
            }
            for (std::size_t b = 0; b < B; ++b) {
              const T* gyb = &gy[b * out_ex];
              gemm_nt(l.out_ch, K, P, gyb, ws.cols[li].data() + b * K * P, gp.weight.data.data());
              for (std::size_t o = 0; o < l.out_ch; ++o) {
                T acc = 0;
                for (std::size_t q = 0; q < P; ++q) acc += gyb[o * P + q];
                gp.bias[o] += acc;
              }
              if (need_input_grad) {
                std::fill(ws.dcol.begin(), ws.dcol.end(), T(0));
                gemm_tn(K, P, l.out_ch, p.weight.data.data(), gyb, ws.dcol.data());
                detail::col2im_1d(ws.dcol.data(), C, Lin, l, P, &(*g_in)[b * in_ex]);
              }
            }
          } else if constexpr (std::is_same_v<L, MaxPool2D> || std::is_same_v<L, MaxPool1D>) {
            if (need_input_grad) {
              std::fill(g_in->data.begin(), g_in->data.end(), T(0));
              const auto& am = ws.argmax[li];
              for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t o = 0; o < out_ex; ++o) {
                  (*g_in)[b * in_ex + am[b * out_ex + o]] += gy[b * out_ex + o];
                }
              }
            }
          } else if constexpr (std::is_same_v<L, ReLU>) {
            if (need_input_grad) {
              const T* __restrict xp = x.data.data();
              const T* __restrict gp_ = gy.data.data();
              T* __restrict gi = g_in->data.data();
              for (std::size_t i = 0, n = x.size(); i < n; ++i) gi[i] = xp[i] > T(0) ? gp_[i] : T(0);
            }
          } else if constexpr (std::is_same_v<L, Dropout>) {
            if (need_input_grad) {
              const auto& mask = ws.masks[li];
              if (mask.empty()) {
                std::copy(gy.data.begin(), gy.data.end(), g_in->data.begin());
              } else {
                const T* __restrict gp_ = gy.data.data();
                const T* __restrict mp = mask.data();
                T* __restrict gi = g_in->data.data();
                for (std::size_t i = 0, n = x.size(); i < n; ++i) gi[i] = gp_[i] * mp[i];
              }
            }
          } else {
            if (need_input_grad) std::copy(gy.data.begin(), gy.data.end(), g_in->data.begin());
          }
        },
        spec.layers[li]);
    std::swap(g_out, g_in);
  }
}

/// Mean softmax cross-entropy of `logits` (B x C) and its gradient.
template <typename T>
double softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels,
                             std::type_identity_t<Tensor<T>>* grad) {
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  if (labels.size() != B) throw Error(Errc::ShapeMismatch, "label count does not match batch");
  if (grad) grad->resize(logits.shape);
  double loss = 0.0;
  std::vector<double> prob(C);
  for (std::size_t b = 0; b < B; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= C) throw Error(Errc::BadLabel, "label out of range");
    const T* z = &logits[b * C];
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(z[c]));
    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      prob[c] = std::exp(static_cast<double>(z[c]) - mx);
      sum += prob[c];
    }
    loss += -(static_cast<double>(z[y]) - mx - std::log(sum));
    if (grad) {
      for (std::size_t c = 0; c < C; ++c) {
        const double g = prob[c] / sum - (static_cast<int>(c) == y ? 1.0 : 0.0);
        (*grad)[b * C + c] = static_cast<T>(g / static_cast<double>(B));
      }
    }
  }
  return loss / static_cast<double>(B);
}

template <typename T>
struct LossAndGrad {
  double loss = 0.0;
  ParamSet<T> grads;
};

template <typename T>
LossAndGrad<T> loss_and_grad(const Model<T>& model, const Tensor<T>& batch, std::span<const int> labels, Mode mode,
                             Rng& rng, Workspace<T>& ws) {
  const Tensor<T>& logits = forward(model, batch, mode, rng, ws);
  Tensor<T> dlogits;
  LossAndGrad<T> out;
  out.loss = softmax_cross_entropy(logits, labels, &dlogits);
  out.grads = zero_params<T>(model.spec());
  backward(model, ws, dlogits, out.grads);
  return out;
}

template <typename T>
LossAndGrad<T> loss_and_grad(const Model<T>& model, const Tensor<T>& batch, std::span<const int> labels,
                             Mode mode, Rng& rng) {
  Workspace<T> ws;
  return loss_and_grad(model, batch, labels, mode, rng, ws);
}

}  // namespace aimp::nn
