#pragma once

// Declarative layer specifications, shape inference, FLOP counting and the
// three classifier architectures.

#include <aimp/error.hpp>
#include <aimp/tensor.hpp>

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace aimp::nn {

struct Dense {
  std::size_t in = 0, out = 0;
};
struct Conv1D {
  std::size_t in_ch = 1, out_ch = 1, kernel = 1, stride = 1;
};
struct Conv2D {
  std::size_t in_ch = 1, out_ch = 1, kernel_h = 1, kernel_w = 1, stride = 1;
};
struct MaxPool1D {
  std::size_t size = 2;
};
struct MaxPool2D {
  std::size_t h = 2, w = 2;
};
struct ReLU {};
struct Dropout {
  double rate = 0.0;
};
struct Flatten {};

using LayerSpec = std::variant<Dense, Conv1D, Conv2D, MaxPool1D, MaxPool2D, ReLU, Dropout, Flatten>;

enum class ModelKind { DenseNet18, MelCnn2D, RawCnn1D };

constexpr std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::DenseNet18: return "DenseNet18";
    case ModelKind::MelCnn2D: return "MelCnn2D";
    case ModelKind::RawCnn1D: return "RawCnn1D";
  }
  return "Unknown";
}

inline ModelKind model_kind_from_string(std::string_view s) {
  if (s == "DenseNet18") return ModelKind::DenseNet18;
  if (s == "MelCnn2D") return ModelKind::MelCnn2D;
  if (s == "RawCnn1D") return ModelKind::RawCnn1D;
  throw Error(Errc::InvalidConfig, "unknown classifier kind: " + std::string(s));
}

inline constexpr std::size_t kNumOutputs = 5;

/// Per-example input shape (no batch dimension) and the layer chain; the
/// softmax is folded into the loss.
struct ModelSpec {
  ModelKind kind = ModelKind::DenseNet18;
  Shape input;
  std::vector<LayerSpec> layers;
  std::size_t n_classes = kNumOutputs;
};

namespace detail {

inline Shape as_channels(const Shape& s, std::size_t spatial_rank) {
  if (s.size() == spatial_rank) {
    Shape out{1};
    out.insert(out.end(), s.begin(), s.end());
    return out;
  }
  if (s.size() != spatial_rank + 1) {
    throw Error(Errc::ShapeMismatch, "expected rank " + std::to_string(spatial_rank + 1) + " input, got " +
                                         shape_string(s));
  }
  return s;
}

inline std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t stride) {
  if (k == 0 || stride == 0) throw Error(Errc::ShapeMismatch, "kernel and stride must be positive");
  if (in < k) throw Error(Errc::ShapeMismatch, "kernel larger than input");
  return (in - k) / stride + 1;
}

}  // namespace detail

/// Output shape of one layer for a per-example input shape.
inline Shape layer_output_shape(const LayerSpec& layer, const Shape& in) {
  return std::visit(
      [&](const auto& l) -> Shape {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, Dense>) {
          if (in.size() != 1 || in[0] != l.in) {
            throw Error(Errc::ShapeMismatch, "Dense expects (" + std::to_string(l.in) + "), got " + shape_string(in));
          }
          return {l.out};
        } else if constexpr (std::is_same_v<L, Conv1D>) {
          const Shape s = detail::as_channels(in, 1);
          if (s[0] != l.in_ch) throw Error(Errc::ShapeMismatch, "Conv1D channel mismatch at " + shape_string(in));
          return {l.out_ch, detail::conv_extent(s[1], l.kernel, l.stride)};
        } else if constexpr (std::is_same_v<L, Conv2D>) {
          const Shape s = detail::as_channels(in, 2);
          if (s[0] != l.in_ch) throw Error(Errc::ShapeMismatch, "Conv2D channel mismatch at " + shape_string(in));
          return {l.out_ch, detail::conv_extent(s[1], l.kernel_h, l.stride),
                  detail::conv_extent(s[2], l.kernel_w, l.stride)};
        } else if constexpr (std::is_same_v<L, MaxPool1D>) {
          const Shape s = detail::as_channels(in, 1);
          if (l.size == 0 || s[1] < l.size) throw Error(Errc::ShapeMismatch, "MaxPool1D window too large");
          return {s[0], s[1] / l.size};
        } else if constexpr (std::is_same_v<L, MaxPool2D>) {
          const Shape s = detail::as_channels(in, 2);
          if (l.h == 0 || l.w == 0 || s[1] < l.h || s[2] < l.w) {
            throw Error(Errc::ShapeMismatch, "MaxPool2D window too large");
          }
          return {s[0], s[1] / l.h, s[2] / l.w};
        } else if constexpr (std::is_same_v<L, Flatten>) {
          return {shape_size(in)};
        } else if constexpr (std::is_same_v<L, Dropout>) {
          if (!(l.rate >= 0.0 && l.rate < 1.0)) throw Error(Errc::InvalidParams, "dropout rate must be in [0,1)");
          return in;
        } else {
          return in;
        }
      },
      layer);
}

/// Per-example shapes before every layer plus the final output (layers+1 entries).
inline std::vector<Shape> infer_shapes(const ModelSpec& spec) {
  std::vector<Shape> shapes{spec.input};
  for (const LayerSpec& l : spec.layers) shapes.push_back(layer_output_shape(l, shapes.back()));
  if (shapes.back() != Shape{spec.n_classes}) {
    throw Error(Errc::ShapeMismatch, "network output " + shape_string(shapes.back()) + " does not match " +
                                         std::to_string(spec.n_classes) + " classes");
  }
  return shapes;
}

/// Multiply-accumulates count as 2 FLOPs; only Dense and convolutions count.
inline std::uint64_t count_flops(const ModelSpec& spec) {
  const std::vector<Shape> shapes = infer_shapes(spec);
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Shape& out = shapes[i + 1];
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, Dense>) {
            total += 2ull * l.in * l.out;
          } else if constexpr (std::is_same_v<L, Conv1D>) {
            total += 2ull * out[1] * l.out_ch * l.in_ch * l.kernel;
          } else if constexpr (std::is_same_v<L, Conv2D>) {
            total += 2ull * out[1] * out[2] * l.out_ch * l.in_ch * l.kernel_h * l.kernel_w;
          }
        },
        spec.layers[i]);
  }
  return total;
}

inline bool has_params(const LayerSpec& l) {
  return std::holds_alternative<Dense>(l) || std::holds_alternative<Conv1D>(l) || std::holds_alternative<Conv2D>(l);
}

/// Default architectures.
///
/// DenseNet18: 18 -> 64 -> 64 -> 5 with ReLU and dropout 0.5.
/// MelCnn2D on (128, 188): three 3x3 conv + 2x2 max-pool stages (8/16/32
/// channels; the first two convolutions use stride 2), two Dense(128) with
/// dropout 0.1, about 2.1 MFLOPs.
/// RawCnn1D on 32000 samples: three conv + max-pool(4) stages (16/32/64
/// channels, kernels 64/32/16, strides 8/4/2), two Dense(128) with dropout 0.1.
inline ModelSpec build_architecture(ModelKind kind) {
  ModelSpec s;
  s.kind = kind;
  switch (kind) {
    case ModelKind::DenseNet18:
      s.input = {18};
      s.layers = {Dense{18, 64}, ReLU{}, Dropout{0.5}, Dense{64, 64}, ReLU{}, Dropout{0.5}, Dense{64, 5}};
      break;
    case ModelKind::MelCnn2D:
      s.input = {128, 188};
      s.layers = {Conv2D{1, 8, 3, 3, 2},  ReLU{},       MaxPool2D{2, 2}, Conv2D{8, 16, 3, 3, 2}, ReLU{},
                  MaxPool2D{2, 2},        Conv2D{16, 32, 3, 3, 1}, ReLU{}, MaxPool2D{2, 2},  Flatten{},
                  Dense{256, 128},        ReLU{},       Dropout{0.1},   Dense{128, 128},        ReLU{},
                  Dense{128, 5}};
      break;
    case ModelKind::RawCnn1D:
      s.input = {32000};
      s.layers = {Conv1D{1, 16, 64, 8},  ReLU{}, MaxPool1D{4}, Conv1D{16, 32, 32, 4}, ReLU{}, MaxPool1D{4},
                  Conv1D{32, 64, 16, 2}, ReLU{}, MaxPool1D{4}, Flatten{},            Dense{320, 128}, ReLU{},
                  Dropout{0.1},          Dense{128, 128}, ReLU{}, Dense{128, 5}};
      break;
  }
  infer_shapes(s);
  return s;
}

/// Reduced-width variants with the same layer structure, for gradient checks.
inline ModelSpec build_tiny_architecture(ModelKind kind) {
  ModelSpec s;
  s.kind = kind;
  switch (kind) {
    case ModelKind::DenseNet18:
      s.input = {18};
      s.layers = {Dense{18, 8}, ReLU{}, Dropout{0.5}, Dense{8, 8}, ReLU{}, Dropout{0.5}, Dense{8, 5}};
      break;
    case ModelKind::MelCnn2D:
      s.input = {8, 10};
      s.layers = {Conv2D{1, 2, 3, 3, 1}, ReLU{},        MaxPool2D{2, 2}, Conv2D{2, 3, 2, 2, 1}, ReLU{},
                  Flatten{},             Dense{18, 6},  ReLU{},          Dropout{0.1},          Dense{6, 6},
                  ReLU{},                Dense{6, 5}};
      break;
    case ModelKind::RawCnn1D:
      s.input = {64};
      s.layers = {Conv1D{1, 3, 8, 2}, ReLU{},       MaxPool1D{2}, Conv1D{3, 4, 4, 2}, ReLU{}, MaxPool1D{2},
                  Flatten{},          Dense{12, 6}, ReLU{},       Dropout{0.1},       Dense{6, 6}, ReLU{},
                  Dense{6, 5}};
      break;
  }
  infer_shapes(s);
  return s;
}

}  // namespace aimp::nn
