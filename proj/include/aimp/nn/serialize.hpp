#pragma once

// Model file layout (all integers u32 little-endian unless noted):
//
//   "AIMM" version
//   kind n_classes input_rank input_dims[input_rank]
//   n_layers, then per layer: tag followed by its fields
//     (Dropout stores its rate as f64)
//   n_scaling, mean[n_scaling] f64, stddev[n_scaling] f64
//   per parameterized layer: n_weight f32[n_weight] n_bias f32[n_bias]
//   crc32 of every preceding byte

#include <aimp/audio_io.hpp>
#include <aimp/error.hpp>
#include <aimp/nn/model.hpp>

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <vector>

namespace aimp::nn {

inline constexpr std::uint32_t kModelFormatVersion = 1;

namespace detail {

enum LayerTag : std::uint32_t { kDense = 1, kConv1D, kConv2D, kMaxPool1D, kMaxPool2D, kReLU, kDropout, kFlatten };

inline std::uint32_t crc32_of(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      ::crc32(::crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

class Reader {
 public:
  Reader(const char* p, std::size_t n) : p_(p), n_(n) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v = aimp::detail::get_le<T>(p_ + pos_);
    pos_ += sizeof(T);
    return v;
  }

  std::uint32_t u32() { return get<std::uint32_t>(); }

  void floats(std::vector<float>& out, std::size_t n) {
    need(n * sizeof(float));
    out.resize(n);
    std::memcpy(out.data(), p_ + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }

 private:
  void need(std::size_t k) const {
    if (pos_ + k > n_) throw Error(Errc::CorruptModel, "model file truncated");
  }
  const char* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

inline void put_spec(std::vector<char>& b, const ModelSpec& spec) {
  using aimp::detail::put_le;
  put_le<std::uint32_t>(b, static_cast<std::uint32_t>(spec.kind));
  put_le<std::uint32_t>(b, static_cast<std::uint32_t>(spec.n_classes));
  put_le<std::uint32_t>(b, static_cast<std::uint32_t>(spec.input.size()));
  for (std::size_t d : spec.input) put_le<std::uint32_t>(b, static_cast<std::uint32_t>(d));
  put_le<std::uint32_t>(b, static_cast<std::uint32_t>(spec.layers.size()));
  auto u = [&](std::size_t v) { put_le<std::uint32_t>(b, static_cast<std::uint32_t>(v)); };
  for (const LayerSpec& layer : spec.layers) {
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, Dense>) {
            u(kDense), u(l.in), u(l.out);
          } else if constexpr (std::is_same_v<L, Conv1D>) {
            u(kConv1D), u(l.in_ch), u(l.out_ch), u(l.kernel), u(l.stride);
          } else if constexpr (std::is_same_v<L, Conv2D>) {
            u(kConv2D), u(l.in_ch), u(l.out_ch), u(l.kernel_h), u(l.kernel_w), u(l.stride);
          } else if constexpr (std::is_same_v<L, MaxPool1D>) {
            u(kMaxPool1D), u(l.size);
          } else if constexpr (std::is_same_v<L, MaxPool2D>) {
            u(kMaxPool2D), u(l.h), u(l.w);
          } else if constexpr (std::is_same_v<L, ReLU>) {
            u(kReLU);
          } else if constexpr (std::is_same_v<L, Dropout>) {
            u(kDropout);
            put_le<double>(b, l.rate);
          } else {
            u(kFlatten);
          }
        },
        layer);
  }
}

inline ModelSpec get_spec(Reader& r) {
  ModelSpec s;
  const std::uint32_t kind = r.u32();
  if (kind > static_cast<std::uint32_t>(ModelKind::RawCnn1D)) throw Error(Errc::CorruptModel, "unknown model kind");
  s.kind = static_cast<ModelKind>(kind);
  s.n_classes = r.u32();
  s.input.resize(r.u32());
  for (auto& d : s.input) d = r.u32();
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    switch (r.u32()) {
      case kDense: {
        Dense l;
        l.in = r.u32(), l.out = r.u32();
        s.layers.emplace_back(l);
        break;
      }
      case kConv1D: {
        Conv1D l;
        l.in_ch = r.u32(), l.out_ch = r.u32(), l.kernel = r.u32(), l.stride = r.u32();
        s.layers.emplace_back(l);
        break;
      }
      case kConv2D: {
        Conv2D l;
        l.in_ch = r.u32(), l.out_ch = r.u32(), l.kernel_h = r.u32(), l.kernel_w = r.u32(), l.stride = r.u32();
        s.layers.emplace_back(l);
        break;
      }
      case kMaxPool1D: s.layers.emplace_back(MaxPool1D{r.u32()}); break;
      case kMaxPool2D: {
        MaxPool2D l;
        l.h = r.u32(), l.w = r.u32();
        s.layers.emplace_back(l);
        break;
      }
      case kReLU: s.layers.emplace_back(ReLU{}); break;
      case kDropout: s.layers.emplace_back(Dropout{r.get<double>()}); break;
      case kFlatten: s.layers.emplace_back(Flatten{}); break;
      default: throw Error(Errc::CorruptModel, "unknown layer tag");
    }
  }
  return s;
}

}  // namespace detail

inline std::vector<char> serialize_model(const Model<float>& model) {
  using aimp::detail::put_le;
  std::vector<char> b = {'A', 'I', 'M', 'M'};
  put_le<std::uint32_t>(b, kModelFormatVersion);
  detail::put_spec(b, model.spec());
  const InputScaling& sc = model.input_scaling;
  put_le<std::uint32_t>(b, static_cast<std::uint32_t>(sc.mean.size()));
  for (double v : sc.mean) put_le<double>(b, v);
  for (double v : sc.stddev) put_le<double>(b, v);
  auto put_floats = [&](const std::vector<float>& v) {
    put_le<std::uint32_t>(b, static_cast<std::uint32_t>(v.size()));
    const std::size_t off = b.size();
    b.resize(off + v.size() * sizeof(float));
    std::memcpy(b.data() + off, v.data(), v.size() * sizeof(float));
  };
  for (std::size_t i = 0; i < model.spec().layers.size(); ++i) {
    if (!has_params(model.spec().layers[i])) continue;
    put_floats(model.params()[i].weight.data);
    put_floats(model.params()[i].bias.data);
  }
  put_le<std::uint32_t>(b, detail::crc32_of(b.data(), b.size()));
  return b;
}

inline Model<float> deserialize_model(const std::vector<char>& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "AIMM", 4) != 0) {
    throw Error(Errc::CorruptModel, "not a model file");
  }
  const std::size_t body = bytes.size() - 4;
  if (aimp::detail::get_le<std::uint32_t>(bytes.data() + body) != detail::crc32_of(bytes.data(), body)) {
    throw Error(Errc::CorruptModel, "checksum mismatch");
  }
  detail::Reader r(bytes.data() + 4, body - 4);
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion) {
    throw Error(Errc::CorruptModel, "unsupported model format version " + std::to_string(version));
  }
  ModelSpec spec = detail::get_spec(r);
  Model<float> model = [&] {
    try {
      return Model<float>(std::move(spec));
    } catch (const Error& e) {
      throw Error(Errc::CorruptModel, std::string("invalid architecture: ") + e.what());
    }
  }();
  const std::uint32_t n_sc = r.u32();
  model.input_scaling.mean.resize(n_sc);
  model.input_scaling.stddev.resize(n_sc);
  for (auto& v : model.input_scaling.mean) v = r.get<double>();
  for (auto& v : model.input_scaling.stddev) v = r.get<double>();
  for (std::size_t i = 0; i < model.spec().layers.size(); ++i) {
    if (!has_params(model.spec().layers[i])) continue;
    for (Tensor<float>* t : {&model.params()[i].weight, &model.params()[i].bias}) {
      const std::uint32_t n = r.u32();
      if (n != t->size()) throw Error(Errc::CorruptModel, "parameter count mismatch");
      r.floats(t->data, n);
    }
  }
  return model;
}

inline void save_model(const Model<float>& model, const std::filesystem::path& path) {
  aimp::detail::write_file(path, serialize_model(model));
}

inline Model<float> load_model(const std::filesystem::path& path) {
  return deserialize_model(aimp::detail::read_file(path));
}

}  // namespace aimp::nn
