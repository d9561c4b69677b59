#pragma once

#include <aimp/audio_io.hpp>
#include <aimp/error.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace aimp {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

/// Dense row-major N-d array.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T{}) : shape(std::move(s)), data(shape_size(shape), fill) {}
  Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_size(shape)) throw Error(Errc::ShapeMismatch, "data length does not match shape");
  }

  std::size_t size() const noexcept { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const noexcept { return shape.size(); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  T& at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  const T& at2(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

  void reshape(Shape s) {
    if (shape_size(s) != data.size()) throw Error(Errc::ShapeMismatch, "reshape changes element count");
    shape = std::move(s);
  }

  /// Resize to `s`, reusing storage; contents are unspecified.
  void resize(const Shape& s) {
    shape = s;
    data.resize(shape_size(s));
  }
};

// Binary tensor file: "AIMT", u32 dtype (1 = f32), u32 ndim, u32 dims[ndim],
// then row-major little-endian f32 data.

inline void write_tensor_file(const Tensor<float>& t, const std::filesystem::path& path) {
  std::vector<char> buf = {'A', 'I', 'M', 'T'};
  detail::put_le<std::uint32_t>(buf, 1);
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape) detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
  const std::size_t off = buf.size();
  buf.resize(off + t.size() * sizeof(float));
  std::memcpy(buf.data() + off, t.data.data(), t.size() * sizeof(float));
  detail::write_file(path, buf);
}

inline Tensor<float> read_tensor_file(const std::filesystem::path& path) {
  const std::vector<char> buf = detail::read_file(path);
  if (buf.size() < 12 || std::memcmp(buf.data(), "AIMT", 4) != 0) {
    throw Error(Errc::IoError, path.string() + " is not a tensor file");
  }
  if (detail::get_le<std::uint32_t>(buf.data() + 4) != 1) throw Error(Errc::IoError, "unsupported tensor dtype");
  const auto ndim = detail::get_le<std::uint32_t>(buf.data() + 8);
  if (buf.size() < 12 + 4ull * ndim) throw Error(Errc::IoError, "truncated tensor header");
  Shape shape(ndim);
  for (std::uint32_t i = 0; i < ndim; ++i) shape[i] = detail::get_le<std::uint32_t>(buf.data() + 12 + 4 * i);
  const std::size_t off = 12 + 4ull * ndim;
  const std::size_t n = shape_size(shape);
  if (buf.size() != off + n * sizeof(float)) throw Error(Errc::IoError, "tensor data length mismatch");
  Tensor<float> t(shape);
  std::memcpy(t.data.data(), buf.data() + off, n * sizeof(float));
  return t;
}

}  // namespace aimp
