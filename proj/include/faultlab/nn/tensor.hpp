#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "faultlab/error.hpp"

namespace faultlab::nn {

/// Dense row-major tensor. Element count always equals the product of the shape.
template <class T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, T fill = T{}) : shape(std::move(s)), data(numel(shape), fill) {}
  Tensor(std::vector<std::size_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel(shape)) throw ConfigError("Tensor: data size does not match shape");
  }

  static std::size_t numel(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
  }

  std::size_t size() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  std::span<T> span() { return data; }
  std::span<const T> span() const { return data; }

  void resize(std::vector<std::size_t> s) {
    shape = std::move(s);
    data.assign(numel(shape), T{});
  }
};

inline std::string shape_string(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out + "]";
}

template <class T>
void expect_shape(const Tensor<T>& t, const std::vector<std::size_t>& want, const char* where) {
  if (t.shape != want)
    throw ConfigError(std::string(where) + ": shape " + shape_string(t.shape) + ", expected " + shape_string(want));
}

template <class Range>
void check_finite(const Range& values, const char* where) {
  for (auto v : values)
    if (!std::isfinite(static_cast<double>(v))) throw NumericalError(std::string(where) + ": non-finite value");
}

/// Batch of channels-last sequences stored as [sample][halo + len + halo][channel].
/// Halo rows stay zero: kernels only write the len valid rows of each sample,
/// so a convolution reads its zero padding in place.
template <class T>
struct Sequence {
  std::size_t n = 0;
  std::size_t len = 0;
  std::size_t channels = 0;
  std::size_t halo = 0;
  std::vector<T> data;

  Sequence() = default;
  Sequence(std::size_t n_, std::size_t len_, std::size_t channels_, std::size_t halo_) {
    reshape(n_, len_, channels_, halo_);
  }

  /// Zero-fills on any shape change; an unchanged shape keeps the buffer.
  void reshape(std::size_t n_, std::size_t len_, std::size_t channels_, std::size_t halo_) {
    if (n_ == n && len_ == len && channels_ == channels && halo_ == halo && data.size() == n * sample_stride()) return;
    n = n_;
    len = len_;
    channels = channels_;
    halo = halo_;
    data.assign(n * sample_stride(), T{});
  }

  std::size_t rows_per_sample() const { return len + 2 * halo; }
  std::size_t sample_stride() const { return rows_per_sample() * channels; }
  /// First valid row of sample s.
  T* sample(std::size_t s) { return data.data() + s * sample_stride() + halo * channels; }
  const T* sample(std::size_t s) const { return data.data() + s * sample_stride() + halo * channels; }
};

/// N x C x T tensor to channels-last sequence.
template <class T>
void to_sequence(const Tensor<T>& x, std::size_t halo, Sequence<T>& out) {
  if (x.shape.size() != 3) throw ConfigError("to_sequence: expected N x C x T, got " + shape_string(x.shape));
  const std::size_t n = x.dim(0), c_count = x.dim(1), len = x.dim(2);
  out.reshape(n, len, c_count, halo);
  for (std::size_t s = 0; s < n; ++s) {
    T* dst = out.sample(s);
    const T* src = x.ptr() + s * c_count * len;
    for (std::size_t c = 0; c < c_count; ++c)
      for (std::size_t t = 0; t < len; ++t) dst[t * c_count + c] = src[c * len + t];
  }
}

template <class T>
Sequence<T> to_sequence(const Tensor<T>& x, std::size_t halo) {
  Sequence<T> out;
  to_sequence(x, halo, out);
  return out;
}

/// Channels-last sequence to N x C x T tensor.
template <class T>
void from_sequence(const Sequence<T>& x, Tensor<T>& out) {
  out.shape = {x.n, x.channels, x.len};
  out.data.resize(x.n * x.channels * x.len);
  for (std::size_t s = 0; s < x.n; ++s) {
    const T* src = x.sample(s);
    T* dst = out.ptr() + s * x.channels * x.len;
    for (std::size_t t = 0; t < x.len; ++t)
      for (std::size_t c = 0; c < x.channels; ++c) dst[c * x.len + t] = src[t * x.channels + c];
  }
}

template <class T>
Tensor<T> from_sequence(const Sequence<T>& x) {
  Tensor<T> out;
  from_sequence(x, out);
  return out;
}

}  // namespace faultlab::nn
