#pragma once
// Forward and backward kernels for the six layer types of the classifier.
// Hot-path kernels use channels-last Sequence buffers; N x C x T Tensor
// forms wrap them.

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

#include "faultlab/nn/tensor.hpp"

namespace faultlab::nn {

enum class Mode { Train, Eval };

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// ---------------------------------------------------------------------------
// conv1d: stride 1, zero padding (k-1)/2, cross-correlation (no kernel flip).
// Kernels run on channels-last sequences; the patch matrix of a sample is a
// strided view of its rows, so no unfolding copy is made.

template <class T>
using StridedMap = Eigen::Map<const RowMatrix<T>, Eigen::Unaligned, Eigen::OuterStride<>>;

/// Cout x Cin x K kernel repacked for the GEMM formulation.
template <class T>
struct ConvWeights {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 0;
  RowMatrix<T> taps;     // (K*Cin) x Cout; row j*Cin + c holds w[:, c, j]
  RowMatrix<T> flipped;  // (K*Cout) x Cin; row j*Cout + o holds w[o, :, K-1-j]

  std::size_t padding() const { return (kernel - 1) / 2; }
};

template <class T>
void pack_conv(const Tensor<T>& w, ConvWeights<T>& p) {
  if (w.shape.size() != 3) throw ConfigError("conv1d: weights must be Cout x Cin x K");
  p.out = w.dim(0);
  p.in = w.dim(1);
  p.kernel = w.dim(2);
  if (p.kernel % 2 == 0) throw ConfigError("conv1d: kernel size must be odd");
  const auto K = static_cast<Eigen::Index>(p.kernel), I = static_cast<Eigen::Index>(p.in),
             O = static_cast<Eigen::Index>(p.out);
  p.taps.resize(K * I, O);
  p.flipped.resize(K * O, I);
  for (Eigen::Index o = 0; o < O; ++o)
    for (Eigen::Index c = 0; c < I; ++c)
      for (Eigen::Index j = 0; j < K; ++j) {
        const T v = w.data[static_cast<std::size_t>((o * I + c) * K + j)];
        p.taps(j * I + c, o) = v;
        p.flipped((K - 1 - j) * O + o, c) = v;
      }
}

template <class T>
ConvWeights<T> pack_conv(const Tensor<T>& w) {
  ConvWeights<T> p;
  pack_conv(w, p);
  return p;
}

/// Adds a (K*Cin) x Cout tap gradient into a Cout x Cin x K weight gradient.
template <class T>
void unpack_conv_grad(const RowMatrix<T>& dtaps, const ConvWeights<T>& p, std::type_identity_t<std::span<T>> dw) {
  if (dw.size() != p.out * p.in * p.kernel) throw ConfigError("conv1d_backward: dw size mismatch");
  for (std::size_t o = 0; o < p.out; ++o)
    for (std::size_t c = 0; c < p.in; ++c)
      for (std::size_t j = 0; j < p.kernel; ++j)
        dw[(o * p.in + c) * p.kernel + j] +=
            dtaps(static_cast<Eigen::Index>(j * p.in + c), static_cast<Eigen::Index>(o));
}

/// y[s, t, o] = sum_{j, c} w[o, c, j] * x[s, t + j - pad, c]. Requires x.halo >= pad.
template <class T>
void conv1d_forward(const Sequence<T>& x, const ConvWeights<T>& w, std::size_t out_halo, Sequence<T>& y) {
  const std::size_t pad = w.padding();
  if (x.channels != w.in) throw ConfigError("conv1d: input channels " + std::to_string(x.channels) + " != weight channels " + std::to_string(w.in));
  if (x.halo < pad) throw ConfigError("conv1d: input halo smaller than padding");
  y.reshape(x.n, x.len, w.out, out_halo);
  const auto len = static_cast<Eigen::Index>(x.len), ci = static_cast<Eigen::Index>(w.in);
  for (std::size_t s = 0; s < x.n; ++s) {
    StridedMap<T> P(x.sample(s) - pad * w.in, len, static_cast<Eigen::Index>(w.kernel) * ci, Eigen::OuterStride<>(ci));
    MatrixMap<T> Y(y.sample(s), len, static_cast<Eigen::Index>(w.out));
    Y.noalias() = P * w.taps;
  }
}

/// Accumulates the tap gradient into dtaps ((K*Cin) x Cout) and, when dx is
/// non-null, writes the input gradient. Requires dy.halo >= pad for dx.
template <class T>
void conv1d_backward(const Sequence<T>& x, const ConvWeights<T>& w, const Sequence<T>& dy, Sequence<T>* dx,
                     RowMatrix<T>& dtaps) {
  const std::size_t pad = w.padding();
  if (dy.n != x.n || dy.len != x.len || dy.channels != w.out) throw ConfigError("conv1d_backward: dy shape mismatch");
  if (dx && dy.halo < pad) throw ConfigError("conv1d_backward: dy halo smaller than padding");
  const auto len = static_cast<Eigen::Index>(x.len), ci = static_cast<Eigen::Index>(w.in),
             co = static_cast<Eigen::Index>(w.out), k = static_cast<Eigen::Index>(w.kernel);
  if (dtaps.rows() != k * ci || dtaps.cols() != co) dtaps = RowMatrix<T>::Zero(k * ci, co);
  if (dx) dx->reshape(x.n, x.len, w.in, x.halo);
  for (std::size_t s = 0; s < x.n; ++s) {
    StridedMap<T> P(x.sample(s) - pad * w.in, len, k * ci, Eigen::OuterStride<>(ci));
    ConstMatrixMap<T> dY(dy.sample(s), len, co);
    dtaps.noalias() += P.transpose() * dY;
    if (dx) {
      StridedMap<T> Q(dy.sample(s) - pad * w.out, len, k * co, Eigen::OuterStride<>(co));
      MatrixMap<T> dX(dx->sample(s), len, ci);
      dX.noalias() = Q * w.flipped;
    }
  }
}

template <class T>
void check_conv_args(const Tensor<T>& x, const Tensor<T>& w, std::size_t padding) {
  if (x.shape.size() != 3 || w.shape.size() != 3) throw ConfigError("conv1d: expected N x C x T input and Cout x Cin x K weights");
  if (x.dim(1) != w.dim(1)) throw ConfigError("conv1d: input channels " + std::to_string(x.dim(1)) + " != weight channels " + std::to_string(w.dim(1)));
  if (w.dim(2) % 2 == 0 || 2 * padding != w.dim(2) - 1) throw ConfigError("conv1d: requires odd kernel and padding (k-1)/2");
}

/// N x C x T convenience form: y[n, o, t] = sum_{c, j} w[o, c, j] * x[n, c, t + j - pad] + bias[o].
template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, std::type_identity_t<std::span<const T>> bias, std::size_t padding) {
  check_conv_args(x, w, padding);
  if (!bias.empty() && bias.size() != w.dim(0)) throw ConfigError("conv1d: bias size mismatch");
  const auto p = pack_conv(w);
  Sequence<T> xs, ys;
  to_sequence(x, padding, xs);
  conv1d_forward(xs, p, 0, ys);
  Tensor<T> y = from_sequence(ys);
  if (!bias.empty())
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += bias[(i / x.dim(2)) % w.dim(0)];
  return y;
}

/// N x C x T convenience form. Accumulates dw (and db when nonempty); writes dx when non-null.
template <class T>
void conv1d_backward(const Tensor<T>& x, const Tensor<T>& w, std::size_t padding, const Tensor<T>& dy,
                     std::type_identity_t<Tensor<T>*> dx, std::type_identity_t<std::span<T>> dw,
                     std::type_identity_t<std::span<T>> db) {
  check_conv_args(x, w, padding);
  expect_shape(dy, {x.dim(0), w.dim(0), x.dim(2)}, "conv1d_backward dy");
  const auto p = pack_conv(w);
  Sequence<T> xs, dys, dxs;
  to_sequence(x, padding, xs);
  to_sequence(dy, padding, dys);
  RowMatrix<T> dtaps;
  conv1d_backward(xs, p, dys, dx ? &dxs : nullptr, dtaps);
  unpack_conv_grad(dtaps, p, dw);
  if (!db.empty()) {
    if (db.size() != w.dim(0)) throw ConfigError("conv1d_backward: db size mismatch");
    for (std::size_t i = 0; i < dy.size(); ++i) db[(i / x.dim(2)) % w.dim(0)] += dy.data[i];
  }
  if (dx) from_sequence(dxs, *dx);
}

// ---------------------------------------------------------------------------
// batchnorm1d over N and T per channel. Per-sample partial sums are taken in T
// and combined in double in sample order.

template <class T>
struct BatchNormState {
  std::vector<T> gamma, beta, running_mean, running_var;
  std::size_t tracked = 0;  // number of running-stat updates

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : gamma(channels, T{1}), beta(channels, T{0}), running_mean(channels, T{0}), running_var(channels, T{1}) {}
  std::size_t channels() const { return gamma.size(); }
};

/// Batch statistics of a train-mode forward, used by backward.
template <class T>
struct BatchNormCache {
  std::vector<T> mean;
  std::vector<T> inv_std;
};

namespace detail {

template <class T>
void channel_sums(const Sequence<T>& x, const T* center, std::vector<double>& out, std::vector<T>& acc) {
  const std::size_t C = x.channels;
  out.assign(C, 0.0);
  acc.resize(C);
  for (std::size_t s = 0; s < x.n; ++s) {
    std::fill(acc.begin(), acc.end(), T{});
    T* a = acc.data();
    const T* r = x.sample(s);
    if (center) {
      for (std::size_t t = 0; t < x.len; ++t, r += C)
        for (std::size_t c = 0; c < C; ++c) {
          const T d = r[c] - center[c];
          a[c] += d * d;
        }
    } else {
      for (std::size_t t = 0; t < x.len; ++t, r += C)
        for (std::size_t c = 0; c < C; ++c) a[c] += r[c];
    }
    for (std::size_t c = 0; c < C; ++c) out[c] += static_cast<double>(a[c]);
  }
}

template <class T>
void affine_rows(const Sequence<T>& x, const std::vector<T>& scale, const std::vector<T>& shift, bool relu,
                 Sequence<T>& y) {
  const std::size_t C = x.channels;
  const T* sc = scale.data();
  const T* sh = shift.data();
  for (std::size_t s = 0; s < x.n; ++s) {
    const T* r = x.sample(s);
    T* o = y.sample(s);
    for (std::size_t t = 0; t < x.len; ++t, r += C, o += C)
      for (std::size_t c = 0; c < C; ++c) {
        const T v = r[c] * sc[c] + sh[c];
        o[c] = relu ? (v > T{0} ? v : T{0}) : v;
      }
  }
}

}  // namespace detail

/// Train mode normalizes with biased batch statistics and folds the unbiased
/// variance into the running estimate; eval mode uses running statistics.
/// With fuse_relu the output is max(0, bn(x)).
template <class T>
void batchnorm_forward(const Sequence<T>& x, BatchNormState<T>& bn, Mode mode, double momentum, double eps,
                       Sequence<T>& y, BatchNormCache<T>* cache, bool fuse_relu = false) {
  const std::size_t C = x.channels;
  if (C != bn.channels()) throw ConfigError("batchnorm: channel count mismatch");
  if (x.n * x.len == 0) throw ConfigError("batchnorm: empty batch");
  y.reshape(x.n, x.len, C, x.halo);
  std::vector<T> scale(C), shift(C);
  if (mode == Mode::Eval) {
    if (bn.tracked == 0) throw ConfigError("batchnorm: eval mode before any running-statistics update");
    for (std::size_t c = 0; c < C; ++c) {
      scale[c] = static_cast<T>(bn.gamma[c] / std::sqrt(static_cast<double>(bn.running_var[c]) + eps));
      shift[c] = bn.beta[c] - scale[c] * bn.running_mean[c];
    }
    detail::affine_rows(x, scale, shift, fuse_relu, y);
    return;
  }
  const double count = static_cast<double>(x.n * x.len);
  std::vector<double> sums;
  std::vector<T> acc, mean(C), inv_std(C);
  detail::channel_sums(x, static_cast<const T*>(nullptr), sums, acc);
  std::vector<double> mean_d(C);
  for (std::size_t c = 0; c < C; ++c) {
    mean_d[c] = sums[c] / count;
    mean[c] = static_cast<T>(mean_d[c]);
  }
  detail::channel_sums(x, mean.data(), sums, acc);
  for (std::size_t c = 0; c < C; ++c) {
    const double var = sums[c] / count;
    inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + eps));
    scale[c] = bn.gamma[c] * inv_std[c];
    shift[c] = bn.beta[c] - scale[c] * mean[c];
    const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
    bn.running_mean[c] = static_cast<T>((1.0 - momentum) * bn.running_mean[c] + momentum * mean_d[c]);
    bn.running_var[c] = static_cast<T>((1.0 - momentum) * bn.running_var[c] + momentum * unbiased);
  }
  ++bn.tracked;
  detail::affine_rows(x, scale, shift, fuse_relu, y);
  if (cache) {
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
  }
}

/// dx from dy given the forward input x; accumulates dgamma and dbeta.
template <class T>
void batchnorm_backward(const Sequence<T>& x, const Sequence<T>& dy, const BatchNormState<T>& bn,
                        const BatchNormCache<T>& cache, Sequence<T>& dx, std::type_identity_t<std::span<T>> dgamma,
                        std::type_identity_t<std::span<T>> dbeta) {
  const std::size_t C = x.channels;
  if (dy.n != x.n || dy.len != x.len || dy.channels != C || cache.mean.size() != C)
    throw ConfigError("batchnorm_backward: shape mismatch");
  dx.reshape(x.n, x.len, C, dy.halo);
  const double count = static_cast<double>(x.n * x.len);
  const T* mu = cache.mean.data();
  const T* is = cache.inv_std.data();
  std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
  std::vector<T> a(C), b(C);
  for (std::size_t s = 0; s < x.n; ++s) {
    std::fill(a.begin(), a.end(), T{});
    std::fill(b.begin(), b.end(), T{});
    const T* xr = x.sample(s);
    const T* g = dy.sample(s);
    T* pa = a.data();
    T* pb = b.data();
    for (std::size_t t = 0; t < x.len; ++t, xr += C, g += C)
      for (std::size_t c = 0; c < C; ++c) {
        pa[c] += g[c];
        pb[c] += g[c] * ((xr[c] - mu[c]) * is[c]);
      }
    for (std::size_t c = 0; c < C; ++c) {
      sum_dy[c] += static_cast<double>(a[c]);
      sum_dy_xhat[c] += static_cast<double>(b[c]);
    }
  }
  std::vector<T> k(C), mdy(C), mdx(C);
  for (std::size_t c = 0; c < C; ++c) {
    dgamma[c] += static_cast<T>(sum_dy_xhat[c]);
    dbeta[c] += static_cast<T>(sum_dy[c]);
    k[c] = bn.gamma[c] * is[c];
    mdy[c] = static_cast<T>(sum_dy[c] / count);
    mdx[c] = static_cast<T>(sum_dy_xhat[c] / count);
  }
  for (std::size_t s = 0; s < x.n; ++s) {
    const T* xr = x.sample(s);
    const T* g = dy.sample(s);
    T* o = dx.sample(s);
    for (std::size_t t = 0; t < x.len; ++t, xr += C, g += C, o += C)
      for (std::size_t c = 0; c < C; ++c) o[c] = k[c] * (g[c] - mdy[c] - (xr[c] - mu[c]) * is[c] * mdx[c]);
  }
}

/// N x C x T convenience forms.
template <class T>
Tensor<T> batchnorm1d(const Tensor<T>& x, BatchNormState<T>& bn, Mode mode, double momentum, double eps,
                      BatchNormCache<T>* cache = nullptr) {
  Sequence<T> xs, ys;
  to_sequence(x, 0, xs);
  batchnorm_forward(xs, bn, mode, momentum, eps, ys, cache);
  return from_sequence(ys);
}

template <class T>
Tensor<T> batchnorm1d_backward(const Tensor<T>& x, const Tensor<T>& dy, const BatchNormState<T>& bn,
                               const BatchNormCache<T>& cache, std::type_identity_t<std::span<T>> dgamma,
                               std::type_identity_t<std::span<T>> dbeta) {
  expect_shape(dy, x.shape, "batchnorm_backward");
  Sequence<T> xs, dys, dxs;
  to_sequence(x, 0, xs);
  to_sequence(dy, 0, dys);
  batchnorm_backward(xs, dys, bn, cache, dxs, dgamma, dbeta);
  return from_sequence(dxs);
}

// ---------------------------------------------------------------------------
// relu; subgradient at 0 is 0.

template <class T>
void relu_inplace(std::span<T> x) {
  for (T& v : x) v = v > T{0} ? v : T{0};
}

template <class T>
Tensor<T> relu(Tensor<T> x) {
  relu_inplace(x.span());
  return x;
}

/// Masks dy by (activation > 0); works with either the pre- or post-activation.
template <class T>
void relu_backward_inplace(std::span<T> dy, std::type_identity_t<std::span<const T>> activation) {
  if (dy.size() != activation.size()) throw ConfigError("relu_backward: size mismatch");
  for (std::size_t i = 0; i < dy.size(); ++i)
    if (!(activation[i] > T{0})) dy[i] = T{0};
}

// ---------------------------------------------------------------------------
// global average pooling over time: N x C x T -> N x C.

template <class T>
void global_avg_pool(const Sequence<T>& x, Tensor<T>& z) {
  if (x.len < 1) throw ConfigError("global_avg_pool: sequence length must be >= 1");
  const std::size_t C = x.channels;
  z.shape = {x.n, C};
  z.data.assign(x.n * C, T{});
  const T inv = T{1} / static_cast<T>(x.len);
  for (std::size_t s = 0; s < x.n; ++s) {
    T* acc = z.ptr() + s * C;
    const T* r = x.sample(s);
    for (std::size_t t = 0; t < x.len; ++t, r += C)
      for (std::size_t c = 0; c < C; ++c) acc[c] += r[c];
    for (std::size_t c = 0; c < C; ++c) acc[c] *= inv;
  }
}

template <class T>
void global_avg_pool_backward(const Tensor<T>& dz, std::size_t len, std::size_t halo, Sequence<T>& dx) {
  if (dz.shape.size() != 2) throw ConfigError("global_avg_pool_backward: expected N x C gradient");
  const std::size_t C = dz.dim(1);
  dx.reshape(dz.dim(0), len, C, halo);
  const T inv = T{1} / static_cast<T>(len);
  for (std::size_t s = 0; s < dx.n; ++s) {
    T* o = dx.sample(s);
    const T* g = dz.ptr() + s * C;
    for (std::size_t t = 0; t < len; ++t, o += C)
      for (std::size_t c = 0; c < C; ++c) o[c] = g[c] * inv;
  }
}

template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.shape.size() != 3 || x.dim(2) < 1) throw ConfigError("global_avg_pool: expected N x C x T with T >= 1");
  Tensor<T> z;
  global_avg_pool(to_sequence(x, 0), z);
  return z;
}

template <class T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& dz, std::size_t len) {
  Sequence<T> dx;
  global_avg_pool_backward(dz, len, 0, dx);
  return from_sequence(dx);
}

// ---------------------------------------------------------------------------
// inverted dropout: kept units scale by 1/(1-p); eval mode is the identity.

template <class T, class Rng>
void dropout_inplace(std::span<T> x, double p, Mode mode, Rng& rng, std::vector<T>& mask) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: p must lie in [0, 1)");
  mask.assign(x.size(), T{1});
  if (mode == Mode::Eval || p == 0.0) return;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = u(rng) < p ? T{0} : keep_scale;
    x[i] *= mask[i];
  }
}

template <class T>
void dropout_backward_inplace(std::span<T> dy, std::type_identity_t<std::span<const T>> mask) {
  for (std::size_t i = 0; i < dy.size(); ++i) dy[i] *= mask[i];
}

// ---------------------------------------------------------------------------
// linear: y = z W^T + b with W stored out x in.

template <class T>
void linear_forward(const Tensor<T>& z, const Tensor<T>& w, std::type_identity_t<std::span<const T>> b, Tensor<T>& y) {
  if (z.shape.size() != 2 || w.shape.size() != 2 || z.dim(1) != w.dim(1) || b.size() != w.dim(0))
    throw ConfigError("linear: shape mismatch");
  const std::size_t n = z.dim(0), in = w.dim(1), out = w.dim(0);
  y.shape = {n, out};
  y.data.resize(n * out);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < out; ++o) {
      T acc = b[o];
      for (std::size_t i = 0; i < in; ++i) acc += w.data[o * in + i] * z.data[s * in + i];
      y.data[s * out + o] = acc;
    }
}

template <class T>
Tensor<T> linear(const Tensor<T>& z, const Tensor<T>& w, std::type_identity_t<std::span<const T>> b) {
  Tensor<T> y;
  linear_forward(z, w, b, y);
  return y;
}

/// Writes dz; accumulates dw and db.
template <class T>
void linear_backward(const Tensor<T>& z, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>& dz,
                     std::type_identity_t<std::span<T>> dw, std::type_identity_t<std::span<T>> db) {
  const std::size_t n = z.dim(0), in = w.dim(1), out = w.dim(0);
  expect_shape(dy, {n, out}, "linear_backward dy");
  dz.shape = z.shape;
  dz.data.assign(z.size(), T{});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < out; ++o) {
      const T g = dy.data[s * out + o];
      db[o] += g;
      for (std::size_t i = 0; i < in; ++i) {
        dw[o * in + i] += g * z.data[s * in + i];
        dz.data[s * in + i] += g * w.data[o * in + i];
      }
    }
}

// ---------------------------------------------------------------------------
// softmax with max subtraction.

template <class T>
std::vector<T> softmax(std::span<const T> logits) {
  if (logits.empty()) return {};
  check_finite(logits, "softmax");
  const T mx = *std::max_element(logits.begin(), logits.end());
  std::vector<T> p(logits.size());
  T sum{};
  for (std::size_t i = 0; i < logits.size(); ++i) sum += p[i] = std::exp(logits[i] - mx);
  for (T& v : p) v /= sum;
  return p;
}

}  // namespace faultlab::nn
