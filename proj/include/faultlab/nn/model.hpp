#pragma once
// FaultCNN1D: two conv/BN/ReLU blocks, global average pooling, dropout and a
// linear head.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "faultlab/nn/layers.hpp"
#include "faultlab/nn/tensor.hpp"

namespace faultlab::nn {

struct Architecture {
  std::size_t in_channels = 8;
  std::size_t c1 = 32;
  std::size_t k1 = 7;
  std::size_t c2 = 16;
  std::size_t k2 = 5;
  std::size_t classes = 5;
  std::size_t frame_len = 1000;
  double dropout = 0.25;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  bool operator==(const Architecture&) const = default;
};

/// Parameter accounting. Each conv block counts its kernel plus the BN affine
/// pair (the convolutions carry no bias); with_bn_scalars adds four scalars per
/// BN channel, and bytes_fp32 sizes that total at four bytes each.
struct ParameterCount {
  std::size_t conv1;
  std::size_t conv2;
  std::size_t fc;
  std::size_t learnable;
  std::size_t with_bn_scalars;
  std::size_t bytes_fp32;
};

inline ParameterCount parameter_count(const Architecture& a) {
  ParameterCount p{};
  p.conv1 = a.in_channels * a.c1 * a.k1 + 2 * a.c1;
  p.conv2 = a.c1 * a.c2 * a.k2 + 2 * a.c2;
  p.fc = a.c2 * a.classes + a.classes;
  p.learnable = p.conv1 + p.conv2 + p.fc;
  p.with_bn_scalars = p.learnable + 4 * (a.c1 + a.c2);
  p.bytes_fp32 = 4 * p.with_bn_scalars;
  return p;
}

template <class T>
struct Parameters {
  Tensor<T> conv1_w;  // c1 x in x k1
  BatchNormState<T> bn1;
  Tensor<T> conv2_w;  // c2 x c1 x k2
  BatchNormState<T> bn2;
  Tensor<T> fc_w;  // classes x c2
  std::vector<T> fc_b;

  explicit Parameters(const Architecture& a = {})
      : conv1_w({a.c1, a.in_channels, a.k1}),
        bn1(a.c1),
        conv2_w({a.c2, a.c1, a.k2}),
        bn2(a.c2),
        fc_w({a.classes, a.c2}),
        fc_b(a.classes, T{0}) {}

  /// Learnable tensors in the fixed optimizer/checkpoint order.
  std::vector<std::span<T>> learnable() {
    return {conv1_w.span(), bn1.gamma, bn1.beta, conv2_w.span(), bn2.gamma, bn2.beta, fc_w.span(), fc_b};
  }
  std::vector<std::span<const T>> learnable() const {
    return {conv1_w.span(), bn1.gamma, bn1.beta, conv2_w.span(), bn2.gamma, bn2.beta, fc_w.span(), fc_b};
  }
};

template <class T>
class FaultCnn1d {
 public:
  using Scalar = T;

  explicit FaultCnn1d(Architecture arch = {}, std::uint64_t seed = 0) : arch_(arch), params_(arch), grads_(arch) {
    initialize(seed);
  }

  /// Uniform(+-1/sqrt(fan_in)) weights, zero biases, unit BN scale.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto fill = [&](std::span<T> w, std::size_t fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (T& v : w) v = static_cast<T>(u(rng));
    };
    fill(params_.conv1_w.span(), arch_.in_channels * arch_.k1);
    fill(params_.conv2_w.span(), arch_.c1 * arch_.k2);
    fill(params_.fc_w.span(), arch_.c2);
    std::fill(params_.fc_b.begin(), params_.fc_b.end(), T{0});
    params_.bn1 = BatchNormState<T>(arch_.c1);
    params_.bn2 = BatchNormState<T>(arch_.c2);
  }

  const Architecture& architecture() const { return arch_; }
  Parameters<T>& params() { return params_; }
  const Parameters<T>& params() const { return params_; }
  Parameters<T>& grads() { return grads_; }

  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }

  /// Batch forward, N x in_channels x T -> N x classes. In train mode the
  /// activations needed by backward() are retained.
  template <class Rng>
  const Tensor<T>& forward(const Tensor<T>& x, Rng& rng) {
    if (x.shape.size() != 3 || x.dim(1) != arch_.in_channels)
      throw ConfigError("FaultCnn1d: input shape " + shape_string(x.shape) + " is not N x " +
                        std::to_string(arch_.in_channels) + " x T");
    to_sequence(x, halo(), x_);
    return forward_sequence(rng);
  }

  /// Eval-style forward that needs no RNG (dropout is the identity outside training).
  const Tensor<T>& forward(const Tensor<T>& x) {
    if (mode_ == Mode::Train) throw ConfigError("FaultCnn1d: train-mode forward requires an RNG");
    std::mt19937_64 unused(0);
    return forward(x, unused);
  }

  /// Forward on a batch of channels-first frames stored back to back
  /// ([frame][channel][time]), gathering rows `index` of `frames`.
  template <class U, class Rng>
  const Tensor<T>& forward_frames(std::span<const U> frames, std::span<const std::size_t> index, Rng& rng) {
    const std::size_t C = arch_.in_channels, len = arch_.frame_len, stride = C * len;
    x_.reshape(index.size(), len, C, halo());
    for (std::size_t s = 0; s < index.size(); ++s) {
      if ((index[s] + 1) * stride > frames.size()) throw ConfigError("FaultCnn1d: frame index out of range");
      const U* src = frames.data() + index[s] * stride;
      T* dst = x_.sample(s);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < len; ++t) dst[t * C + c] = static_cast<T>(src[c * len + t]);
    }
    return forward_sequence(rng);
  }

  /// Gradients of sum(dlogits * logits) with respect to every learnable tensor,
  /// written (not accumulated) into grads().
  void backward(const Tensor<T>& dlogits) {
    if (mode_ != Mode::Train || !have_forward_) throw ConfigError("FaultCnn1d: backward requires a train-mode forward");
    expect_shape(dlogits, logits_.shape, "FaultCnn1d backward");
    for (auto g : grads_.learnable()) std::fill(g.begin(), g.end(), T{0});

    linear_backward(dropped_, params_.fc_w, dlogits, d_pooled_, grads_.fc_w.span(), std::span<T>(grads_.fc_b));
    dropout_backward_inplace(d_pooled_.span(), std::span<const T>(dropout_mask_));
    global_avg_pool_backward(d_pooled_, a2_.len, halo(), d_a2_);
    relu_backward_inplace(std::span<T>(d_a2_.data), std::span<const T>(a2_.data));
    batchnorm_backward(z2_, d_a2_, params_.bn2, bn2_cache_, d_z2_, std::span<T>(grads_.bn2.gamma),
                       std::span<T>(grads_.bn2.beta));
    dtaps2_.setZero();
    conv1d_backward(a1_, conv2_, d_z2_, &d_a1_, dtaps2_);
    unpack_conv_grad(dtaps2_, conv2_, grads_.conv2_w.span());
    relu_backward_inplace(std::span<T>(d_a1_.data), std::span<const T>(a1_.data));
    batchnorm_backward(z1_, d_a1_, params_.bn1, bn1_cache_, d_z1_, std::span<T>(grads_.bn1.gamma),
                       std::span<T>(grads_.bn1.beta));
    dtaps1_.setZero();
    conv1d_backward(x_, conv1_, d_z1_, static_cast<Sequence<T>*>(nullptr), dtaps1_);
    unpack_conv_grad(dtaps1_, conv1_, grads_.conv1_w.span());
    for (auto g : grads_.learnable()) check_finite(std::span<const T>(g), "FaultCnn1d backward");
  }

  /// Block outputs (channels-first) and the pooled vector of the last forward.
  Tensor<T> block1_output() const { return from_sequence(a1_); }
  Tensor<T> block2_output() const { return from_sequence(a2_); }
  const Tensor<T>& pooled() const { return pooled_; }

 private:
  std::size_t halo() const { return std::max((arch_.k1 - 1) / 2, (arch_.k2 - 1) / 2); }

  template <class Rng>
  const Tensor<T>& forward_sequence(Rng& rng) {
    const bool train = mode_ == Mode::Train;
    const std::size_t h = halo();
    pack_conv(params_.conv1_w, conv1_);
    pack_conv(params_.conv2_w, conv2_);
    conv1d_forward(x_, conv1_, h, z1_);
    batchnorm_forward(z1_, params_.bn1, mode_, arch_.bn_momentum, arch_.bn_eps, a1_, train ? &bn1_cache_ : nullptr,
                      true);
    conv1d_forward(a1_, conv2_, h, z2_);
    batchnorm_forward(z2_, params_.bn2, mode_, arch_.bn_momentum, arch_.bn_eps, a2_, train ? &bn2_cache_ : nullptr,
                      true);
    global_avg_pool(a2_, pooled_);
    dropped_ = pooled_;
    dropout_inplace(dropped_.span(), arch_.dropout, mode_, rng, dropout_mask_);
    linear_forward(dropped_, params_.fc_w, std::span<const T>(params_.fc_b), logits_);
    check_finite(logits_.span(), "FaultCnn1d forward");
    have_forward_ = train;
    return logits_;
  }

  Architecture arch_;
  Parameters<T> params_;
  Parameters<T> grads_;
  Mode mode_ = Mode::Train;
  bool have_forward_ = false;

  ConvWeights<T> conv1_, conv2_;
  RowMatrix<T> dtaps1_, dtaps2_;
  Sequence<T> x_, z1_, a1_, z2_, a2_;
  Sequence<T> d_a2_, d_z2_, d_a1_, d_z1_;
  Tensor<T> pooled_, dropped_, logits_, d_pooled_;
  BatchNormCache<T> bn1_cache_, bn2_cache_;
  std::vector<T> dropout_mask_;
};

}  // namespace faultlab::nn
