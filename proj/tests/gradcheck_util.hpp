#pragma once
// Central-difference gradient checks for every layer kernel and the whole
// model, in double precision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "faultlab/nn/layers.hpp"
#include "faultlab/nn/model.hpp"
#include "faultlab/train.hpp"

namespace faultlab::gradcheck {

using TensorD = nn::Tensor<double>;

struct Probe {
  std::span<double> value;
  std::vector<double> grad;  // analytic gradient at the base point
};

struct Result {
  std::string name;
  std::size_t trials = 0;
  double max_rel_error = 0.0;
};

inline constexpr double kStep = 1e-5;
inline constexpr double kTolerance = 1e-4;

/// |a - n| / max(|a|, |n|), with the denominator floored at 1e-7 so that
/// vanishing gradients are compared absolutely.
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-7});
}

/// Perturbs `trials` random coordinates drawn across the probes.
inline Result check(std::string name, std::vector<Probe>& probes, const std::function<double()>& loss,
                    std::size_t trials, std::mt19937_64& rng, double h = kStep) {
  Result r{std::move(name), 0, 0.0};
  std::size_t total = 0;
  for (const auto& p : probes) total += p.value.size();
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  for (std::size_t t = 0; t < trials; ++t) {
    std::size_t k = pick(rng), which = 0;
    while (k >= probes[which].value.size()) k -= probes[which++].value.size();
    double& v = probes[which].value[k];
    const double saved = v;
    v = saved + h;
    const double up = loss();
    v = saved - h;
    const double down = loss();
    v = saved;
    r.max_rel_error = std::max(r.max_rel_error, relative_error(probes[which].grad[k], (up - down) / (2.0 * h)));
    ++r.trials;
  }
  return r;
}

inline TensorD random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double scale = 1.0) {
  TensorD t(std::move(shape));
  std::normal_distribution<double> g(0.0, scale);
  for (double& v : t.data) v = g(rng);
  return t;
}

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::vector<double> v(n);
  std::normal_distribution<double> g(0.0, scale);
  for (double& x : v) x = g(rng);
  return v;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Result conv1d(std::size_t trials, std::mt19937_64& rng) {
  auto x = random_tensor({2, 3, 12}, rng), w = random_tensor({4, 3, 5}, rng, 0.5);
  auto b = random_vector(4, rng);
  const auto r = random_tensor({2, 4, 12}, rng);
  const auto loss = [&] { return dot(nn::conv1d(x, w, std::span<const double>(b), 2).span(), r.span()); };
  TensorD dx;
  std::vector<double> dw(w.size()), db(4);
  nn::conv1d_backward(x, w, 2, r, &dx, std::span<double>(dw), std::span<double>(db));
  std::vector<Probe> probes{{x.span(), dx.data}, {w.span(), dw}, {b, db}};
  return check("conv1d", probes, loss, trials, rng);
}

inline Result batchnorm(std::size_t trials, std::mt19937_64& rng) {
  auto x = random_tensor({3, 4, 10}, rng, 2.0);
  nn::BatchNormState<double> bn(4);
  bn.gamma = random_vector(4, rng);
  bn.beta = random_vector(4, rng);
  const auto r = random_tensor({3, 4, 10}, rng);
  const auto loss = [&] { return dot(nn::batchnorm1d(x, bn, nn::Mode::Train, 0.1, 1e-5).span(), r.span()); };
  nn::BatchNormCache<double> cache;
  nn::batchnorm1d(x, bn, nn::Mode::Train, 0.1, 1e-5, &cache);
  std::vector<double> dg(4), dbeta(4);
  const auto dx = nn::batchnorm1d_backward(x, r, bn, cache, std::span<double>(dg), std::span<double>(dbeta));
  std::vector<Probe> probes{{x.span(), dx.data}, {bn.gamma, dg}, {bn.beta, dbeta}};
  return check("batchnorm1d", probes, loss, trials, rng);
}

inline Result relu(std::size_t trials, std::mt19937_64& rng) {
  auto x = random_tensor({2, 3, 20}, rng);
  for (double& v : x.data)
    if (std::abs(v) < 0.01) v = v < 0.0 ? -0.5 : 0.5;  // keep probes away from the kink
  const auto r = random_tensor(x.shape, rng);
  const auto loss = [&] { return dot(nn::relu(x).span(), r.span()); };
  std::vector<double> dx = r.data;
  nn::relu_backward_inplace(std::span<double>(dx), x.span());
  std::vector<Probe> probes{{x.span(), dx}};
  return check("relu", probes, loss, trials, rng);
}

inline Result global_avg_pool(std::size_t trials, std::mt19937_64& rng) {
  auto x = random_tensor({3, 5, 16}, rng);
  const auto r = random_tensor({3, 5}, rng);
  const auto loss = [&] { return dot(nn::global_avg_pool(x).span(), r.span()); };
  std::vector<Probe> probes{{x.span(), nn::global_avg_pool_backward(r, 16).data}};
  return check("global_avg_pool", probes, loss, trials, rng);
}

inline Result dropout(std::size_t trials, std::mt19937_64& rng) {
  auto x = random_vector(64, rng);
  const auto r = random_vector(64, rng);
  const std::uint64_t mask_seed = rng();
  std::vector<double> mask;
  const auto loss = [&] {
    std::mt19937_64 mrng(mask_seed);
    std::vector<double> y = x;
    nn::dropout_inplace(std::span<double>(y), 0.25, nn::Mode::Train, mrng, mask);
    return dot(y, r);
  };
  loss();
  std::vector<double> dx = r;
  nn::dropout_backward_inplace(std::span<double>(dx), std::span<const double>(mask));
  std::vector<Probe> probes{{x, dx}};
  return check("dropout", probes, loss, trials, rng);
}

inline Result linear(std::size_t trials, std::mt19937_64& rng) {
  auto z = random_tensor({4, 16}, rng), w = random_tensor({5, 16}, rng);
  auto b = random_vector(5, rng);
  const auto r = random_tensor({4, 5}, rng);
  const auto loss = [&] { return dot(nn::linear(z, w, std::span<const double>(b)).span(), r.span()); };
  TensorD dz;
  std::vector<double> dw(w.size()), db(5);
  nn::linear_backward(z, w, r, dz, std::span<double>(dw), std::span<double>(db));
  std::vector<Probe> probes{{z.span(), dz.data}, {w.span(), dw}, {b, db}};
  return check("linear", probes, loss, trials, rng);
}

inline Result softmax_cross_entropy(std::size_t trials, std::mt19937_64& rng) {
  auto logits = random_tensor({6, 5}, rng, 2.0);
  std::vector<int> labels(6);
  for (auto& y : labels) y = static_cast<int>(rng() % 5);
  const auto loss = [&] { return faultlab::softmax_cross_entropy(logits, std::span<const int>(labels), 0.05, nullptr); };
  TensorD d;
  faultlab::softmax_cross_entropy(logits, std::span<const int>(labels), 0.05, &d);
  std::vector<Probe> probes{{logits.span(), d.data}};
  return check("softmax_cross_entropy", probes, loss, trials, rng);
}

/// Whole FaultCNN1D on 8 x 32 frames: label-smoothed CE through dropout
/// (fixed mask), both BN/ReLU blocks and both convolutions.
inline Result whole_model(std::size_t trials, std::mt19937_64& rng) {
  nn::Architecture arch;
  arch.frame_len = 32;
  nn::FaultCnn1d<double> model(arch, rng());
  for (auto* bn : {&model.params().bn1, &model.params().bn2}) {
    bn->gamma = random_vector(bn->channels(), rng, 0.5);
    for (double& g : bn->gamma) g += 1.0;
    bn->beta = random_vector(bn->channels(), rng, 0.1);
  }
  model.params().fc_b = random_vector(arch.classes, rng, 0.1);
  const auto x = random_tensor({4, arch.in_channels, arch.frame_len}, rng);
  const std::vector<int> labels{0, 1, 2, 4};
  const std::uint64_t dropout_seed = rng();
  TensorD dlogits;
  const auto forward_loss = [&](TensorD* d) {
    std::mt19937_64 drng(dropout_seed);
    const auto& logits = model.forward(x, drng);
    return faultlab::softmax_cross_entropy(logits, std::span<const int>(labels), 0.05, d);
  };
  forward_loss(&dlogits);
  model.backward(dlogits);
  auto params = model.params().learnable();
  auto grads = model.grads().learnable();
  std::vector<Probe> probes;
  for (std::size_t i = 0; i < params.size(); ++i) probes.push_back({params[i], {grads[i].begin(), grads[i].end()}});
  return check("FaultCNN1D", probes, [&] { return forward_loss(nullptr); }, trials, rng);
}

inline std::vector<Result> run_all(std::uint64_t seed, std::size_t trials) {
  std::mt19937_64 rng(seed);
  return {conv1d(trials, rng),  batchnorm(trials, rng), relu(trials, rng),
          global_avg_pool(trials, rng), dropout(trials, rng), linear(trials, rng),
          softmax_cross_entropy(trials, rng), whole_model(trials, rng)};
}

}  // namespace faultlab::gradcheck
