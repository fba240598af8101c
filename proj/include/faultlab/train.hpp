#pragma once
// Optimization loop: label-smoothed cross-entropy, AdamW, cosine schedule,
// global-norm clipping, stratified validation split and best-checkpoint
// retention.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "faultlab/error.hpp"
#include "faultlab/faults.hpp"
#include "faultlab/framing.hpp"
#include "faultlab/nn/model.hpp"
#include "faultlab/synth.hpp"

namespace faultlab {

struct TrainConfig {
  double lr0 = 1e-3;
  double lr_min = 1e-6;
  std::optional<std::size_t> t_max;  // defaults to max_iterations
  double weight_decay = 1e-4;
  double label_smoothing = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 256;
  std::size_t max_iterations = 10'000;
  std::size_t val_every = 500;
  double val_fraction = 0.2;
  double clip_norm = 1.0;
  std::uint64_t seed = 2026;

  std::size_t schedule_horizon() const { return t_max.value_or(max_iterations); }

  void validate() const {
    require(lr_min < lr0, "train: lr_min must be < lr0");
    require(lr_min >= 0.0, "train: lr_min must be >= 0");
    require(label_smoothing >= 0.0 && label_smoothing < 1.0, "train: label_smoothing must lie in [0, 1)");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "train: betas must lie in [0, 1)");
    require(adam_eps > 0.0, "train: adam_eps must be > 0");
    require(weight_decay >= 0.0, "train: weight_decay must be >= 0");
    require(batch_size >= 1, "train: batch_size must be >= 1");
    require(max_iterations >= 1, "train: max_iterations must be >= 1");
    require(val_every >= 1, "train: val_every must be >= 1");
    require(val_fraction > 0.0 && val_fraction < 1.0, "train: val_fraction must lie in (0, 1)");
    require(clip_norm > 0.0, "train: clip_norm must be > 0");
    require(schedule_horizon() >= 1, "train: t_max must be >= 1");
  }
};

/// L = -sum_c q_c log p_c, q_c = (1 - eps) [c == y] + eps / C, with p clamped at 1e-12.
inline double ce_label_smoothing(std::span<const double> probabilities, int true_class, double eps) {
  const int C = static_cast<int>(probabilities.size());
  if (true_class < 0 || true_class >= C) throw ConfigError("ce_label_smoothing: invalid class index");
  require(eps >= 0.0 && eps < 1.0, "ce_label_smoothing: eps must lie in [0, 1)");
  double loss = 0.0;
  for (int c = 0; c < C; ++c) {
    const double q = (c == true_class ? 1.0 - eps : 0.0) + eps / C;
    loss -= q * std::log(std::max(probabilities[static_cast<std::size_t>(c)], 1e-12));
  }
  return loss;
}

/// Mean label-smoothed loss over a batch of logits via log-softmax; writes
/// dlogits = (p - q) / N.
template <class T>
double softmax_cross_entropy(const nn::Tensor<T>& logits, std::span<const int> labels, double eps,
                             std::type_identity_t<nn::Tensor<T>*> dlogits) {
  const std::size_t n = logits.dim(0), C = logits.dim(1);
  if (labels.size() != n) throw ConfigError("softmax_cross_entropy: label count mismatch");
  if (dlogits) {
    dlogits->shape = logits.shape;
    dlogits->data.resize(logits.size());
  }
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const T* z = logits.ptr() + s * C;
    const int y = labels[s];
    if (y < 0 || static_cast<std::size_t>(y) >= C) throw ConfigError("softmax_cross_entropy: invalid class index");
    double mx = z[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(z[c]));
    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) sum += std::exp(z[c] - mx);
    const double log_sum = std::log(sum);
    for (std::size_t c = 0; c < C; ++c) {
      const double q = (static_cast<int>(c) == y ? 1.0 - eps : 0.0) + eps / static_cast<double>(C);
      const double log_p = z[c] - mx - log_sum;
      total -= q * log_p;
      if (dlogits) dlogits->data[s * C + c] = static_cast<T>((std::exp(log_p) - q) / static_cast<double>(n));
    }
  }
  return total / static_cast<double>(n);
}

/// eta_t = eta_min + (eta_0 - eta_min)(1 + cos(pi t / T_max)) / 2; t > T_max clamps to eta_min.
inline double cosine_lr(std::size_t t, double lr0, double lr_min, std::size_t t_max) {
  if (t >= t_max) return lr_min;
  const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(t_max);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(phase));
}

inline double cosine_lr(std::size_t t, const TrainConfig& cfg) {
  return cosine_lr(t, cfg.lr0, cfg.lr_min, cfg.schedule_horizon());
}

/// Scales every gradient by clip_norm / ||g|| when ||g|| > clip_norm. Returns the pre-clip norm.
template <class T>
double clip_global_norm(const std::vector<std::span<T>>& grads, double clip_norm) {
  require(clip_norm > 0.0, "clip_global_norm: clip_norm must be > 0");
  double sq = 0.0;
  for (const auto& g : grads)
    for (T v : g) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (norm > clip_norm) {
    const double scale = clip_norm / norm;
    for (const auto& g : grads)
      for (T& v : g) v = static_cast<T>(v * scale);
  }
  return norm;
}

template <class T>
struct OptimizerState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::size_t t = 0;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

inline AdamWConfig adamw_config(const TrainConfig& c) { return {c.beta1, c.beta2, c.adam_eps, c.weight_decay}; }

/// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * lambda * theta.
/// The step counter is incremented before bias correction; a non-finite
/// gradient aborts the step with the state untouched.
template <class T>
void adamw_step(const std::vector<std::span<T>>& params, const std::vector<std::span<const T>>& grads,
                OptimizerState<T>& state, double lr, const AdamWConfig& cfg) {
  if (params.size() != grads.size()) throw ConfigError("adamw_step: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].size() != grads[i].size()) throw ConfigError("adamw_step: parameter/gradient shape mismatch");
  for (const auto& g : grads) nn::check_finite(g, "adamw_step gradient");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), T{0});
      state.v.emplace_back(p.size(), T{0});
    }
  }
  if (state.m.size() != params.size()) throw ConfigError("adamw_step: optimizer state does not match parameters");
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < params[i].size(); ++k) {
      const double g = grads[i][k];
      const double mk = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
      const double vk = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double theta = params[i][k];
      const double m_hat = mk / bc1, v_hat = vk / bc2;
      params[i][k] = static_cast<T>(theta - lr * m_hat / (std::sqrt(v_hat) + cfg.eps) - lr * cfg.weight_decay * theta);
    }
  }
}

/// Per-class shuffled split; each class contributes round(val_fraction * n_c) validation frames.
struct TrainValSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

inline TrainValSplit stratified_split(std::span<const FaultClass> labels, double val_fraction, std::uint64_t seed) {
  require(val_fraction > 0.0 && val_fraction < 1.0, "stratified_split: val_fraction must lie in (0, 1)");
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(fault_index(labels[i]))].push_back(i);
  std::mt19937_64 rng(mix_seed(seed ^ 0x5b1ed));
  TrainValSplit split;
  for (auto& idx : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(idx.size())));
    split.val.insert(split.val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    split.train.insert(split.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  if (split.train.empty() || split.val.empty()) throw DataError("stratified_split: empty train or validation split");
  return split;
}

struct CurvePoint {
  std::size_t iteration = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // mean over iterations since the previous point
  double train_acc = 0.0;   // running mini-batch accuracy over the same window
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainReport {
  std::vector<CurvePoint> curves;
  std::size_t best_iteration = 0;
  double best_val_acc = 0.0;
  double final_val_acc = 0.0;
  double final_train_acc = 0.0;  // eval-mode accuracy on the train split before restore
  double best_train_acc = 0.0;   // eval-mode accuracy on the train split after restore
  double generalization_gap = 0.0;  // |best_train_acc - best_val_acc|
  std::size_t train_frames = 0;
  std::size_t val_frames = 0;
  double wall_seconds = 0.0;
};

struct EvalResult {
  std::vector<int> predictions;
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Eval-mode predictions for frames[index] in fixed-size batches.
template <class T>
EvalResult evaluate_frames(nn::FaultCnn1d<T>& model, const FrameSet& frames, std::span<const std::size_t> index,
                           double label_smoothing = 0.0, std::size_t batch = 256) {
  const nn::Mode saved = model.mode();
  model.set_mode(nn::Mode::Eval);
  EvalResult r;
  r.predictions.reserve(index.size());
  std::mt19937_64 unused(0);
  std::size_t correct = 0;
  double loss_sum = 0.0;
  std::vector<int> labels;
  for (std::size_t start = 0; start < index.size(); start += batch) {
    const auto chunk = index.subspan(start, std::min(batch, index.size() - start));
    const auto& logits = model.forward_frames(std::span<const float>(frames.values), chunk, unused);
    labels.clear();
    for (std::size_t i : chunk) labels.push_back(fault_index(frames.labels[i]));
    loss_sum += softmax_cross_entropy(logits, std::span<const int>(labels), label_smoothing, nullptr) *
                static_cast<double>(chunk.size());
    const std::size_t C = logits.dim(1);
    for (std::size_t s = 0; s < chunk.size(); ++s) {
      const T* z = logits.ptr() + s * C;
      const int pred = static_cast<int>(std::max_element(z, z + C) - z);
      r.predictions.push_back(pred);
      correct += pred == labels[s] ? 1 : 0;
    }
  }
  model.set_mode(saved);
  if (!index.empty()) {
    r.loss = loss_sum / static_cast<double>(index.size());
    r.accuracy = static_cast<double>(correct) / static_cast<double>(index.size());
  }
  return r;
}

template <class T>
EvalResult evaluate_frames(nn::FaultCnn1d<T>& model, const FrameSet& frames, double label_smoothing = 0.0) {
  std::vector<std::size_t> all(frames.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return evaluate_frames(model, frames, std::span<const std::size_t>(all), label_smoothing);
}

using ProgressFn = std::function<void(const CurvePoint&)>;

/// Trains on standardized frames with a stratified train/validation split.
/// On return the model holds the parameters with the best validation accuracy,
/// ties broken by lower validation loss.
template <class T>
TrainReport train(const FrameSet& frames, nn::FaultCnn1d<T>& model, const TrainConfig& cfg,
                  const ProgressFn& progress = {}) {
  cfg.validate();
  if (frames.size() == 0) throw DataError("train: no frames");
  if (frames.frame_len != model.architecture().frame_len)
    throw ConfigError("train: frame length does not match the architecture");
  const auto t0 = std::chrono::steady_clock::now();
  const TrainValSplit split = stratified_split(std::span<const FaultClass>(frames.labels), cfg.val_fraction, cfg.seed);

  TrainReport report;
  report.train_frames = split.train.size();
  report.val_frames = split.val.size();

  std::mt19937_64 shuffle_rng(mix_seed(cfg.seed ^ 0x5f1eULL));
  std::mt19937_64 dropout_rng(mix_seed(cfg.seed ^ 0xd0d0ULL));
  std::vector<std::size_t> order = split.train;
  std::size_t cursor = order.size();

  OptimizerState<T> opt;
  const AdamWConfig adam = adamw_config(cfg);
  nn::Parameters<T> best = model.params();
  report.best_val_acc = -1.0;
  double best_val_loss = std::numeric_limits<double>::infinity();

  nn::Tensor<T> dlogits;
  std::vector<std::size_t> batch;
  std::vector<int> labels;
  double window_loss = 0.0;
  std::size_t window_iters = 0, window_correct = 0, window_seen = 0;

  model.set_mode(nn::Mode::Train);
  for (std::size_t it = 1; it <= cfg.max_iterations; ++it) {
    batch.clear();
    while (batch.size() < cfg.batch_size) {
      if (cursor == order.size()) {
        if (!batch.empty()) break;  // keep the short tail batch
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    labels.clear();
    for (std::size_t i : batch) labels.push_back(fault_index(frames.labels[i]));

    const auto& logits = model.forward_frames(std::span<const float>(frames.values), std::span<const std::size_t>(batch),
                                              dropout_rng);
    const double loss =
        softmax_cross_entropy(logits, std::span<const int>(labels), cfg.label_smoothing, &dlogits);
    if (!std::isfinite(loss)) throw NumericalError("train: loss diverged at iteration " + std::to_string(it));
    const std::size_t C = logits.dim(1);
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const T* z = logits.ptr() + s * C;
      window_correct += static_cast<int>(std::max_element(z, z + C) - z) == labels[s] ? 1 : 0;
    }
    window_seen += batch.size();
    window_loss += loss;
    ++window_iters;

    model.backward(dlogits);
    auto grads = model.grads().learnable();
    clip_global_norm(grads, cfg.clip_norm);
    const double lr = cosine_lr(it - 1, cfg);
    std::vector<std::span<const T>> cgrads(grads.begin(), grads.end());
    adamw_step(model.params().learnable(), cgrads, opt, lr, adam);

    if (it % cfg.val_every == 0 || it == cfg.max_iterations) {
      const EvalResult val =
          evaluate_frames(model, frames, std::span<const std::size_t>(split.val), cfg.label_smoothing);
      CurvePoint pt{it,
                    lr,
                    window_loss / static_cast<double>(window_iters),
                    static_cast<double>(window_correct) / static_cast<double>(window_seen),
                    val.loss,
                    val.accuracy};
      report.curves.push_back(pt);
      if (val.accuracy > report.best_val_acc || (val.accuracy == report.best_val_acc && val.loss < best_val_loss)) {
        report.best_val_acc = val.accuracy;
        best_val_loss = val.loss;
        report.best_iteration = it;
        best = model.params();
      }
      report.final_val_acc = val.accuracy;
      window_loss = 0.0;
      window_iters = window_correct = window_seen = 0;
      if (progress) progress(pt);
    }
  }

  report.final_train_acc =
      evaluate_frames(model, frames, std::span<const std::size_t>(split.train)).accuracy;
  model.params() = best;
  report.best_train_acc = evaluate_frames(model, frames, std::span<const std::size_t>(split.train)).accuracy;
  report.generalization_gap = std::abs(report.best_train_acc - report.best_val_acc);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace faultlab
