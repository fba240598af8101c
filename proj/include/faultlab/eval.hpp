#pragma once
// Post-training evaluation: confusion matrix and weighted F1, cross-speed
// accuracy grid, severity sweep, single-frame latency and a KNN baseline.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "faultlab/error.hpp"
#include "faultlab/faults.hpp"
#include "faultlab/framing.hpp"
#include "faultlab/nn/model.hpp"
#include "faultlab/synth.hpp"
#include "faultlab/train.hpp"

namespace faultlab {

// ---------------------------------------------------------------------------
// Spectra.

/// Single-sided amplitude spectrum: bin k holds the amplitude of the
/// component at k * fs / N (bin 0 is the mean).
inline std::vector<double> amplitude_spectrum(std::span<const double> x) {
  require(!x.empty(), "amplitude_spectrum: empty signal");
  Eigen::FFT<double> fft;
  std::vector<double> in(x.begin(), x.end());
  std::vector<std::complex<double>> out;
  fft.fwd(out, in);
  const std::size_t n = x.size();
  std::vector<double> amp(n / 2 + 1);
  for (std::size_t k = 0; k < amp.size(); ++k) {
    const double scale = (k == 0 || (n % 2 == 0 && k == n / 2)) ? 1.0 : 2.0;
    amp[k] = scale * std::abs(out[k]) / static_cast<double>(n);
  }
  return amp;
}

/// Amplitude of the bin nearest to `freq`.
inline double harmonic_amplitude(std::span<const double> x, double sample_rate, double freq) {
  const auto amp = amplitude_spectrum(x);
  const auto k = static_cast<std::size_t>(std::llround(freq * static_cast<double>(x.size()) / sample_rate));
  require(k < amp.size(), "harmonic_amplitude: frequency above Nyquist");
  return amp[k];
}

// ---------------------------------------------------------------------------
// Confusion matrix and F1.

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct ConfusionMatrix {
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> counts{};  // [true][predicted]

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& row : counts) n += std::accumulate(row.begin(), row.end(), std::size_t{0});
    return n;
  }

  /// Row-normalized recall matrix; empty rows stay zero.
  std::array<std::array<double, kNumClasses>, kNumClasses> normalized() const {
    std::array<std::array<double, kNumClasses>, kNumClasses> out{};
    for (int r = 0; r < kNumClasses; ++r) {
      const auto sum = std::accumulate(counts[r].begin(), counts[r].end(), std::size_t{0});
      if (sum == 0) continue;
      for (int c = 0; c < kNumClasses; ++c)
        out[r][c] = static_cast<double>(counts[r][c]) / static_cast<double>(sum);
    }
    return out;
  }
};

struct ClassificationReport {
  ConfusionMatrix confusion;
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  std::array<ClassMetrics, kNumClasses> per_class{};
};

/// F1_c = 2PR / (P + R), 0 when P + R = 0; weighted by support.
inline ClassificationReport confusion_and_f1(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw ConfigError("confusion_and_f1: length mismatch");
  if (labels.empty()) throw DataError("confusion_and_f1: empty input");
  ClassificationReport r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if (y < 0 || y >= kNumClasses || p < 0 || p >= kNumClasses)
      throw ConfigError("confusion_and_f1: class index out of range");
    ++r.confusion.counts[static_cast<std::size_t>(y)][static_cast<std::size_t>(p)];
  }
  const double n = static_cast<double>(labels.size());
  std::size_t trace = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    std::size_t tp = r.confusion.counts[c][c], row = 0, col = 0;
    for (int k = 0; k < kNumClasses; ++k) {
      row += r.confusion.counts[c][k];
      col += r.confusion.counts[k][c];
    }
    trace += tp;
    ClassMetrics& m = r.per_class[c];
    m.support = row;
    m.precision = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    m.recall = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    r.weighted_f1 += static_cast<double>(row) / n * m.f1;
  }
  r.accuracy = static_cast<double>(trace) / n;
  return r;
}

inline std::vector<int> label_indices(const FrameSet& frames) {
  std::vector<int> out;
  out.reserve(frames.size());
  for (FaultClass f : frames.labels) out.push_back(fault_index(f));
  return out;
}

// ---------------------------------------------------------------------------
// Cross-speed grid.

struct SpeedGrid {
  std::vector<double> speeds;                              // ascending
  std::vector<std::array<double, kNumClasses>> accuracy;   // NaN where a class has no frames
  std::vector<std::array<std::size_t, kNumClasses>> frames;
};

/// Per-(speed, class) accuracy from predictions of frames tagged with rpm.
inline SpeedGrid cross_speed_accuracy(std::span<const int> predictions, std::span<const int> labels,
                                      std::span<const float> rpms) {
  if (predictions.size() != labels.size() || labels.size() != rpms.size())
    throw ConfigError("cross_speed_accuracy: length mismatch");
  if (labels.empty()) throw DataError("cross_speed_accuracy: empty speed group");
  std::map<float, std::pair<std::array<std::size_t, kNumClasses>, std::array<std::size_t, kNumClasses>>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& [correct, total] = groups[rpms[i]];
    const auto y = static_cast<std::size_t>(labels[i]);
    if (y >= static_cast<std::size_t>(kNumClasses)) throw ConfigError("cross_speed_accuracy: class index out of range");
    ++total[y];
    correct[y] += predictions[i] == labels[i] ? 1 : 0;
  }
  SpeedGrid g;
  for (const auto& [rpm, ct] : groups) {
    const auto& [correct, total] = ct;
    std::array<double, kNumClasses> acc{};
    for (int c = 0; c < kNumClasses; ++c)
      acc[c] = total[c] ? static_cast<double>(correct[c]) / static_cast<double>(total[c])
                        : std::numeric_limits<double>::quiet_NaN();
    g.speeds.push_back(rpm);
    g.accuracy.push_back(acc);
    g.frames.push_back(total);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Severity sweep.

inline std::vector<double> severity_grid(std::size_t points = 20, double lo = 0.05, double hi = 1.0) {
  require(points >= 2 && lo > 0.0 && lo < hi && hi <= 1.0, "severity_grid: need >= 2 points in (0, 1]");
  std::vector<double> out(points);
  for (std::size_t i = 0; i < points; ++i)
    out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
  return out;
}

struct SeverityCurves {
  std::vector<double> severities;
  std::vector<std::array<double, kNumClasses>> detection;  // [severity][class]
};

struct SeveritySweepConfig {
  std::vector<double> severities = severity_grid();
  std::vector<double> speeds;  // test speeds
  SweepConfig synth;           // everything but speeds, faults, severities and seed
  std::uint64_t seed = 0x5e7e41;
  FramingConfig framing;
};

/// Detection accuracy per class when runs at each speed are synthesized at
/// severity sigma. Healthy runs do not depend on sigma and reuse one seed per
/// speed, so their curve is flat.
template <class T>
SeverityCurves severity_sweep(nn::FaultCnn1d<T>& model, const ChannelStats& stats, const SeveritySweepConfig& cfg,
                              const MotorParams& motor, unsigned threads = 1) {
  require(!cfg.severities.empty() && !cfg.speeds.empty(), "severity_sweep: severities and speeds must be nonempty");
  for (double s : cfg.severities) require(s > 0.0 && s <= 1.0, "severity_sweep: severities must lie in (0, 1]");
  SeverityCurves out;
  out.severities = cfg.severities;
  for (std::size_t vi = 0; vi < cfg.severities.size(); ++vi) {
    SweepConfig sc = cfg.synth;
    sc.speeds = cfg.speeds;
    sc.severity_mode = SeverityMode::Grid;
    sc.severities = {cfg.severities[vi]};
    std::array<double, kNumClasses> det{};
    for (FaultClass f : kAllFaults) {
      sc.faults = {f};
      sc.seed = mix_seed(cfg.seed ^ (f == FaultClass::None ? 0 : (vi + 1) << 32));
      FrameSet frames;
      generate_sweep(sc, motor, [&](SignalRun&& run) { frames.append_run(run, cfg.framing); }, threads);
      frames.standardize(stats, cfg.framing.eps);
      det[static_cast<std::size_t>(fault_index(f))] = evaluate_frames(model, frames).accuracy;
    }
    out.detection.push_back(det);
  }
  return out;
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, "spearman: need two equal-length samples of size >= 2");
  const auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n, my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// Latency.

struct LatencyStats {
  std::size_t trials = 0;
  double mean_us = 0.0;
  double p50_us = 0.0;
  double p99_us = 0.0;
  double throughput_fps = 0.0;        // trials / total timed wall time, single frame
  double batch_throughput_fps = 0.0;  // frames per second in batches of batch_size
  std::size_t batch_size = 0;
};

/// Times single-frame eval-mode forwards of `frame` (channels-first,
/// in_channels x frame_len) on the calling thread; warmup runs are excluded.
template <class T>
LatencyStats latency_benchmark(nn::FaultCnn1d<T>& model, std::span<const float> frame, std::size_t trials,
                               std::size_t warmup = 100, std::size_t batch_size = 256) {
  require(trials >= 1, "latency_benchmark: trials must be >= 1");
  const auto& arch = model.architecture();
  require(frame.size() == arch.in_channels * arch.frame_len, "latency_benchmark: frame size mismatch");
  model.set_mode(nn::Mode::Eval);
  std::mt19937_64 unused(0);
  const std::size_t zero = 0;
  const std::span<const std::size_t> one(&zero, 1);
  for (std::size_t i = 0; i < warmup; ++i) model.forward_frames(frame, one, unused);
  using clock = std::chrono::steady_clock;
  std::vector<double> us(trials);
  const auto start = clock::now();
  for (std::size_t i = 0; i < trials; ++i) {
    const auto a = clock::now();
    model.forward_frames(frame, one, unused);
    us[i] = std::chrono::duration<double, std::micro>(clock::now() - a).count();
  }
  const double total_s = std::chrono::duration<double>(clock::now() - start).count();
  LatencyStats s;
  s.trials = trials;
  s.mean_us = std::accumulate(us.begin(), us.end(), 0.0) / static_cast<double>(trials);
  std::vector<double> sorted = us;
  std::sort(sorted.begin(), sorted.end());
  const auto pct = [&](double q) {
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(trials))) - 1;
    return sorted[std::min(k, trials - 1)];
  };
  s.p50_us = pct(0.50);
  s.p99_us = pct(0.99);
  s.throughput_fps = static_cast<double>(trials) / total_s;

  if (batch_size > 0) {
    std::vector<std::size_t> same(batch_size, 0);
    model.forward_frames(frame, std::span<const std::size_t>(same), unused);
    const std::size_t reps = 4;
    const auto b0 = clock::now();
    for (std::size_t r = 0; r < reps; ++r) model.forward_frames(frame, std::span<const std::size_t>(same), unused);
    const double bs = std::chrono::duration<double>(clock::now() - b0).count();
    s.batch_size = batch_size;
    s.batch_throughput_fps = static_cast<double>(reps * batch_size) / bs;
  }
  return s;
}

// ---------------------------------------------------------------------------
// KNN baseline.

inline constexpr std::size_t kKnnFeatures = 3 * kFrameChannels;

/// Per channel: mean, population std and the largest non-DC amplitude-spectrum bin.
inline std::array<double, kKnnFeatures> knn_features(std::span<const float> frame8) {
  require(frame8.size() % kFrameChannels == 0, "knn_features: frame is not 8-channel");
  const std::size_t len = frame8.size() / kFrameChannels;
  std::array<double, kKnnFeatures> f{};
  std::vector<double> x(len);
  for (int c = 0; c < kFrameChannels; ++c) {
    for (std::size_t t = 0; t < len; ++t) x[t] = frame8[c * len + t];
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(len);
    double sq = 0.0;
    for (double v : x) sq += (v - mean) * (v - mean);
    const auto amp = amplitude_spectrum(x);
    const double peak = amp.size() > 1 ? *std::max_element(amp.begin() + 1, amp.end()) : 0.0;
    f[3 * c] = mean;
    f[3 * c + 1] = std::sqrt(sq / static_cast<double>(len));
    f[3 * c + 2] = peak;
  }
  return f;
}

using FeatureMatrix = std::vector<std::array<double, kKnnFeatures>>;

inline FeatureMatrix knn_features(const FrameSet& frames) {
  FeatureMatrix out(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) out[i] = knn_features(frames.frame(i));
  return out;
}

/// Majority vote over the k nearest (Euclidean) training points. Distance ties
/// order by training index; a vote tie goes to the tied class whose member is
/// nearest.
template <std::size_t D>
std::vector<int> knn_predict(const std::vector<std::array<double, D>>& train, std::span<const int> train_labels,
                             const std::vector<std::array<double, D>>& test, std::size_t k) {
  if (train.size() != train_labels.size()) throw ConfigError("knn: feature/label count mismatch");
  if (k == 0 || k > train.size()) throw ConfigError("knn: k must lie in [1, training set size]");
  std::vector<int> out;
  out.reserve(test.size());
  std::vector<std::pair<double, std::size_t>> dist(train.size());
  for (const auto& q : test) {
    for (std::size_t i = 0; i < train.size(); ++i) {
      double d = 0.0;
      for (std::size_t j = 0; j < D; ++j) {
        const double e = train[i][j] - q[j];
        d += e * e;
      }
      dist[i] = {d, i};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    std::array<std::size_t, kNumClasses> votes{};
    for (std::size_t r = 0; r < k; ++r) ++votes[static_cast<std::size_t>(train_labels[dist[r].second])];
    const std::size_t top = *std::max_element(votes.begin(), votes.end());
    int pick = -1;
    for (std::size_t r = 0; r < k && pick < 0; ++r) {
      const int c = train_labels[dist[r].second];
      if (votes[static_cast<std::size_t>(c)] == top) pick = c;
    }
    out.push_back(pick);
  }
  return out;
}

/// Feature z-scoring fitted on the training features.
template <std::size_t D>
void zscore_features(std::vector<std::array<double, D>>& train, std::vector<std::array<double, D>>& test) {
  require(!train.empty(), "zscore_features: empty training set");
  for (std::size_t j = 0; j < D; ++j) {
    double mean = 0.0;
    for (const auto& r : train) mean += r[j];
    mean /= static_cast<double>(train.size());
    double sq = 0.0;
    for (const auto& r : train) sq += (r[j] - mean) * (r[j] - mean);
    const double sd = std::sqrt(sq / static_cast<double>(train.size()));
    const double inv = sd > 0.0 ? 1.0 / sd : 0.0;
    for (auto& r : train) r[j] = (r[j] - mean) * inv;
    for (auto& r : test) r[j] = (r[j] - mean) * inv;
  }
}

/// KNN on the 24 frame features of standardized frames.
inline ClassificationReport knn_baseline(const FrameSet& train, const FrameSet& test, std::size_t k = 7) {
  auto ftrain = knn_features(train);
  auto ftest = knn_features(test);
  zscore_features(ftrain, ftest);
  const auto train_labels = label_indices(train);
  const auto pred = knn_predict(ftrain, std::span<const int>(train_labels), ftest, k);
  const auto test_labels = label_indices(test);
  return confusion_and_f1(std::span<const int>(pred), std::span<const int>(test_labels));
}

}  // namespace faultlab
