#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "faultlab/framing.hpp"
#include "faultlab/synth.hpp"
#include "faultlab/train.hpp"

namespace fl = faultlab;
namespace nn = faultlab::nn;

namespace {

// Three single-frame runs per class at distinct speeds, standardized.
fl::FrameSet tiny_frames() {
  fl::FrameSet set;
  int k = 0;
  for (fl::FaultClass f : fl::kAllFaults)
    for (double rpm : {900.0, 1500.0, 2100.0}) {
      fl::FaultScenario sc;
      sc.fault = f;
      sc.op.rpm = rpm;
      sc.n_samples = 1000;
      sc.seed = static_cast<std::uint64_t>(++k);
      set.append_run(fl::synthesize_run(sc, {}), {});
    }
  const auto stats = fl::fit_stats(std::span<const float>(set.values), set.frame_len);
  set.standardize(stats, 1e-8);
  return set;
}

struct ScalarAdamW {
  double m = 0.0, v = 0.0;
  int t = 0;
  double step(double theta, double g, double lr, double b1, double b2, double eps, double wd) {
    ++t;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    const double mh = m / (1.0 - std::pow(b1, t));
    const double vh = v / (1.0 - std::pow(b2, t));
    return theta - lr * mh / (std::sqrt(vh) + eps) - lr * wd * theta;
  }
};

}  // namespace

TEST(CrossEntropy, UniformPredictionIsLnC) {
  for (double eps : {0.0, 0.05, 0.5}) {
    const std::vector<double> p(5, 0.2);
    for (int y = 0; y < 5; ++y) EXPECT_NEAR(fl::ce_label_smoothing(p, y, eps), std::log(5.0), 1e-12);
    const nn::Tensor<double> logits({1, 5}, 0.0);
    const std::vector<int> label{2};
    EXPECT_NEAR(fl::softmax_cross_entropy(logits, std::span<const int>(label), eps, nullptr), std::log(5.0), 1e-12);
  }
}

TEST(CrossEntropy, SmoothedTargetWeights) {
  const nn::Tensor<double> logits({1, 5}, 0.0);
  const std::vector<int> label{0};
  nn::Tensor<double> d;
  fl::softmax_cross_entropy(logits, std::span<const int>(label), 0.05, &d);
  EXPECT_NEAR(d.data[0], 0.2 - 0.96, 1e-15);
  for (int c = 1; c < 5; ++c) EXPECT_NEAR(d.data[c], 0.2 - 0.01, 1e-15);
  EXPECT_NEAR(d.data[0], -0.76, 1e-15);
}

TEST(CrossEntropy, MatchesProbabilityFormAndClamps) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    nn::Tensor<double> logits({1, 5});
    for (double& v : logits.data) v = g(rng);
    const std::vector<int> y{static_cast<int>(rng() % 5)};
    const auto p = nn::softmax(std::span<const double>(logits.data));
    EXPECT_NEAR(fl::softmax_cross_entropy(logits, std::span<const int>(y), 0.05, nullptr),
                fl::ce_label_smoothing(p, y[0], 0.05), 1e-10);
  }
  const std::vector<double> one_hot{1.0, 0.0, 0.0, 0.0, 0.0};
  EXPECT_NEAR(fl::ce_label_smoothing(one_hot, 1, 0.0), -std::log(1e-12), 1e-9);
  EXPECT_TRUE(std::isfinite(fl::ce_label_smoothing(one_hot, 1, 0.05)));
  EXPECT_THROW(fl::ce_label_smoothing(one_hot, 5, 0.05), fl::ConfigError);
  EXPECT_THROW(fl::ce_label_smoothing(one_hot, 0, 1.0), fl::ConfigError);
}

TEST(CrossEntropy, BatchMeanAndGradientSumToZero) {
  nn::Tensor<double> logits({3, 5});
  std::mt19937_64 rng(2);
  for (double& v : logits.data) v = std::normal_distribution<double>()(rng);
  const std::vector<int> y{0, 3, 4};
  nn::Tensor<double> d;
  const double mean = fl::softmax_cross_entropy(logits, std::span<const int>(y), 0.05, &d);
  double sum = 0.0;
  for (std::size_t s = 0; s < 3; ++s) {
    nn::Tensor<double> row({1, 5}, std::vector<double>(logits.data.begin() + s * 5, logits.data.begin() + s * 5 + 5));
    const std::vector<int> ys{y[s]};
    sum += fl::softmax_cross_entropy(row, std::span<const int>(ys), 0.05, nullptr);
    double g = 0.0;
    for (std::size_t c = 0; c < 5; ++c) g += d.data[s * 5 + c];
    EXPECT_NEAR(g, 0.0, 1e-15);
  }
  EXPECT_NEAR(mean, sum / 3.0, 1e-14);
}

TEST(AdamW, PureDecayStep) {
  std::vector<double> theta{2.0, -3.0};
  const std::vector<double> zero{0.0, 0.0};
  fl::OptimizerState<double> st;
  fl::adamw_step<double>({std::span<double>(theta)}, {std::span<const double>(zero)}, st, 1e-3, {0.9, 0.999, 1e-8, 1e-4});
  EXPECT_NEAR(theta[0], 2.0 * (1.0 - 1e-7), 1e-15);
  EXPECT_NEAR(theta[1], -3.0 * (1.0 - 1e-7), 1e-15);
  EXPECT_EQ(st.t, 1u);
}

TEST(AdamW, FirstStepIsSignDescent) {
  for (double g0 : {1e-3, 0.5, -7.0, 123.0}) {
    std::vector<double> theta{1.0};
    const std::vector<double> g{g0};
    fl::OptimizerState<double> st;
    fl::adamw_step<double>({std::span<double>(theta)}, {std::span<const double>(g)}, st, 1e-3, {0.9, 0.999, 1e-8, 0.0});
    EXPECT_NEAR(theta[0], 1.0 - 1e-3 * (g0 > 0 ? 1.0 : -1.0), 1e-8);
  }
}

TEST(AdamW, MatchesScalarOracleOverTenSteps) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss;
  const fl::AdamWConfig cfg{0.9, 0.999, 1e-8, 1e-4};
  std::vector<double> theta(6);
  for (double& v : theta) v = gauss(rng);
  std::vector<double> expected = theta;
  std::vector<ScalarAdamW> oracle(6);
  fl::OptimizerState<double> st;
  for (int step = 0; step < 10; ++step) {
    std::vector<double> g(6);
    for (double& v : g) v = gauss(rng);
    const double lr = fl::cosine_lr(static_cast<std::size_t>(step), 1e-3, 1e-6, 10);
    fl::adamw_step<double>({std::span<double>(theta).subspan(0, 2), std::span<double>(theta).subspan(2)},
                           {std::span<const double>(g).subspan(0, 2), std::span<const double>(g).subspan(2)}, st, lr,
                           cfg);
    for (std::size_t i = 0; i < 6; ++i)
      expected[i] = oracle[i].step(expected[i], g[i], lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    for (std::size_t i = 0; i < 6; ++i) ASSERT_NEAR(theta[i], expected[i], 1e-12) << "step " << step;
  }
  EXPECT_EQ(st.t, 10u);
}

TEST(AdamW, NonFiniteGradientLeavesStateUntouched) {
  std::vector<double> theta{1.0, 2.0};
  const std::vector<double> good{0.1, 0.2}, bad{0.1, std::nan("")};
  fl::OptimizerState<double> st;
  const fl::AdamWConfig cfg;
  fl::adamw_step<double>({std::span<double>(theta)}, {std::span<const double>(good)}, st, 1e-3, cfg);
  const auto theta_before = theta;
  const auto m_before = st.m;
  EXPECT_THROW(
      fl::adamw_step<double>({std::span<double>(theta)}, {std::span<const double>(bad)}, st, 1e-3, cfg),
      fl::NumericalError);
  EXPECT_EQ(theta, theta_before);
  EXPECT_EQ(st.m, m_before);
  EXPECT_EQ(st.t, 1u);
}

TEST(AdamW, DescendsAQuadratic) {
  std::vector<double> x{5.0, -3.0};
  fl::OptimizerState<double> st;
  for (int k = 0; k < 2000; ++k) {
    const std::vector<double> g{2.0 * x[0], 2.0 * x[1]};
    fl::adamw_step<double>({std::span<double>(x)}, {std::span<const double>(g)}, st, 0.05, {0.9, 0.999, 1e-8, 0.0});
  }
  EXPECT_LT(std::abs(x[0]) + std::abs(x[1]), 1e-2);
}

TEST(CosineLr, EndpointsAndMidpoint) {
  EXPECT_NEAR(fl::cosine_lr(0, 1e-3, 1e-6, 10'000), 1e-3, 1e-15);
  EXPECT_NEAR(fl::cosine_lr(10'000, 1e-3, 1e-6, 10'000), 1e-6, 1e-15);
  EXPECT_NEAR(fl::cosine_lr(5'000, 1e-3, 1e-6, 10'000), 5.005e-4, 1e-15);
  EXPECT_EQ(fl::cosine_lr(20'000, 1e-3, 1e-6, 10'000), 1e-6);
  fl::TrainConfig cfg;
  EXPECT_EQ(cfg.schedule_horizon(), 10'000u);
  EXPECT_EQ(fl::cosine_lr(5'000, cfg), fl::cosine_lr(5'000, 1e-3, 1e-6, 10'000));
}

TEST(CosineLr, MonotoneNonIncreasing) {
  double prev = 1.0;
  for (std::size_t t = 0; t <= 10'000; ++t) {
    const double lr = fl::cosine_lr(t, 1e-3, 1e-6, 10'000);
    ASSERT_LE(lr, prev);
    ASSERT_GE(lr, 1e-6);
    prev = lr;
  }
}

TEST(ClipGlobalNorm, Examples) {
  std::vector<double> a{3.0}, b{4.0};
  EXPECT_DOUBLE_EQ(fl::clip_global_norm<double>({std::span<double>(a), std::span<double>(b)}, 1.0), 5.0);
  EXPECT_NEAR(a[0], 0.6, 1e-15);
  EXPECT_NEAR(b[0], 0.8, 1e-15);
  std::vector<double> c{0.3, 0.4};
  EXPECT_DOUBLE_EQ(fl::clip_global_norm<double>({std::span<double>(c)}, 1.0), 0.5);
  EXPECT_EQ(c, (std::vector<double>{0.3, 0.4}));
  std::vector<double> z{0.0, 0.0};
  EXPECT_DOUBLE_EQ(fl::clip_global_norm<double>({std::span<double>(z)}, 1.0), 0.0);
  EXPECT_THROW(fl::clip_global_norm<double>({std::span<double>(z)}, 0.0), fl::ConfigError);
}

TEST(ClipGlobalNorm, PostClipNormBoundedAndDirectionKept) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(1 + rng() % 20), y(1 + rng() % 20);
    for (double& v : x) v = g(rng);
    for (double& v : y) v = g(rng);
    const auto x0 = x;
    const double pre = fl::clip_global_norm<double>({std::span<double>(x), std::span<double>(y)}, 1.0);
    double sq = 0.0;
    for (double v : x) sq += v * v;
    for (double v : y) sq += v * v;
    EXPECT_LE(std::sqrt(sq), 1.0 + 1e-12);
    const double scale = pre > 1.0 ? 1.0 / pre : 1.0;
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x[i], x0[i] * scale, 1e-12);
  }
}

TEST(StratifiedSplit, PerClassCountsAndPartition) {
  std::vector<fl::FaultClass> labels;
  for (int c = 0; c < 5; ++c)
    for (int k = 0; k < 10 * (c + 1); ++k) labels.push_back(fl::fault_from_index(c));
  const auto s = fl::stratified_split(labels, 0.2, 7);
  EXPECT_TRUE(std::is_sorted(s.train.begin(), s.train.end()));
  EXPECT_TRUE(std::is_sorted(s.val.begin(), s.val.end()));
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  for (std::size_t v : s.val) EXPECT_TRUE(all.insert(v).second);
  EXPECT_EQ(all.size(), labels.size());
  std::array<int, 5> per{};
  for (std::size_t v : s.val) ++per[static_cast<std::size_t>(fl::fault_index(labels[v]))];
  for (int c = 0; c < 5; ++c) EXPECT_EQ(per[c], 2 * (c + 1));
  const auto again = fl::stratified_split(labels, 0.2, 7);
  EXPECT_EQ(again.val, s.val);
  EXPECT_NE(fl::stratified_split(labels, 0.2, 8).val, s.val);
  EXPECT_THROW(fl::stratified_split(labels, 0.0, 7), fl::ConfigError);
}

TEST(TrainConfig, Validation) {
  fl::TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lr_min = c.lr0;
  EXPECT_THROW(c.validate(), fl::ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), fl::ConfigError);
  c = {};
  c.label_smoothing = 1.0;
  EXPECT_THROW(c.validate(), fl::ConfigError);
  c = {};
  c.t_max = 0;
  EXPECT_THROW(c.validate(), fl::ConfigError);
}

TEST(Train, OverfitsATinySet) {
  const auto frames = tiny_frames();
  ASSERT_EQ(frames.size(), 15u);
  nn::FaultCnn1d<float> model({}, 1);
  fl::TrainConfig cfg;
  cfg.max_iterations = 500;
  cfg.val_every = 100;
  cfg.batch_size = 16;
  cfg.lr0 = 1e-2;
  cfg.lr_min = 1e-4;
  cfg.weight_decay = 0.0;
  cfg.label_smoothing = 0.0;
  const auto report = fl::train(frames, model, cfg);
  EXPECT_EQ(report.train_frames + report.val_frames, 15u);
  EXPECT_EQ(report.val_frames, 5u);
  EXPECT_DOUBLE_EQ(report.final_train_acc, 1.0);
  EXPECT_LT(report.curves.back().train_loss, 0.1);
  EXPECT_GE(report.best_val_acc, report.final_val_acc);

  // Best point: highest validation accuracy, ties to the lowest validation loss.
  const auto best = std::min_element(report.curves.begin(), report.curves.end(), [](const auto& x, const auto& y) {
    return x.val_acc != y.val_acc ? x.val_acc > y.val_acc : x.val_loss < y.val_loss;
  });
  EXPECT_EQ(report.best_iteration, best->iteration);
  EXPECT_EQ(report.best_val_acc, best->val_acc);
}

TEST(Train, DeterministicAndValidationSchedule) {
  const auto frames = tiny_frames();
  fl::TrainConfig cfg;
  cfg.max_iterations = 25;
  cfg.val_every = 10;
  cfg.batch_size = 4;
  std::vector<std::size_t> seen;
  nn::FaultCnn1d<float> a({}, 5), b({}, 5);
  const auto ra = fl::train(frames, a, cfg, [&](const fl::CurvePoint& p) { seen.push_back(p.iteration); });
  const auto rb = fl::train(frames, b, cfg);
  EXPECT_EQ(seen, (std::vector<std::size_t>{10, 20, 25}));
  ASSERT_EQ(ra.curves.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(ra.curves[i].train_loss, rb.curves[i].train_loss);
    EXPECT_EQ(ra.curves[i].val_loss, rb.curves[i].val_loss);
    EXPECT_DOUBLE_EQ(ra.curves[i].lr, fl::cosine_lr(ra.curves[i].iteration - 1, cfg));
  }
  EXPECT_EQ(a.params().conv1_w.data, b.params().conv1_w.data);
  EXPECT_EQ(a.params().bn2.running_var, b.params().bn2.running_var);
  EXPECT_GE(ra.best_val_acc, ra.final_val_acc);
  EXPECT_NEAR(ra.generalization_gap, std::abs(ra.best_train_acc - ra.best_val_acc), 1e-15);
}

TEST(Train, RejectsBadInputs) {
  nn::FaultCnn1d<float> model;
  fl::TrainConfig cfg;
  EXPECT_THROW(fl::train(fl::FrameSet{}, model, cfg), fl::DataError);
  auto frames = tiny_frames();
  cfg.lr0 = 1e300;
  cfg.max_iterations = 5;
  cfg.batch_size = 4;
  EXPECT_THROW(fl::train(frames, model, cfg), fl::NumericalError);
}
