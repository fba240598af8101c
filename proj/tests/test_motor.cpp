#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "faultlab/motor.hpp"

namespace fl = faultlab;

TEST(ElectricalFrequency, Examples) {
  EXPECT_DOUBLE_EQ(fl::electrical_frequency(2700, 5).hz, 225.0);
  EXPECT_DOUBLE_EQ(fl::electrical_frequency(0, 5).hz, 0.0);
  EXPECT_DOUBLE_EQ(fl::electrical_frequency(0, 5).omega, 0.0);
  EXPECT_DOUBLE_EQ(fl::electrical_frequency(1500, 5).hz, 125.0);
}

TEST(ElectricalFrequency, OddInSignLinearInSpeed) {
  for (double rpm : {75.0, 150.0, 1234.5, 2700.0}) {
    const auto pos = fl::electrical_frequency(rpm, 5), neg = fl::electrical_frequency(-rpm, 5);
    EXPECT_DOUBLE_EQ(pos.hz, neg.hz);
    EXPECT_DOUBLE_EQ(pos.omega, -neg.omega);
    EXPECT_NEAR(fl::electrical_frequency(2 * rpm, 5).hz, 2 * pos.hz, 1e-12);
    EXPECT_NEAR(pos.omega, 2 * std::numbers::pi * pos.hz, 1e-12);
  }
}

TEST(TorqueDq, Examples) {
  const fl::MotorParams m;
  EXPECT_NEAR(fl::torque_dq(m, 0.0, 100.0, 0.5), 375.0, 1e-9);
  EXPECT_DOUBLE_EQ(fl::torque_dq(m, 37.0, 0.0, 0.5), 0.0);
  EXPECT_NEAR(fl::torque_dq(m, -100.0, 100.0, 0.5), 386.25, 1e-9);
}

TEST(TorqueDq, DemagnetizedFluxDeficit) {
  const fl::MotorParams m;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> cur(-300.0, 300.0), mu(0.0, 0.99);
  for (int k = 0; k < 200; ++k) {
    const double id = cur(rng), iq = cur(rng), md = mu(rng);
    const double degraded = fl::torque_dq(m, id, iq, (1.0 - md) * m.psi_f);
    const double expected = fl::torque_dq(m, id, iq, m.psi_f) - 1.5 * m.pole_pairs * md * m.psi_f * iq;
    EXPECT_NEAR(degraded, expected, 1e-9 * (1.0 + std::abs(expected)));
  }
}

TEST(SteadyStateVoltages, Examples) {
  const fl::MotorParams m;
  const auto rest = fl::steady_state_voltages(m, 0.0, 0.0, 0.0, m.psi_f);
  EXPECT_DOUBLE_EQ(rest.u_d, 0.0);
  EXPECT_DOUBLE_EQ(rest.u_q, 0.0);
  const auto resistive = fl::steady_state_voltages(m, 10.0, 10.0, 0.0, m.psi_f);
  EXPECT_NEAR(resistive.u_d, 0.07, 1e-12);
  EXPECT_NEAR(resistive.u_q, 0.07, 1e-12);
}

TEST(SteadyStateVoltages, RatedSpeedMatchesFormula) {
  const fl::MotorParams m;
  const double omega = 2.0 * std::numbers::pi * 225.0;
  const auto u = fl::steady_state_voltages(m, 0.0, 100.0, omega, m.psi_f);
  // Independent evaluation: u_d = -w Lq iq, u_q = Rs iq + w psi_f.
  const double ud = -omega * 0.35e-3 * 100.0;
  const double uq = 7e-3 * 100.0 + omega * 0.5;
  EXPECT_NEAR(u.u_d, ud, 1e-9);
  EXPECT_NEAR(u.u_q, uq, 1e-9);
  EXPECT_NEAR(u.u_d, -49.48, 5e-3);
  EXPECT_NEAR(u.u_q, 707.56, 5e-3);
}

TEST(SteadyStateVoltages, LinearInCurrents) {
  const fl::MotorParams m;
  const double w = 900.0;
  const auto zero = fl::steady_state_voltages(m, 0.0, 0.0, w, m.psi_f);
  const auto a = fl::steady_state_voltages(m, 30.0, -20.0, w, m.psi_f);
  const auto b = fl::steady_state_voltages(m, -5.0, 70.0, w, m.psi_f);
  const auto ab = fl::steady_state_voltages(m, 25.0, 50.0, w, m.psi_f);
  EXPECT_NEAR(ab.u_d - zero.u_d, (a.u_d - zero.u_d) + (b.u_d - zero.u_d), 1e-9);
  EXPECT_NEAR(ab.u_q - zero.u_q, (a.u_q - zero.u_q) + (b.u_q - zero.u_q), 1e-9);
}

TEST(DqToAbc, Examples) {
  const auto z = fl::dq_to_abc(0.0, 0.0, 1.234);
  EXPECT_EQ(z.a, 0.0);
  EXPECT_EQ(z.b, 0.0);
  EXPECT_EQ(z.c, 0.0);
  const auto d = fl::dq_to_abc(1.0, 0.0, 0.0);
  EXPECT_NEAR(d.a, 1.0, 1e-15);
  EXPECT_NEAR(d.b, -0.5, 1e-15);
  EXPECT_NEAR(d.c, -0.5, 1e-15);
}

TEST(DqToAbc, ZeroSumAndRoundTrip) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> x(-500.0, 500.0), th(-20.0, 20.0);
  for (int k = 0; k < 1000; ++k) {
    const double xd = x(rng), xq = x(rng), theta = th(rng);
    const auto abc = fl::dq_to_abc(xd, xq, theta);
    const double scale = std::hypot(xd, xq);
    EXPECT_NEAR(abc.a + abc.b + abc.c, 0.0, 1e-12 * scale);
    const auto dq = fl::abc_to_dq(abc, theta);
    EXPECT_NEAR(dq.d, xd, 1e-12 * scale);
    EXPECT_NEAR(dq.q, xq, 1e-12 * scale);
  }
}

TEST(DqToAbc, MagnitudeEqualsPhasePeak) {
  double peak = 0.0;
  for (int k = 0; k < 3600; ++k) peak = std::max(peak, fl::dq_to_abc(30.0, 40.0, k * 2 * std::numbers::pi / 3600).a);
  EXPECT_NEAR(peak, 50.0, 1e-4);
}

TEST(MotorParams, JsonKeysAndValidation) {
  const auto m = fl::motor_params_from_json(nlohmann::json{{"p", 4}, {"Rs", 0.01}, {"k_w", {{"1", 0.9}, {"3", 0.2}}}});
  EXPECT_EQ(m.pole_pairs, 4);
  EXPECT_DOUBLE_EQ(m.Rs, 0.01);
  ASSERT_EQ(m.k_w.size(), 2u);
  EXPECT_DOUBLE_EQ(m.k_w.at(3), 0.2);
  EXPECT_THROW(fl::motor_params_from_json(nlohmann::json{{"Rss", 1.0}}), fl::ConfigError);
  EXPECT_THROW(fl::motor_params_from_json(nlohmann::json{{"Rs", -1.0}}), fl::ConfigError);
  EXPECT_THROW(fl::motor_params_from_json(nlohmann::json{{"k_w", {{"2", 0.5}}}}), fl::ConfigError);
  EXPECT_THROW(fl::motor_params_from_json(nlohmann::json{{"p", "five"}}), fl::ConfigError);
}

TEST(MotorParams, DesignSpaceDefaults) {
  const fl::MotorParams m;
  EXPECT_EQ(m.pole_pairs, 5);
  EXPECT_DOUBLE_EQ(m.Rs, 7e-3);
  EXPECT_DOUBLE_EQ(m.Ld, 0.20e-3);
  EXPECT_DOUBLE_EQ(m.Lq, 0.35e-3);
  EXPECT_DOUBLE_EQ(m.Ls, 0.25e-3);
  EXPECT_DOUBLE_EQ(m.psi_f, 0.50);
  EXPECT_DOUBLE_EQ(m.n_max, 2700.0);
  EXPECT_NO_THROW(m.validate());
}
