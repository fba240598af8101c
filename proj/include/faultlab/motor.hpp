#pragma once
// dq-frame model of the interior PMSM under test.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "faultlab/error.hpp"

namespace faultlab {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr double kPhaseShift = kTwoPi / 3.0;

/// Nameplate and dq-model constants of the machine under test.
///
/// Defaults are the HPDM-350 design-space values. The iron-loss coefficients
/// and the characterization grids are carried for completeness and never
/// enter a computation.
struct MotorParams {
  int pole_pairs = 5;
  double Rs = 7e-3;        // ohm
  double Ld = 0.20e-3;     // H
  double Lq = 0.35e-3;     // H
  double Ls = 0.25e-3;     // H
  double psi_f = 0.50;     // Wb
  double T_max = 1238.0;   // Nm
  double P_max = 350e3;    // W
  int N_ph = 20;           // turns per phase
  std::map<int, double> k_w{{1, 0.933}, {5, 0.067}, {7, 0.067}, {11, 0.933}, {13, 0.933}};
  double k_hs = 1.2e-3;
  double k_Js = 0.8e-5;
  double k_es = 0.5e-6;
  double n_max = 2700.0;  // rpm
  std::vector<double> I_vec{0.0, 100.0, 200.0};
  std::vector<double> theta_vec{0.0, 72.0};
  std::vector<double> B_vec{-180.0, -90.0, 0.0, 90.0, 180.0};

  void validate() const {
    require(pole_pairs >= 1, "motor: p must be >= 1");
    require(Rs > 0.0, "motor: Rs must be > 0");
    require(Ld > 0.0 && Lq > 0.0 && Ls > 0.0, "motor: inductances must be > 0");
    require(psi_f > 0.0, "motor: psi_f must be > 0");
    require(n_max > 0.0, "motor: n_max must be > 0");
    require(N_ph > 0, "motor: N_ph must be > 0");
    for (const auto& [order, _] : k_w)
      require(order >= 1 && order % 2 == 1, "motor: k_w orders must be odd");
  }
};

struct OperatingPoint {
  double rpm = 0.0;
  double i_d = 0.0;    // A
  double i_q = 200.0;  // A
};

struct ElectricalFrequency {
  double hz;     // always >= 0
  double omega;  // rad/s, carries the sign of the speed
};

inline ElectricalFrequency electrical_frequency(double rpm, int pole_pairs) {
  const double hz = pole_pairs * std::abs(rpm) / 60.0;
  const double sign = rpm < 0.0 ? -1.0 : (rpm > 0.0 ? 1.0 : 0.0);
  return {hz, kTwoPi * hz * sign};
}

/// Electromagnetic torque from dq currents with an effective PM flux.
inline double torque_dq(const MotorParams& m, double i_d, double i_q, double psi_eff) {
  return 1.5 * m.pole_pairs * (psi_eff * i_q + (m.Ld - m.Lq) * i_d * i_q);
}

struct DqVoltage {
  double u_d;
  double u_q;
};

/// Steady-state (di/dt = 0) synchronous-frame voltages.
inline DqVoltage steady_state_voltages(const MotorParams& m, double i_d, double i_q, double omega_e,
                                       double psi_eff) {
  return {m.Rs * i_d - omega_e * m.Lq * i_q, m.Rs * i_q + omega_e * (m.Ld * i_d + psi_eff)};
}

struct Abc {
  double a;
  double b;
  double c;
};

struct Dq {
  double d;
  double q;
};

// Amplitude-invariant inverse Park/Clarke: |dq| equals the phase peak amplitude.
inline Abc dq_to_abc(double x_d, double x_q, double theta_e) {
  const auto phase = [&](double shift) {
    return x_d * std::cos(theta_e - shift) - x_q * std::sin(theta_e - shift);
  };
  return {phase(0.0), phase(kPhaseShift), phase(-kPhaseShift)};
}

inline Dq abc_to_dq(const Abc& x, double theta_e) {
  const double ca = std::cos(theta_e), cb = std::cos(theta_e - kPhaseShift),
               cc = std::cos(theta_e + kPhaseShift);
  const double sa = std::sin(theta_e), sb = std::sin(theta_e - kPhaseShift),
               sc = std::sin(theta_e + kPhaseShift);
  return {2.0 / 3.0 * (x.a * ca + x.b * cb + x.c * cc), -2.0 / 3.0 * (x.a * sa + x.b * sb + x.c * sc)};
}

namespace detail {

template <class T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

/// Parses a motor section. Key names follow the design-space table symbols;
/// unknown keys are rejected.
inline MotorParams motor_params_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known{"p",     "Rs",   "Ld",   "Lq",   "Ls",    "psi_f",
                                              "T_max", "P_max", "N_ph", "k_w",  "k_hs",  "k_Js",
                                              "k_es",  "n_max", "I_vec", "theta_vec", "B_vec"};
  require(j.is_object(), "motor: section must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("motor: unknown key '" + key + "'");
  }
  MotorParams m;
  try {
    detail::read_key(j, "p", m.pole_pairs);
    detail::read_key(j, "Rs", m.Rs);
    detail::read_key(j, "Ld", m.Ld);
    detail::read_key(j, "Lq", m.Lq);
    detail::read_key(j, "Ls", m.Ls);
    detail::read_key(j, "psi_f", m.psi_f);
    detail::read_key(j, "T_max", m.T_max);
    detail::read_key(j, "P_max", m.P_max);
    detail::read_key(j, "N_ph", m.N_ph);
    detail::read_key(j, "k_hs", m.k_hs);
    detail::read_key(j, "k_Js", m.k_Js);
    detail::read_key(j, "k_es", m.k_es);
    detail::read_key(j, "n_max", m.n_max);
    detail::read_key(j, "I_vec", m.I_vec);
    detail::read_key(j, "theta_vec", m.theta_vec);
    detail::read_key(j, "B_vec", m.B_vec);
    if (j.contains("k_w")) {
      m.k_w.clear();
      for (const auto& [order, value] : j.at("k_w").items()) m.k_w[std::stoi(order)] = value.get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("motor: ") + e.what());
  }
  m.validate();
  return m;
}

inline MotorParams load_motor_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open motor config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("motor config " + path + ": " + e.what());
  }
  return motor_params_from_json(j.contains("motor") ? j.at("motor") : j);
}

}  // namespace faultlab
