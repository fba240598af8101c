#pragma once
// Closed-form fault physics: flux degradation, ground fault, unbalance,
// inter-turn short, open circuit and the winding MMF series.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>

#include "faultlab/error.hpp"
#include "faultlab/motor.hpp"

namespace faultlab {

/// Class indices are frozen: they define the classifier output layout.
enum class FaultClass : int { None = 0, DMAG = 1, GND = 2, ITSC = 3, IOC = 4 };

inline constexpr int kNumClasses = 5;
inline constexpr std::array<FaultClass, kNumClasses> kAllFaults{
    FaultClass::None, FaultClass::DMAG, FaultClass::GND, FaultClass::ITSC, FaultClass::IOC};

inline constexpr std::string_view fault_name(FaultClass f) {
  constexpr std::array<std::string_view, kNumClasses> names{"None", "DMAG", "GND", "ITSC", "IOC"};
  return names[static_cast<int>(f)];
}

inline std::optional<FaultClass> parse_fault(std::string_view name) {
  for (FaultClass f : kAllFaults)
    if (fault_name(f) == name) return f;
  return std::nullopt;
}

inline FaultClass fault_from_index(int index) {
  if (index < 0 || index >= kNumClasses) throw ConfigError("fault class index out of range: " + std::to_string(index));
  return static_cast<FaultClass>(index);
}

inline constexpr int fault_index(FaultClass f) { return static_cast<int>(f); }

/// Fault-model constants. mu_d and the turn ratio are the rated (severity 1)
/// values; severity scales the resulting perturbation.
struct FaultConfig {
  double mu_d = 0.35;
  int mu_t = 1;            // shorted turns; 1 of 20 is the 5% rated short
  double R_g = 0.5;        // ohm
  double R_sc = 10e-3;     // ohm
  std::optional<double> L_sc;  // henry; defaults to (mu_t/N_ph)^2 * Ls
  double severity = 1.0;

  double shorted_loop_inductance(const MotorParams& m) const {
    if (L_sc) return *L_sc;
    const double ratio = static_cast<double>(mu_t) / m.N_ph;
    return ratio * ratio * m.Ls;
  }

  void validate(const MotorParams& m) const {
    require(mu_d >= 0.0 && mu_d < 1.0, "fault: mu_d must lie in [0, 1)");
    require(mu_t >= 0 && mu_t <= m.N_ph, "fault: mu_t must lie in [0, N_ph]");
    require(R_g > 0.0, "fault: R_g must be > 0");
    require(R_sc > 0.0, "fault: R_sc must be > 0");
    require(!L_sc || *L_sc >= 0.0, "fault: L_sc must be >= 0");
    require(severity >= 0.0 && severity <= 1.0, "fault: severity must lie in [0, 1]");
  }
};

inline double demagnetized_flux(double psi_f, double mu_d) {
  if (!(mu_d >= 0.0 && mu_d < 1.0)) throw ConfigError("demagnetized_flux: mu_d must lie in [0, 1)");
  return (1.0 - mu_d) * psi_f;
}

/// Phase-a terminal voltage with a coil-to-ground fault path through R_g.
inline double ground_fault_voltage(double Rs, double Ls, double i_a, double di_a_dt, double e_a, double R_g,
                                   double i_g) {
  return Rs * i_a + Ls * di_a_dt + e_a - R_g * i_g;
}

/// Ground current drawn by the back-EMF through R_g, clipped to +/- current_scale.
inline double ground_fault_current(double e_a, double R_g, double current_scale) {
  return std::clamp(e_a / R_g, -current_scale, current_scale);
}

/// Percent excess of the largest phase magnitude over the three-phase mean.
inline double current_unbalance_index(double I_a, double I_b, double I_c) {
  const double a = std::abs(I_a), b = std::abs(I_b), c = std::abs(I_c);
  const double avg = (a + b + c) / 3.0;
  if (!(avg > 0.0)) throw NumericalError("current_unbalance_index: zero average magnitude");
  return (std::max({a, b, c}) - avg) / avg * 100.0;
}

struct PhaseImpedance {
  double R;  // ohm
  double L;  // henry
};

inline PhaseImpedance itsc_modified_params(double Rs, double Ls, int mu_t, int N_ph, double R_sc) {
  if (N_ph <= 0) throw ConfigError("itsc_modified_params: N_ph must be > 0");
  if (mu_t < 0 || mu_t > N_ph) throw ConfigError("itsc_modified_params: mu_t must lie in [0, N_ph]");
  const double healthy = 1.0 - static_cast<double>(mu_t) / N_ph;
  return {Rs * healthy * healthy + R_sc, Ls * healthy * healthy};
}

struct Phasor {
  double magnitude;
  double phase;  // radian
};

/// Circulating current in the shorted loop, driven by the phase back-EMF.
inline Phasor itsc_circulating_current(int mu_t, int N_ph, double e_a_peak, double R_sc, double L_sc,
                                       double omega_e) {
  if (N_ph <= 0) throw ConfigError("itsc_circulating_current: N_ph must be > 0");
  const double reactance = omega_e * L_sc;
  const double z = std::hypot(R_sc, reactance);
  if (z == 0.0) throw NumericalError("itsc_circulating_current: zero loop impedance");
  const double ratio = static_cast<double>(mu_t) / N_ph;
  return {ratio * std::abs(e_a_peak) / z, -std::atan2(reactance, R_sc)};
}

/// Torque with phase c open; the caller encodes the open phase by i_b = -i_a.
inline double open_circuit_torque(int pole_pairs, double psi_f, double i_a, double i_b, double theta_e) {
  return pole_pairs * psi_f * (i_a * std::sin(theta_e) - i_b * std::sin(theta_e - kPhaseShift));
}

/// Truncated winding MMF series over odd harmonic orders up to max_order.
inline double mmf_distribution(int N_ph, const std::map<int, double>& k_w, double theta, double current,
                               int max_order) {
  if (max_order < 1 || max_order % 2 == 0) throw ConfigError("mmf_distribution: max_order must be odd and >= 1");
  for (const auto& [order, _] : k_w)
    if (order % 2 == 0) throw ConfigError("mmf_distribution: even harmonic order in k_w");
  double sum = 0.0;
  for (int n = 1; n <= max_order; n += 2) {
    const auto it = k_w.find(n);
    if (it == k_w.end()) throw ConfigError("mmf_distribution: missing k_w for order " + std::to_string(n));
    sum += 4.0 / (std::numbers::pi * n) * N_ph * it->second * std::sin(n * theta);
  }
  return sum * current;
}

}  // namespace faultlab
