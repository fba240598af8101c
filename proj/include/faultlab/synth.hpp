#pragma once
// Seven-channel waveform synthesis for (fault, speed, severity) scenarios.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "faultlab/error.hpp"
#include "faultlab/faults.hpp"
#include "faultlab/motor.hpp"

namespace faultlab {

inline constexpr int kSignalChannels = 7;

enum Channel : int { kTorque = 0, kIa, kIb, kIc, kVa, kVb, kVc };

/// Fault-harmonic amplitudes at severity 1, as fractions of the fundamental
/// current amplitude.
struct HarmonicAmplitudes {
  double dmag_h2 = 0.10;
  double gnd_dc = 0.15;
  double gnd_h3 = 0.08;
  double itsc_h5 = 0.12;
};

struct FaultScenario {
  FaultClass fault = FaultClass::None;
  OperatingPoint op;
  FaultConfig config;
  HarmonicAmplitudes amplitudes;
  double snr_db = 40.0;  // +inf disables noise
  std::uint64_t seed = 0;
  std::size_t n_samples = 50'000;
  double sample_rate = 50e3;  // Hz
  double theta0 = 0.25;       // initial electrical angle, rad
  double noise_floor_power = 1.0;
  bool strict = false;  // reject degenerate 0-rpm harmonic classes instead of tagging them

  double dt() const { return 1.0 / sample_rate; }
};

struct SignalRun {
  std::array<std::vector<double>, kSignalChannels> channels;
  double rpm = 0.0;
  FaultClass fault = FaultClass::None;
  double severity = 0.0;
  std::string warning;

  std::size_t size() const { return channels[0].size(); }
};

/// Adds white Gaussian noise at the requested SNR relative to the mean signal
/// power. A zero-power signal uses floor_power when given, else it is an error.
template <class Rng>
void add_awgn(std::vector<double>& signal, double snr_db, Rng& rng, std::optional<double> floor_power = std::nullopt) {
  if (std::isinf(snr_db) && snr_db > 0) return;
  if (!std::isfinite(snr_db)) throw ConfigError("add_awgn: snr_db must be finite or +inf");
  if (signal.empty()) return;
  double power = 0.0;
  for (double x : signal) power += x * x;
  power /= static_cast<double>(signal.size());
  if (!(power > 0.0)) {
    if (!floor_power || !(*floor_power > 0.0)) throw NumericalError("add_awgn: zero-power channel");
    power = *floor_power;
  }
  const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  std::normal_distribution<double> noise(0.0, sigma);
  for (double& x : signal) x += noise(rng);
}

namespace detail {

inline bool purely_harmonic(FaultClass f) { return f == FaultClass::ITSC || f == FaultClass::IOC; }

// Phase shifts of phases a, b, c.
inline constexpr std::array<double, 3> kShift{0.0, kPhaseShift, -kPhaseShift};

}  // namespace detail

/// Synthesizes one constant-speed run. Deterministic in (scenario, params).
///
/// The healthy machine follows the steady-state dq model. Faulted signals are
/// blended as (1 - severity) * healthy + severity * rated-fault, so severity
/// scales the perturbation while the label stays fixed.
inline SignalRun synthesize_run(const FaultScenario& sc, const MotorParams& m) {
  m.validate();
  sc.config.validate(m);
  require(sc.n_samples > 0, "synthesize_run: n_samples must be > 0");
  require(sc.sample_rate > 0.0, "synthesize_run: sample_rate must be > 0");
  require(std::abs(sc.op.rpm) <= m.n_max, "synthesize_run: |rpm| exceeds n_max");
  if (fault_index(sc.fault) < 0 || fault_index(sc.fault) >= kNumClasses)
    throw ConfigError("synthesize_run: unknown fault class");

  SignalRun run;
  run.rpm = sc.op.rpm;
  run.fault = sc.fault;
  run.severity = sc.fault == FaultClass::None ? 0.0 : sc.config.severity;
  if (sc.op.rpm == 0.0 && detail::purely_harmonic(sc.fault)) {
    if (sc.strict) throw ConfigError("synthesize_run: harmonic fault signature undefined at 0 rpm");
    run.warning = "harmonic fault signature degenerates to DC";
  }

  const std::size_t n = sc.n_samples;
  for (auto& ch : run.channels) ch.assign(n, 0.0);

  const double omega = electrical_frequency(sc.op.rpm, m.pole_pairs).omega;
  const double i_d = sc.op.i_d, i_q = sc.op.i_q;
  const double amp = std::hypot(i_d, i_q);
  const double sigma = sc.fault == FaultClass::None ? 0.0 : sc.config.severity;
  const auto& h = sc.amplitudes;

  const double psi_eff =
      sc.fault == FaultClass::DMAG ? demagnetized_flux(m.psi_f, sigma * sc.config.mu_d) : m.psi_f;
  const DqVoltage u = steady_state_voltages(m, i_d, i_q, omega, psi_eff);
  const double torque_healthy = torque_dq(m, i_d, i_q, m.psi_f);

  const PhaseImpedance itsc = itsc_modified_params(m.Rs, m.Ls, sc.config.mu_t, m.N_ph, sc.config.R_sc);
  // IOC: phase-a amplitude chosen so the mean open-phase torque is half the healthy torque.
  const double ioc_amp = torque_healthy / (m.pole_pairs * m.psi_f);

  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * sc.dt();
    const double theta = sc.theta0 + omega * t;

    const Abc ih = dq_to_abc(i_d, i_q, theta);
    const Abc dih = dq_to_abc(-omega * i_q, omega * i_d, theta);
    const Abc vh = dq_to_abc(u.u_d, u.u_q, theta);
    const Abc emf = dq_to_abc(0.0, omega * psi_eff, theta);

    std::array<double, 3> i{ih.a, ih.b, ih.c};
    std::array<double, 3> v{vh.a, vh.b, vh.c};
    double torque = torque_healthy;

    switch (sc.fault) {
      case FaultClass::None:
        break;
      case FaultClass::DMAG: {
        for (int p = 0; p < 3; ++p) {
          const double arg = 2.0 * (theta - detail::kShift[p]);
          const double di = -sigma * h.dmag_h2 * amp * std::sin(arg);
          const double ddi = -sigma * h.dmag_h2 * amp * 2.0 * omega * std::cos(arg);
          i[p] += di;
          v[p] += m.Rs * di + m.Ls * ddi;
        }
        const Dq idq = abc_to_dq({i[0], i[1], i[2]}, theta);
        torque = torque_dq(m, idq.d, idq.q, psi_eff);
        break;
      }
      case FaultClass::GND: {
        const double di = sigma * amp * (h.gnd_dc - h.gnd_h3 * std::sin(3.0 * theta));
        const double ddi = -sigma * amp * h.gnd_h3 * 3.0 * omega * std::cos(3.0 * theta);
        const double i_g = sigma * ground_fault_current(emf.a, sc.config.R_g, amp);
        i[0] += di;
        v[0] += m.Rs * di + m.Ls * ddi - sc.config.R_g * i_g;
        const Dq idq = abc_to_dq({i[0], i[1], i[2]}, theta);
        torque = torque_dq(m, idq.d, idq.q, psi_eff);
        break;
      }
      case FaultClass::ITSC: {
        const double di = -sigma * h.itsc_h5 * amp * std::sin(5.0 * theta);
        const double ddi = -sigma * h.itsc_h5 * amp * 5.0 * omega * std::cos(5.0 * theta);
        const double R_f = m.Rs + sigma * (itsc.R - m.Rs);
        const double L_f = m.Ls + sigma * (itsc.L - m.Ls);
        v[0] += (R_f - m.Rs) * ih.a + (L_f - m.Ls) * dih.a + R_f * di + L_f * ddi;
        i[0] += di;
        const Dq idq = abc_to_dq({i[0], i[1], i[2]}, theta);
        torque = torque_dq(m, idq.d, idq.q, psi_eff);
        break;
      }
      case FaultClass::IOC: {
        const double arg = theta - std::numbers::pi / 3.0;
        const double ia_o = ioc_amp * std::sin(arg);
        const double dia_o = ioc_amp * omega * std::cos(arg);
        const std::array<double, 3> io{ia_o, -ia_o, 0.0};
        const std::array<double, 3> vo{m.Rs * ia_o + m.Ls * dia_o + emf.a, -m.Rs * ia_o - m.Ls * dia_o + emf.b,
                                       emf.c};
        const double to = open_circuit_torque(m.pole_pairs, m.psi_f, ia_o, -ia_o, theta);
        for (int p = 0; p < 3; ++p) {
          i[p] = (1.0 - sigma) * i[p] + sigma * io[p];
          v[p] = (1.0 - sigma) * v[p] + sigma * vo[p];
        }
        torque = (1.0 - sigma) * torque + sigma * to;
        break;
      }
    }

    run.channels[kTorque][k] = torque;
    run.channels[kIa][k] = i[0];
    run.channels[kIb][k] = i[1];
    run.channels[kIc][k] = i[2];
    run.channels[kVa][k] = v[0];
    run.channels[kVb][k] = v[1];
    run.channels[kVc][k] = v[2];
  }

  if (!(std::isinf(sc.snr_db) && sc.snr_db > 0)) {
    std::mt19937_64 rng(sc.seed);
    for (auto& ch : run.channels) add_awgn(ch, sc.snr_db, rng, sc.noise_floor_power);
  }
  for (const auto& ch : run.channels)
    for (double x : ch)
      if (!std::isfinite(x)) throw NumericalError("synthesize_run: non-finite sample");
  return run;
}

/// SplitMix64 finalizer; derives independent per-run seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t run_seed(std::uint64_t base, std::size_t speed_index, std::size_t fault_index,
                              std::size_t severity_index) {
  return mix_seed(mix_seed(mix_seed(base) ^ speed_index) ^ (fault_index << 8) ^ (severity_index << 20));
}

inline std::vector<double> speed_grid(double step, double n_max) {
  std::vector<double> speeds;
  const auto half = static_cast<int>(std::llround(n_max / step));
  for (int k = -half; k <= half; ++k) speeds.push_back(k * step);
  return speeds;
}

/// How fault severities are assigned to runs.
enum class SeverityMode {
  Grid,     // cross product with `severities`
  Uniform,  // one severity per run, drawn from [severity_min, severity_max]
  Mixed,    // severity_max with probability rated_fraction, else as Uniform
};

struct SweepConfig {
  std::vector<double> speeds = speed_grid(150.0, 2700.0);
  std::vector<FaultClass> faults{kAllFaults.begin(), kAllFaults.end()};
  SeverityMode severity_mode = SeverityMode::Mixed;
  std::vector<double> severities{1.0};
  double severity_min = 0.1;
  double severity_max = 1.0;
  double rated_fraction = 0.75;
  double snr_db = 40.0;
  std::uint64_t seed = 2026;
  HarmonicAmplitudes amplitudes;
  FaultConfig fault;
  double i_d = 0.0;
  double i_q = 200.0;
  std::size_t n_samples = 50'000;
  double sample_rate = 50e3;
  double theta0 = 0.25;
  double noise_floor_power = 1.0;

  std::size_t runs_per_speed() const {
    return faults.size() * (severity_mode == SeverityMode::Grid ? severities.size() : 1);
  }
  std::size_t run_count() const { return speeds.size() * runs_per_speed(); }
};

/// Builds the scenario list in emission order: speed-major, then fault, then severity.
inline std::vector<FaultScenario> sweep_scenarios(const SweepConfig& cfg) {
  require(!cfg.speeds.empty() && !cfg.faults.empty(), "sweep: speeds and faults must be nonempty");
  if (cfg.severity_mode == SeverityMode::Grid)
    require(!cfg.severities.empty(), "sweep: severities must be nonempty");
  else
    require(cfg.severity_min >= 0.0 && cfg.severity_min <= cfg.severity_max && cfg.severity_max <= 1.0,
            "sweep: severity range must satisfy 0 <= min <= max <= 1");
  require(cfg.rated_fraction >= 0.0 && cfg.rated_fraction <= 1.0, "sweep: rated_fraction must lie in [0, 1]");
  std::vector<FaultScenario> out;
  out.reserve(cfg.run_count());
  for (std::size_t si = 0; si < cfg.speeds.size(); ++si) {
    for (FaultClass f : cfg.faults) {
      const std::size_t n_sev = cfg.severity_mode == SeverityMode::Grid ? cfg.severities.size() : 1;
      for (std::size_t vi = 0; vi < n_sev; ++vi) {
        FaultScenario sc;
        sc.fault = f;
        sc.op = {cfg.speeds[si], cfg.i_d, cfg.i_q};
        sc.config = cfg.fault;
        sc.amplitudes = cfg.amplitudes;
        sc.snr_db = cfg.snr_db;
        sc.seed = run_seed(cfg.seed, si, static_cast<std::size_t>(fault_index(f)), vi);
        sc.n_samples = cfg.n_samples;
        sc.sample_rate = cfg.sample_rate;
        sc.theta0 = cfg.theta0;
        sc.noise_floor_power = cfg.noise_floor_power;
        if (cfg.severity_mode == SeverityMode::Grid) {
          sc.config.severity = cfg.severities[vi];
        } else {
          std::mt19937_64 rng(mix_seed(sc.seed ^ 0x5eedULL));
          const double draw = std::uniform_real_distribution<double>(cfg.severity_min, cfg.severity_max)(rng);
          const bool rated = cfg.severity_mode == SeverityMode::Mixed &&
                             std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.rated_fraction;
          sc.config.severity = rated ? cfg.severity_max : draw;
        }
        out.push_back(sc);
      }
    }
  }
  return out;
}

/// Streams every run of the sweep to `sink` in deterministic order. Up to
/// `threads` runs are synthesized concurrently; emission order never depends
/// on scheduling. Returns the number of runs emitted.
inline std::size_t generate_sweep(const SweepConfig& cfg, const MotorParams& m,
                                  const std::function<void(SignalRun&&)>& sink, unsigned threads = 1) {
  const auto scenarios = sweep_scenarios(cfg);
  threads = std::max(1u, threads);
  std::size_t emitted = 0;
  for (std::size_t start = 0; start < scenarios.size(); start += threads) {
    const std::size_t end = std::min(scenarios.size(), start + threads);
    std::vector<SignalRun> batch(end - start);
    if (threads == 1) {
      batch[0] = synthesize_run(scenarios[start], m);
    } else {
      std::vector<std::exception_ptr> errors(batch.size());
      {
        std::vector<std::jthread> workers;
        for (std::size_t j = start; j < end; ++j)
          workers.emplace_back([&, j] {
            try {
              batch[j - start] = synthesize_run(scenarios[j], m);
            } catch (...) {
              errors[j - start] = std::current_exception();
            }
          });
      }
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }
    for (auto& run : batch) {
      sink(std::move(run));
      ++emitted;
    }
  }
  return emitted;
}

}  // namespace faultlab
