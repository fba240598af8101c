#pragma once
// Unified pipeline configuration (JSON). Unknown keys are rejected; any field
// can then be overridden from the command line.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "faultlab/error.hpp"
#include "faultlab/faults.hpp"
#include "faultlab/framing.hpp"
#include "faultlab/motor.hpp"
#include "faultlab/synth.hpp"
#include "faultlab/train.hpp"

namespace faultlab {

inline constexpr const char* kConfigEnvVar = "FAULTLAB_CONFIG";

struct EvalConfig {
  std::size_t severity_points = 20;
  double severity_min = 0.05;
  double severity_max = 1.0;
  std::uint64_t severity_seed = 0x5e7e41;
  std::size_t knn_k = 7;
  std::size_t latency_trials = 10'000;
  std::size_t latency_warmup = 100;
};

struct PipelineConfig {
  MotorParams motor;
  SweepConfig sweep;
  double grid_step = 150.0;
  bool explicit_speeds = false;  // sweep.speeds came from the config rather than the grid
  FramingConfig framing;
  TrainConfig train;
  EvalConfig eval;
  unsigned threads = 1;

  /// Held-out speeds: midpoints of the training grid.
  std::vector<double> test_speeds() const {
    std::vector<double> grid = speed_grid(grid_step, motor.n_max), out;
    for (std::size_t k = 0; k + 1 < grid.size(); ++k) out.push_back(0.5 * (grid[k] + grid[k + 1]));
    return out;
  }

  /// Test sweep: midpoint speeds, every class, rated severity, independent seed.
  SweepConfig test_sweep() const {
    SweepConfig s = sweep;
    s.speeds = test_speeds();
    s.faults.assign(kAllFaults.begin(), kAllFaults.end());
    s.severity_mode = SeverityMode::Grid;
    s.severities = {1.0};
    s.seed = mix_seed(sweep.seed ^ 0x7e57ULL);
    return s;
  }

  void validate() const {
    motor.validate();
    sweep.fault.validate(motor);
    framing.validate();
    train.validate();
    require(grid_step > 0.0, "config: grid_step must be > 0");
    require(framing.n_max == motor.n_max, "config: framing n_max must equal motor n_max");
    require(eval.severity_points >= 2, "config: eval.severity_points must be >= 2");
    require(eval.knn_k >= 1, "config: eval.knn_k must be >= 1");
    require(eval.latency_trials >= 1, "config: eval.latency_trials must be >= 1");
    require(threads >= 1, "config: threads must be >= 1");
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& section, std::initializer_list<const char*> known) {
  require(j.is_object(), "config: section '" + section + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("config: unknown key '" + section + "." + key + "'");
  }
}

inline double read_snr(const nlohmann::json& v) {
  if (v.is_null() || (v.is_string() && v.get<std::string>() == "inf")) return std::numeric_limits<double>::infinity();
  return v.get<double>();
}

inline std::vector<FaultClass> read_faults(const nlohmann::json& v) {
  std::vector<FaultClass> out;
  for (const auto& e : v) {
    const auto f = parse_fault(e.get<std::string>());
    if (!f) throw ConfigError("config: unknown fault '" + e.get<std::string>() + "'");
    out.push_back(*f);
  }
  return out;
}

}  // namespace detail

/// Parses a full pipeline config; absent keys keep their defaults.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  detail::check_keys(j, "root", {"motor", "sweep", "framing", "training", "eval", "threads"});
  PipelineConfig c;
  try {
    if (j.contains("motor")) c.motor = motor_params_from_json(j.at("motor"));
    if (j.contains("sweep")) {
      const auto& s = j.at("sweep");
      detail::check_keys(s, "sweep",
                         {"grid_step", "speeds", "faults", "severity_mode", "severities", "severity_min", "severity_max",
                          "rated_fraction", "snr_db", "seed", "i_d", "i_q", "n_samples", "sample_rate", "theta0", "noise_floor_power",
                          "amplitudes", "fault"});
      auto& w = c.sweep;
      detail::read_key(s, "grid_step", c.grid_step);
      if (s.contains("speeds")) {
        w.speeds = s.at("speeds").get<std::vector<double>>();
        c.explicit_speeds = true;
      }
      if (s.contains("faults")) w.faults = detail::read_faults(s.at("faults"));
      if (s.contains("severity_mode")) {
        const auto mode = s.at("severity_mode").get<std::string>();
        if (mode == "grid")
          w.severity_mode = SeverityMode::Grid;
        else if (mode == "uniform")
          w.severity_mode = SeverityMode::Uniform;
        else if (mode == "mixed")
          w.severity_mode = SeverityMode::Mixed;
        else
          throw ConfigError("config: sweep.severity_mode must be 'grid', 'uniform' or 'mixed'");
      }
      detail::read_key(s, "severities", w.severities);
      detail::read_key(s, "severity_min", w.severity_min);
      detail::read_key(s, "severity_max", w.severity_max);
      detail::read_key(s, "rated_fraction", w.rated_fraction);
      if (s.contains("snr_db")) w.snr_db = detail::read_snr(s.at("snr_db"));
      detail::read_key(s, "seed", w.seed);
      detail::read_key(s, "i_d", w.i_d);
      detail::read_key(s, "i_q", w.i_q);
      detail::read_key(s, "n_samples", w.n_samples);
      detail::read_key(s, "sample_rate", w.sample_rate);
      detail::read_key(s, "theta0", w.theta0);
      detail::read_key(s, "noise_floor_power", w.noise_floor_power);
      if (s.contains("amplitudes")) {
        const auto& a = s.at("amplitudes");
        detail::check_keys(a, "sweep.amplitudes", {"dmag_h2", "gnd_dc", "gnd_h3", "itsc_h5"});
        detail::read_key(a, "dmag_h2", w.amplitudes.dmag_h2);
        detail::read_key(a, "gnd_dc", w.amplitudes.gnd_dc);
        detail::read_key(a, "gnd_h3", w.amplitudes.gnd_h3);
        detail::read_key(a, "itsc_h5", w.amplitudes.itsc_h5);
      }
      if (s.contains("fault")) {
        const auto& f = s.at("fault");
        detail::check_keys(f, "sweep.fault", {"mu_d", "mu_t", "R_g", "R_sc", "L_sc"});
        detail::read_key(f, "mu_d", w.fault.mu_d);
        detail::read_key(f, "mu_t", w.fault.mu_t);
        detail::read_key(f, "R_g", w.fault.R_g);
        detail::read_key(f, "R_sc", w.fault.R_sc);
        if (f.contains("L_sc") && !f.at("L_sc").is_null()) w.fault.L_sc = f.at("L_sc").get<double>();
      }
    }
    if (j.contains("framing")) {
      const auto& f = j.at("framing");
      detail::check_keys(f, "framing", {"frame_len", "overlap", "eps"});
      detail::read_key(f, "frame_len", c.framing.frame_len);
      detail::read_key(f, "overlap", c.framing.overlap);
      detail::read_key(f, "eps", c.framing.eps);
    }
    if (j.contains("training")) {
      const auto& t = j.at("training");
      detail::check_keys(t, "training",
                         {"lr0", "lr_min", "t_max", "weight_decay", "label_smoothing", "beta1", "beta2", "adam_eps",
                          "batch_size", "max_iterations", "val_every", "val_fraction", "clip_norm", "seed"});
      auto& r = c.train;
      detail::read_key(t, "lr0", r.lr0);
      detail::read_key(t, "lr_min", r.lr_min);
      if (t.contains("t_max") && !t.at("t_max").is_null()) r.t_max = t.at("t_max").get<std::size_t>();
      detail::read_key(t, "weight_decay", r.weight_decay);
      detail::read_key(t, "label_smoothing", r.label_smoothing);
      detail::read_key(t, "beta1", r.beta1);
      detail::read_key(t, "beta2", r.beta2);
      detail::read_key(t, "adam_eps", r.adam_eps);
      detail::read_key(t, "batch_size", r.batch_size);
      detail::read_key(t, "max_iterations", r.max_iterations);
      detail::read_key(t, "val_every", r.val_every);
      detail::read_key(t, "val_fraction", r.val_fraction);
      detail::read_key(t, "clip_norm", r.clip_norm);
      detail::read_key(t, "seed", r.seed);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      detail::check_keys(e, "eval",
                         {"severity_points", "severity_min", "severity_max", "severity_seed", "knn_k", "latency_trials",
                          "latency_warmup"});
      detail::read_key(e, "severity_points", c.eval.severity_points);
      detail::read_key(e, "severity_min", c.eval.severity_min);
      detail::read_key(e, "severity_max", c.eval.severity_max);
      detail::read_key(e, "severity_seed", c.eval.severity_seed);
      detail::read_key(e, "knn_k", c.eval.knn_k);
      detail::read_key(e, "latency_trials", c.eval.latency_trials);
      detail::read_key(e, "latency_warmup", c.eval.latency_warmup);
    }
    detail::read_key(j, "threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.framing.n_max = c.motor.n_max;
  if (!c.explicit_speeds) c.sweep.speeds = speed_grid(c.grid_step, c.motor.n_max);
  c.validate();
  return c;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return pipeline_config_from_json(j);
}

/// Explicit path, else $FAULTLAB_CONFIG, else built-in defaults.
inline PipelineConfig resolve_pipeline_config(const std::optional<std::filesystem::path>& path) {
  if (path) return load_pipeline_config(*path);
  if (const char* env = std::getenv(kConfigEnvVar); env && *env) return load_pipeline_config(env);
  return pipeline_config_from_json(nlohmann::json::object());
}

}  // namespace faultlab
