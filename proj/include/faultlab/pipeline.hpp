#pragma once
// End-to-end command implementations shared by the CLI and the acceptance
// suite: generate, train, eval, bench, infer.

#include <array>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <openssl/evp.h>

#include "faultlab/config.hpp"
#include "faultlab/dataset.hpp"
#include "faultlab/eval.hpp"
#include "faultlab/framing.hpp"
#include "faultlab/nn/checkpoint.hpp"
#include "faultlab/nn/model.hpp"
#include "faultlab/synth.hpp"
#include "faultlab/train.hpp"

namespace faultlab {

/// Lowercase hex SHA-256 of a file's bytes.
inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("sha256: cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw DataError("sha256: digest initialization failed");
  }
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

// ---------------------------------------------------------------------------
// generate

struct GenerateSummary {
  std::size_t runs = 0;
  std::size_t rows = 0;
  double seconds = 0.0;
  std::vector<std::string> warnings;
};

inline GenerateSummary generate_dataset(const SweepConfig& sweep, const MotorParams& motor,
                                        const std::filesystem::path& out, unsigned threads = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  CsvWriter writer(out);
  GenerateSummary s;
  s.runs = generate_sweep(
      sweep, motor,
      [&](SignalRun&& run) {
        if (!run.warning.empty())
          s.warnings.push_back(std::string(fault_name(run.fault)) + " @ " + std::to_string(std::lround(run.rpm)) +
                               " rpm: " + run.warning);
        writer.write(run);
      },
      threads);
  s.rows = writer.close();
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return s;
}

/// Raw (unstandardized) frames of every run in a dataset CSV.
inline FrameSet load_frames(const std::filesystem::path& csv, const FramingConfig& framing) {
  framing.validate();
  FrameSet frames;
  frames.frame_len = framing.frame_len;
  read_csv(csv, [&](SignalRun&& run) { frames.append_run(run, framing); });
  if (frames.size() == 0) throw DataError("no frames in " + csv.string());
  return frames;
}

// ---------------------------------------------------------------------------
// train

struct TrainOutcome {
  TrainReport report;
  ChannelStats stats;
  nn::ParameterCount count{};
  std::size_t frames = 0;
};

inline void write_curves_csv(const std::filesystem::path& path, const TrainReport& r) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "iteration,lr,train_loss,val_loss,val_acc\n" << std::setprecision(17);
  for (const auto& p : r.curves)
    out << p.iteration << ',' << p.lr << ',' << p.train_loss << ',' << p.val_loss << ',' << p.val_acc << '\n';
}

inline std::string train_summary_text(const TrainOutcome& o) {
  const auto& r = o.report;
  std::ostringstream s;
  s << std::fixed << std::setprecision(4);
  s << "frames                 " << o.frames << " (train " << r.train_frames << ", val " << r.val_frames << ")\n";
  s << "parameters             " << o.count.with_bn_scalars << " (" << o.count.learnable << " learnable, "
    << o.count.bytes_fp32 << " bytes FP32)\n";
  s << "best iteration         " << r.best_iteration << "\n";
  s << "train accuracy (best)  " << r.best_train_acc << "\n";
  s << "val accuracy (best)    " << r.best_val_acc << "\n";
  s << "train accuracy (final) " << r.final_train_acc << "\n";
  s << "val accuracy (final)   " << r.final_val_acc << "\n";
  s << "generalization gap     " << r.generalization_gap << "\n";
  s << "wall time (s)          " << std::setprecision(1) << r.wall_seconds << "\n";
  return s.str();
}

/// Frames the dataset, fits statistics on it, trains and writes the best checkpoint.
inline TrainOutcome train_from_csv(const PipelineConfig& cfg, const std::filesystem::path& data,
                                   const std::filesystem::path& checkpoint,
                                   const std::optional<std::filesystem::path>& curves = std::nullopt,
                                   const std::optional<std::filesystem::path>& summary = std::nullopt,
                                   const ProgressFn& progress = {}) {
  FrameSet frames = load_frames(data, cfg.framing);
  TrainOutcome o;
  o.frames = frames.size();
  o.stats = fit_stats(std::span<const float>(frames.values), frames.frame_len);
  frames.standardize(o.stats, cfg.framing.eps);
  nn::Architecture arch;
  arch.frame_len = cfg.framing.frame_len;
  nn::FaultCnn1d<float> model(arch, cfg.train.seed);
  o.count = nn::parameter_count(arch);
  o.report = train(frames, model, cfg.train, progress);
  if (checkpoint.has_parent_path()) std::filesystem::create_directories(checkpoint.parent_path());
  nn::save_checkpoint(checkpoint, nn::make_checkpoint(model, o.stats, cfg.framing.eps, cfg.motor.n_max));
  if (curves) write_curves_csv(*curves, o.report);
  if (summary) {
    std::ofstream out(*summary);
    if (!out) throw DataError("cannot write " + summary->string());
    out << train_summary_text(o);
  }
  return o;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path test_data;
  std::optional<std::filesystem::path> train_data;  // enables the KNN baseline
  bool cross_speed = false;
  bool severity_sweep = false;
  std::optional<std::filesystem::path> out_dir;
};

struct EvalOutcome {
  ClassificationReport cnn;
  std::optional<ClassificationReport> knn;
  std::optional<SpeedGrid> grid;
  std::optional<SeverityCurves> severity;
  std::size_t test_frames = 0;
};

inline void write_confusion_csv(const std::filesystem::path& path, const ClassificationReport& r) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "true\\pred";
  for (FaultClass f : kAllFaults) out << ',' << fault_name(f);
  out << ",recall\n";
  const auto norm = r.confusion.normalized();
  for (int t = 0; t < kNumClasses; ++t) {
    out << fault_name(fault_from_index(t));
    for (int p = 0; p < kNumClasses; ++p) out << ',' << r.confusion.counts[t][p];
    out << ',' << std::setprecision(6) << norm[t][t] << '\n';
  }
}

inline void write_speed_grid_csv(const std::filesystem::path& path, const SpeedGrid& g) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "rpm";
  for (FaultClass f : kAllFaults) out << ',' << fault_name(f);
  out << '\n' << std::setprecision(6);
  for (std::size_t i = 0; i < g.speeds.size(); ++i) {
    out << g.speeds[i];
    for (double a : g.accuracy[i]) out << ',' << a;
    out << '\n';
  }
}

inline void write_severity_csv(const std::filesystem::path& path, const SeverityCurves& c) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "severity";
  for (FaultClass f : kAllFaults) out << ',' << fault_name(f);
  out << '\n' << std::setprecision(6);
  for (std::size_t i = 0; i < c.severities.size(); ++i) {
    out << c.severities[i];
    for (double a : c.detection[i]) out << ',' << a;
    out << '\n';
  }
}

inline std::string metrics_text(const std::string& title, const ClassificationReport& r) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4);
  s << title << ": accuracy " << r.accuracy << ", weighted F1 " << r.weighted_f1 << "\n";
  s << "  class   precision recall  f1      support\n";
  for (int c = 0; c < kNumClasses; ++c) {
    const auto& m = r.per_class[c];
    s << "  " << std::left << std::setw(7) << fault_name(fault_from_index(c)) << std::right << ' ' << m.precision
      << "    " << m.recall << "  " << m.f1 << "  " << m.support << "\n";
  }
  return s.str();
}

inline EvalOutcome evaluate_checkpoint(const PipelineConfig& cfg, const EvalOptions& opt) {
  const nn::Checkpoint ck = nn::load_checkpoint(opt.checkpoint);
  if (ck.arch.frame_len != cfg.framing.frame_len) throw ConfigError("eval: checkpoint frame length mismatch");
  nn::FaultCnn1d<float> model = nn::model_from_checkpoint(ck);
  FramingConfig framing = cfg.framing;
  framing.eps = ck.standardize_eps;
  framing.n_max = ck.n_max;

  FrameSet test = load_frames(opt.test_data, framing);
  test.standardize(ck.stats, framing.eps);
  EvalOutcome o;
  o.test_frames = test.size();
  const EvalResult res = evaluate_frames(model, test);
  const auto labels = label_indices(test);
  o.cnn = confusion_and_f1(std::span<const int>(res.predictions), std::span<const int>(labels));
  if (opt.cross_speed)
    o.grid = cross_speed_accuracy(std::span<const int>(res.predictions), std::span<const int>(labels),
                                  std::span<const float>(test.rpms));
  if (opt.train_data) {
    FrameSet train_frames = load_frames(*opt.train_data, framing);
    train_frames.standardize(ck.stats, framing.eps);
    const auto split =
        stratified_split(std::span<const FaultClass>(train_frames.labels), cfg.train.val_fraction, cfg.train.seed);
    o.knn = knn_baseline(train_frames.subset(std::span<const std::size_t>(split.train)), test, cfg.eval.knn_k);
  }
  if (opt.severity_sweep) {
    SeveritySweepConfig sc;
    sc.severities = severity_grid(cfg.eval.severity_points, cfg.eval.severity_min, cfg.eval.severity_max);
    sc.speeds = cfg.test_speeds();
    sc.synth = cfg.sweep;
    sc.seed = cfg.eval.severity_seed;
    sc.framing = framing;
    o.severity = severity_sweep(model, ck.stats, sc, cfg.motor, cfg.threads);
  }
  if (opt.out_dir) {
    std::filesystem::create_directories(*opt.out_dir);
    write_confusion_csv(*opt.out_dir / "confusion.csv", o.cnn);
    std::ofstream summary(*opt.out_dir / "eval_summary.txt");
    summary << metrics_text("CNN", o.cnn);
    if (o.knn) {
      write_confusion_csv(*opt.out_dir / "knn_confusion.csv", *o.knn);
      summary << metrics_text("KNN (k=" + std::to_string(cfg.eval.knn_k) + ")", *o.knn);
    }
    if (o.grid) write_speed_grid_csv(*opt.out_dir / "cross_speed.csv", *o.grid);
    if (o.severity) write_severity_csv(*opt.out_dir / "severity.csv", *o.severity);
  }
  return o;
}

// ---------------------------------------------------------------------------
// bench

/// Latency on a synthesized healthy frame at 1500 rpm, standardized with the
/// checkpoint statistics.
inline LatencyStats bench_checkpoint(const PipelineConfig& cfg, const std::filesystem::path& checkpoint) {
  const nn::Checkpoint ck = nn::load_checkpoint(checkpoint);
  nn::FaultCnn1d<float> model = nn::model_from_checkpoint(ck);
  FaultScenario sc;
  sc.op = {1500.0, cfg.sweep.i_d, cfg.sweep.i_q};
  sc.n_samples = ck.arch.frame_len;
  sc.seed = 1;
  FramingConfig framing = cfg.framing;
  framing.frame_len = ck.arch.frame_len;
  framing.overlap = 0;
  framing.n_max = ck.n_max;
  FrameSet frames;
  frames.append_run(synthesize_run(sc, cfg.motor), framing);
  frames.standardize(ck.stats, ck.standardize_eps);
  return latency_benchmark(model, frames.frame(0), cfg.eval.latency_trials, cfg.eval.latency_warmup);
}

// ---------------------------------------------------------------------------
// infer

/// Reads a raw frame: one line per sample with the seven signal columns
/// torque,ia,ib,ic,va,vb,vc. An optional header line is skipped.
inline std::vector<double> read_raw_frame(const std::filesystem::path& path, std::size_t frame_len) {
  std::ifstream in(path);
  if (!in) throw DataError("frame: cannot open " + path.string());
  std::vector<double> channels_first(kSignalChannels * frame_len);
  std::string line;
  std::size_t t = 0, line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && std::string_view("+-.0123456789").find(line.front()) == std::string_view::npos) continue;
    if (t >= frame_len) throw DataError("frame: more than " + std::to_string(frame_len) + " samples");
    std::array<double, kSignalChannels> row{};
    std::string_view rest(line);
    for (int c = 0; c < kSignalChannels; ++c) {
      const std::size_t comma = rest.find(',');
      const std::string_view field = rest.substr(0, comma);
      const auto res = std::from_chars(field.data(), field.data() + field.size(), row[c]);
      if (res.ec != std::errc{} || res.ptr != field.data() + field.size())
        throw DataError("frame line " + std::to_string(line_no) + ": expected " + std::to_string(kSignalChannels) +
                        " numeric columns");
      if (c + 1 < kSignalChannels && comma == std::string_view::npos)
        throw DataError("frame line " + std::to_string(line_no) + ": too few columns");
      rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    }
    if (!rest.empty()) throw DataError("frame line " + std::to_string(line_no) + ": too many columns");
    for (int c = 0; c < kSignalChannels; ++c) channels_first[c * frame_len + t] = row[c];
    ++t;
  }
  if (t != frame_len)
    throw DataError("frame: expected " + std::to_string(frame_len) + " samples, found " + std::to_string(t));
  return channels_first;
}

struct InferResult {
  FaultClass predicted = FaultClass::None;
  std::array<double, kNumClasses> posteriors{};
};

inline InferResult infer_frame(const nn::Checkpoint& ck, std::span<const double> raw7, double rpm) {
  const std::size_t len = ck.arch.frame_len;
  if (raw7.size() != kSignalChannels * len)
    throw DataError("infer: frame must hold 7 x " + std::to_string(len) + " samples");
  if (!std::isfinite(rpm)) throw ConfigError("infer: rpm must be finite");
  std::vector<float> frame(kFrameChannels * len);
  for (std::size_t i = 0; i < raw7.size(); ++i) frame[i] = static_cast<float>(raw7[i]);
  std::fill(frame.begin() + static_cast<std::ptrdiff_t>(raw7.size()), frame.end(), static_cast<float>(rpm / ck.n_max));
  standardize_inplace(std::span<float>(frame), ck.stats, ck.standardize_eps);
  nn::FaultCnn1d<float> model = nn::model_from_checkpoint(ck);
  std::mt19937_64 unused(0);
  const std::size_t zero = 0;
  const auto& logits = model.forward_frames(std::span<const float>(frame), std::span<const std::size_t>(&zero, 1), unused);
  std::vector<double> z(logits.data.begin(), logits.data.end());
  const auto p = nn::softmax(std::span<const double>(z));
  InferResult r;
  std::copy(p.begin(), p.end(), r.posteriors.begin());
  r.predicted = fault_from_index(static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()));
  return r;
}

}  // namespace faultlab
