#pragma once
// Sliding-window segmentation, RPM channel augmentation and per-channel
// standardization of signal runs.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "faultlab/error.hpp"
#include "faultlab/faults.hpp"
#include "faultlab/synth.hpp"

namespace faultlab {

inline constexpr int kFrameChannels = 8;

struct FramingConfig {
  std::size_t frame_len = 1000;  // T_f
  std::size_t overlap = 200;     // T_ov
  double n_max = 2700.0;
  double eps = 1e-8;

  std::size_t hop() const { return frame_len - overlap; }

  void validate() const {
    require(frame_len >= 1, "framing: frame_len must be >= 1");
    require(overlap < frame_len, "framing: overlap must be < frame_len");
    require(n_max > 0.0, "framing: n_max must be > 0");
    require(eps > 0.0, "framing: eps must be > 0");
  }
};

inline std::size_t frame_count(std::size_t n_samples, std::size_t frame_len, std::size_t hop) {
  if (n_samples < frame_len) return 0;
  return (n_samples - frame_len) / hop + 1;
}

/// Frame k covers samples [k*hop, k*hop + frame_len). Each returned frame is
/// 7 x frame_len, channels-first. A trailing partial window is dropped.
inline std::vector<std::vector<double>> segment_frames(const SignalRun& run, const FramingConfig& cfg) {
  cfg.validate();
  const std::size_t count = frame_count(run.size(), cfg.frame_len, cfg.hop());
  std::vector<std::vector<double>> frames(count, std::vector<double>(kSignalChannels * cfg.frame_len));
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t start = k * cfg.hop();
    for (int c = 0; c < kSignalChannels; ++c)
      std::copy_n(run.channels[c].begin() + static_cast<std::ptrdiff_t>(start), cfg.frame_len,
                  frames[k].begin() + static_cast<std::ptrdiff_t>(c * cfg.frame_len));
  }
  return frames;
}

/// Appends the constant channel rpm / n_max (signed).
template <class T>
std::vector<T> append_rpm_channel(std::span<const T> frame7, double rpm, double n_max) {
  require(n_max > 0.0, "append_rpm_channel: n_max must be > 0");
  require(frame7.size() % kSignalChannels == 0, "append_rpm_channel: frame is not 7-channel");
  const std::size_t len = frame7.size() / kSignalChannels;
  std::vector<T> out(frame7.begin(), frame7.end());
  out.resize(kFrameChannels * len, static_cast<T>(rpm / n_max));
  return out;
}

struct ChannelStats {
  std::array<double, kFrameChannels> mean{};
  std::array<double, kFrameChannels> stddev{};
};

/// Pooled per-channel mean and population standard deviation over frames
/// stored contiguously as [frame][channel][time].
template <class T>
ChannelStats fit_stats(std::span<const T> frames, std::size_t frame_len) {
  require(frame_len > 0, "fit_stats: frame_len must be > 0");
  const std::size_t stride = kFrameChannels * frame_len;
  if (frames.empty() || frames.size() % stride != 0) throw DataError("fit_stats: empty or ragged training set");
  const std::size_t count = frames.size() / stride;
  // Two passes for a well-conditioned variance; per-frame partial sums keep the
  // combination order fixed.
  ChannelStats s;
  const double n = static_cast<double>(count * frame_len);
  for (int c = 0; c < kFrameChannels; ++c) {
    double sum = 0.0;
    for (std::size_t f = 0; f < count; ++f) {
      const T* x = frames.data() + f * stride + c * frame_len;
      double partial = 0.0;
      for (std::size_t t = 0; t < frame_len; ++t) partial += x[t];
      sum += partial;
    }
    const double mu = sum / n;
    double sq = 0.0;
    for (std::size_t f = 0; f < count; ++f) {
      const T* x = frames.data() + f * stride + c * frame_len;
      double partial = 0.0;
      for (std::size_t t = 0; t < frame_len; ++t) {
        const double d = x[t] - mu;
        partial += d * d;
      }
      sq += partial;
    }
    s.mean[c] = mu;
    s.stddev[c] = std::sqrt(sq / n);
  }
  return s;
}

/// x_hat = (x - mean) / (stddev + eps), per channel, in place.
template <class T>
void standardize_inplace(std::span<T> frame, const ChannelStats& stats, double eps) {
  require(frame.size() % kFrameChannels == 0, "standardize: frame is not 8-channel");
  const std::size_t len = frame.size() / kFrameChannels;
  for (int c = 0; c < kFrameChannels; ++c) {
    const double scale = 1.0 / (stats.stddev[c] + eps);
    T* x = frame.data() + c * len;
    for (std::size_t t = 0; t < len; ++t) x[t] = static_cast<T>((x[t] - stats.mean[c]) * scale);
  }
}

template <class T>
struct FrameTensor {
  std::vector<T> values;  // 8 x frame_len, channels-first
  FaultClass label = FaultClass::None;
  double rpm = 0.0;
};

template <class T>
FrameTensor<T> standardize(std::span<const T> frame8, const ChannelStats& stats, double eps, FaultClass label,
                           double rpm) {
  FrameTensor<T> out{std::vector<T>(frame8.begin(), frame8.end()), label, rpm};
  standardize_inplace(std::span<T>(out.values), stats, eps);
  for (T x : out.values)
    if (!std::isfinite(static_cast<double>(x))) throw NumericalError("standardize: non-finite value");
  return out;
}

/// Contiguous FP32 frame storage for training and evaluation.
struct FrameSet {
  std::size_t frame_len = 1000;
  std::vector<float> values;  // [frame][channel][time]
  std::vector<FaultClass> labels;
  std::vector<float> rpms;

  std::size_t size() const { return labels.size(); }
  std::size_t stride() const { return kFrameChannels * frame_len; }
  std::span<const float> frame(std::size_t i) const { return {values.data() + i * stride(), stride()}; }
  std::span<float> frame(std::size_t i) { return {values.data() + i * stride(), stride()}; }

  /// Segments `run` and appends raw (unstandardized) 8-channel frames.
  void append_run(const SignalRun& run, const FramingConfig& cfg) {
    frame_len = cfg.frame_len;
    const std::size_t count = frame_count(run.size(), cfg.frame_len, cfg.hop());
    const float rpm_value = static_cast<float>(run.rpm / cfg.n_max);
    values.reserve(values.size() + count * stride());
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t start = k * cfg.hop();
      for (int c = 0; c < kSignalChannels; ++c)
        for (std::size_t t = 0; t < cfg.frame_len; ++t) values.push_back(static_cast<float>(run.channels[c][start + t]));
      values.insert(values.end(), cfg.frame_len, rpm_value);
      labels.push_back(run.fault);
      rpms.push_back(static_cast<float>(run.rpm));
    }
  }

  void push_back(std::span<const float> frame8, FaultClass label, float rpm) {
    require(frame8.size() == stride(), "FrameSet: frame size mismatch");
    values.insert(values.end(), frame8.begin(), frame8.end());
    labels.push_back(label);
    rpms.push_back(rpm);
  }

  FrameSet subset(std::span<const std::size_t> indices) const {
    FrameSet out;
    out.frame_len = frame_len;
    out.values.reserve(indices.size() * stride());
    for (std::size_t i : indices) out.push_back(frame(i), labels[i], rpms[i]);
    return out;
  }

  void standardize(const ChannelStats& stats, double eps) {
    for (std::size_t i = 0; i < size(); ++i) standardize_inplace(frame(i), stats, eps);
  }
};

namespace detail {

inline constexpr char kFrameMagic[8] = {'F', 'L', 'F', 'R', 'A', 'M', 'E', 'S'};
inline constexpr std::uint32_t kFrameVersion = 1;

template <class T>
void write_le(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_le(std::istream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError(std::string("truncated file while reading ") + what);
  return v;
}

}  // namespace detail

/// Frame cache: magic, version, count, channels, frame_len, stats (f64), then
/// per-frame label (i32), rpm (f32) and values (f32), little-endian.
inline void save_frame_cache(const std::filesystem::path& path, const FrameSet& set, const ChannelStats& stats) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("frame cache: cannot open " + path.string());
  out.write(detail::kFrameMagic, sizeof detail::kFrameMagic);
  detail::write_le<std::uint32_t>(out, detail::kFrameVersion);
  detail::write_le<std::uint64_t>(out, set.size());
  detail::write_le<std::uint32_t>(out, kFrameChannels);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.frame_len));
  for (double m : stats.mean) detail::write_le(out, m);
  for (double s : stats.stddev) detail::write_le(out, s);
  for (std::size_t i = 0; i < set.size(); ++i) {
    detail::write_le<std::int32_t>(out, fault_index(set.labels[i]));
    detail::write_le<float>(out, set.rpms[i]);
    const auto f = set.frame(i);
    out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size_bytes()));
  }
  if (!out) throw DataError("frame cache: write failure on " + path.string());
}

inline std::pair<FrameSet, ChannelStats> load_frame_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("frame cache: cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, detail::kFrameMagic, sizeof magic) != 0) throw DataError("frame cache: bad magic");
  if (detail::read_le<std::uint32_t>(in, "version") != detail::kFrameVersion)
    throw DataError("frame cache: unsupported version");
  const auto count = detail::read_le<std::uint64_t>(in, "count");
  if (detail::read_le<std::uint32_t>(in, "channels") != kFrameChannels)
    throw DataError("frame cache: channel count mismatch");
  FrameSet set;
  set.frame_len = detail::read_le<std::uint32_t>(in, "frame_len");
  ChannelStats stats;
  for (double& m : stats.mean) m = detail::read_le<double>(in, "stats");
  for (double& s : stats.stddev) s = detail::read_le<double>(in, "stats");
  set.values.resize(count * set.stride());
  for (std::size_t i = 0; i < count; ++i) {
    set.labels.push_back(fault_from_index(detail::read_le<std::int32_t>(in, "label")));
    set.rpms.push_back(detail::read_le<float>(in, "rpm"));
    auto f = set.frame(i);
    in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(f.size_bytes()));
    if (!in) throw DataError("frame cache: truncated frame data");
  }
  return {std::move(set), stats};
}

}  // namespace faultlab
