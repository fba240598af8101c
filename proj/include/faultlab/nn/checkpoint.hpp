#pragma once
// Binary checkpoint: magic, version, architecture header, FP32 parameter
// blobs in fixed order, then the input standardization statistics.
// Little-endian throughout.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "faultlab/error.hpp"
#include "faultlab/framing.hpp"
#include "faultlab/nn/model.hpp"

namespace faultlab::nn {

inline constexpr char kCheckpointMagic[8] = {'F', 'L', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Architecture arch;
  Parameters<float> params;
  ChannelStats stats;
  double standardize_eps = 1e-8;
  double n_max = 2700.0;
};

namespace detail {

template <class T>
void put(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError(std::string("checkpoint: truncated while reading ") + what);
  return v;
}

inline void put_blob(std::ostream& out, std::span<const float> blob) {
  put<std::uint64_t>(out, blob.size());
  out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size_bytes()));
}

inline void get_blob(std::istream& in, std::span<float> blob, const char* what) {
  if (get<std::uint64_t>(in, what) != blob.size())
    throw DataError(std::string("checkpoint: size mismatch for ") + what);
  in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(blob.size_bytes()));
  if (!in) throw DataError(std::string("checkpoint: truncated while reading ") + what);
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  const Architecture& a = ck.arch;
  for (std::size_t v : {a.in_channels, a.c1, a.k1, a.c2, a.k2, a.classes, a.frame_len})
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  for (double v : {a.dropout, a.bn_momentum, a.bn_eps}) detail::put<double>(out, v);
  const Parameters<float>& p = ck.params;
  detail::put<std::uint64_t>(out, p.bn1.tracked);
  detail::put<std::uint64_t>(out, p.bn2.tracked);
  detail::put_blob(out, p.conv1_w.span());
  for (const auto* v : {&p.bn1.gamma, &p.bn1.beta, &p.bn1.running_mean, &p.bn1.running_var}) detail::put_blob(out, *v);
  detail::put_blob(out, p.conv2_w.span());
  for (const auto* v : {&p.bn2.gamma, &p.bn2.beta, &p.bn2.running_mean, &p.bn2.running_var}) detail::put_blob(out, *v);
  detail::put_blob(out, p.fc_w.span());
  detail::put_blob(out, p.fc_b);
  for (double m : ck.stats.mean) detail::put<double>(out, m);
  for (double s : ck.stats.stddev) detail::put<double>(out, s);
  detail::put<double>(out, ck.standardize_eps);
  detail::put<double>(out, ck.n_max);
}

inline Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw DataError("checkpoint: bad magic");
  const auto version = detail::get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  Architecture& a = ck.arch;
  for (std::size_t* v : {&a.in_channels, &a.c1, &a.k1, &a.c2, &a.k2, &a.classes, &a.frame_len})
    *v = detail::get<std::uint32_t>(in, "architecture");
  for (double* v : {&a.dropout, &a.bn_momentum, &a.bn_eps}) *v = detail::get<double>(in, "architecture");
  if (a.in_channels != static_cast<std::size_t>(kFrameChannels) || a.classes != static_cast<std::size_t>(kNumClasses) ||
      a.k1 % 2 == 0 || a.k2 % 2 == 0 || a.frame_len == 0)
    throw DataError("checkpoint: unsupported architecture");
  ck.params = Parameters<float>(a);
  Parameters<float>& p = ck.params;
  p.bn1.tracked = detail::get<std::uint64_t>(in, "bn1.tracked");
  p.bn2.tracked = detail::get<std::uint64_t>(in, "bn2.tracked");
  detail::get_blob(in, p.conv1_w.span(), "conv1.w");
  detail::get_blob(in, p.bn1.gamma, "bn1.gamma");
  detail::get_blob(in, p.bn1.beta, "bn1.beta");
  detail::get_blob(in, p.bn1.running_mean, "bn1.running_mean");
  detail::get_blob(in, p.bn1.running_var, "bn1.running_var");
  detail::get_blob(in, p.conv2_w.span(), "conv2.w");
  detail::get_blob(in, p.bn2.gamma, "bn2.gamma");
  detail::get_blob(in, p.bn2.beta, "bn2.beta");
  detail::get_blob(in, p.bn2.running_mean, "bn2.running_mean");
  detail::get_blob(in, p.bn2.running_var, "bn2.running_var");
  detail::get_blob(in, p.fc_w.span(), "fc.w");
  detail::get_blob(in, p.fc_b, "fc.b");
  for (double& m : ck.stats.mean) m = detail::get<double>(in, "stats");
  for (double& s : ck.stats.stddev) s = detail::get<double>(in, "stats");
  ck.standardize_eps = detail::get<double>(in, "stats");
  ck.n_max = detail::get<double>(in, "stats");
  if (in.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint: trailing bytes");
  return ck;
}

/// Writes to `<path>.partial` and renames, so a failed save never leaves a torn file.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::filesystem::path partial = path;
  partial += ".partial";
  {
    std::ofstream out(partial, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("checkpoint: cannot open " + partial.string());
    write_checkpoint(out, ck);
    if (!out) throw DataError("checkpoint: write failure on " + partial.string());
  }
  std::filesystem::rename(partial, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path.string());
  return read_checkpoint(in);
}

inline Checkpoint make_checkpoint(const FaultCnn1d<float>& model, const ChannelStats& stats, double eps, double n_max) {
  return {model.architecture(), model.params(), stats, eps, n_max};
}

/// Installs checkpoint parameters into a model of the same architecture.
inline void restore(FaultCnn1d<float>& model, const Checkpoint& ck) {
  if (!(model.architecture() == ck.arch)) throw ConfigError("checkpoint: architecture mismatch");
  model.params() = ck.params;
}

inline FaultCnn1d<float> model_from_checkpoint(const Checkpoint& ck) {
  FaultCnn1d<float> model(ck.arch, 0);
  model.params() = ck.params;
  model.set_mode(Mode::Eval);
  return model;
}

}  // namespace faultlab::nn
