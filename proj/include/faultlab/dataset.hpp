#pragma once
// CSV persistence in the `rpm,fault,torque,ia,ib,ic,va,vb,vc` schema and the
// train/test speed partition.

#include <charconv>
#include <cmath>
#include <array>
#include <cstdio>
#include <limits>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "faultlab/error.hpp"
#include "faultlab/faults.hpp"
#include "faultlab/synth.hpp"

namespace faultlab {

inline constexpr std::string_view kCsvHeader = "rpm,fault,torque,ia,ib,ic,va,vb,vc";

struct DatasetRow {
  long rpm = 0;
  FaultClass fault = FaultClass::None;
  std::array<double, kSignalChannels> values{};
};

namespace detail {

inline void append_fixed6(std::string& out, double x) {
  char buf[64];
  // Avoid "-0.000000" so the text round-trips to a canonical value.
  if (std::abs(x) < 5e-7) x = 0.0;
  const auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::fixed, 6);
  if (res.ec != std::errc{}) throw NumericalError("csv: cannot format value");
  out.append(buf, res.ptr);
}

}  // namespace detail

/// Row-wise CSV writer. Output goes to `<path>.partial` and is renamed on
/// close(); a writer destroyed without close() removes the partial file.
class CsvWriter {
 public:
  explicit CsvWriter(std::filesystem::path path) : path_(std::move(path)), partial_(path_) {
    partial_ += ".partial";
    out_.open(partial_, std::ios::binary | std::ios::trunc);
    if (!out_) throw DataError("csv: cannot open " + partial_.string() + " for writing");
    buffer_.reserve(1 << 20);
    buffer_.append(kCsvHeader);
    buffer_.push_back('\n');
  }

  CsvWriter(const CsvWriter&) = delete;
  CsvWriter& operator=(const CsvWriter&) = delete;

  ~CsvWriter() {
    if (!closed_) {
      out_.close();
      std::error_code ec;
      std::filesystem::remove(partial_, ec);
    }
  }

  std::size_t write(const SignalRun& run) {
    const std::size_t n = run.size();
    char rpm_buf[32];
    const auto rpm_end = std::to_chars(rpm_buf, rpm_buf + sizeof rpm_buf, std::lround(run.rpm)).ptr;
    const std::string_view name = fault_name(run.fault);
    for (std::size_t k = 0; k < n; ++k) {
      buffer_.append(rpm_buf, rpm_end);
      buffer_.push_back(',');
      buffer_.append(name);
      for (int c = 0; c < kSignalChannels; ++c) {
        buffer_.push_back(',');
        detail::append_fixed6(buffer_, run.channels[c][k]);
      }
      buffer_.push_back('\n');
      if (buffer_.size() > (1u << 20)) flush();
    }
    rows_ += n;
    return n;
  }

  /// Finalizes the file and returns the number of data rows written.
  std::size_t close() {
    flush();
    out_.close();
    if (!out_) throw DataError("csv: write failure on " + partial_.string());
    std::filesystem::rename(partial_, path_);
    closed_ = true;
    return rows_;
  }

  std::size_t rows() const { return rows_; }

 private:
  void flush() {
    out_.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
    if (!out_) throw DataError("csv: write failure on " + partial_.string());
    buffer_.clear();
  }

  std::filesystem::path path_;
  std::filesystem::path partial_;
  std::ofstream out_;
  std::string buffer_;
  std::size_t rows_ = 0;
  bool closed_ = false;
};

inline std::size_t write_csv(const std::vector<SignalRun>& runs, const std::filesystem::path& path) {
  CsvWriter writer(path);
  for (const auto& run : runs) writer.write(run);
  return writer.close();
}

namespace detail {

inline DatasetRow parse_row(std::string_view line, std::size_t line_no) {
  DatasetRow row;
  const auto fail = [&](const std::string& why) {
    return DataError("csv line " + std::to_string(line_no) + ": " + why);
  };
  std::size_t pos = 0;
  const auto next_field = [&]() -> std::string_view {
    if (pos > line.size()) throw fail("too few columns");
    const std::size_t comma = line.find(',', pos);
    const std::size_t end = comma == std::string_view::npos ? line.size() : comma;
    const std::string_view field = line.substr(pos, end - pos);
    pos = end + 1;
    return field;
  };
  const std::string_view rpm = next_field();
  if (std::from_chars(rpm.data(), rpm.data() + rpm.size(), row.rpm).ec != std::errc{})
    throw fail("unparseable rpm '" + std::string(rpm) + "'");
  const std::string_view name = next_field();
  const auto fault = parse_fault(name);
  if (!fault) throw fail("unknown fault name '" + std::string(name) + "'");
  row.fault = *fault;
  for (int c = 0; c < kSignalChannels; ++c) {
    const std::string_view f = next_field();
    const auto res = std::from_chars(f.data(), f.data() + f.size(), row.values[c]);
    if (res.ec != std::errc{} || res.ptr != f.data() + f.size())
      throw fail("unparseable value '" + std::string(f) + "'");
  }
  if (pos <= line.size()) throw fail("too many columns");
  return row;
}

}  // namespace detail

/// Reads a dataset CSV and groups contiguous (rpm, fault) blocks into runs.
/// Returns the number of runs delivered to `sink`.
inline std::size_t read_csv(const std::filesystem::path& path, const std::function<void(SignalRun&&)>& sink) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("csv: empty file " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) throw DataError("csv: schema mismatch, header '" + line + "'");

  std::size_t runs = 0;
  SignalRun current;
  bool open = false;
  const auto emit = [&] {
    if (open) {
      sink(std::move(current));
      ++runs;
    }
    current = SignalRun{};
    open = false;
  };

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const DatasetRow row = detail::parse_row(line, line_no);
    if (open && (static_cast<double>(row.rpm) != current.rpm || row.fault != current.fault)) emit();
    if (!open) {
      current.rpm = static_cast<double>(row.rpm);
      current.fault = row.fault;
      current.severity = std::numeric_limits<double>::quiet_NaN();
      open = true;
    }
    for (int c = 0; c < kSignalChannels; ++c) current.channels[c].push_back(row.values[c]);
  }
  emit();
  return runs;
}

inline std::vector<SignalRun> read_csv(const std::filesystem::path& path) {
  std::vector<SignalRun> runs;
  read_csv(path, [&](SignalRun&& r) { runs.push_back(std::move(r)); });
  return runs;
}

/// Train speeds are the full grid; test speeds are the grid midpoints, which
/// never enter optimization.
struct SpeedSplit {
  std::vector<double> train_speeds;
  std::vector<double> test_speeds;
  double val_fraction = 0.2;
};

inline SpeedSplit make_speed_split(double grid_step, double n_max, double val_fraction = 0.2) {
  require(grid_step > 0.0 && n_max > 0.0, "speed split: grid_step and n_max must be > 0");
  const double ratio = n_max / grid_step;
  require(std::abs(ratio - std::round(ratio)) < 1e-9, "speed split: grid_step must divide n_max");
  require(val_fraction > 0.0 && val_fraction < 1.0, "speed split: val_fraction must lie in (0, 1)");
  SpeedSplit split;
  split.train_speeds = speed_grid(grid_step, n_max);
  for (std::size_t k = 0; k + 1 < split.train_speeds.size(); ++k)
    split.test_speeds.push_back(0.5 * (split.train_speeds[k] + split.train_speeds[k + 1]));
  split.val_fraction = val_fraction;
  return split;
}

}  // namespace faultlab
