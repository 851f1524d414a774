#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "timflow/grid.hpp"

namespace timflow {

/// Sum of absolute cell differences between two compressed states.
double error_abs(const TimGrid& a, const TimGrid& b);
/// error_abs(a, b) / sum(a); `a` is the reference. Throws ZeroReference.
double error_rel(const TimGrid& a, const TimGrid& b);
/// Mean of error_rel over (reference, candidate) pairs. Throws EmptyList.
double error_mean(std::span<const std::pair<TimGrid, TimGrid>> pairs);

struct ErrorSummary {
  std::vector<double> e_comp;
  std::vector<double> e_rel;
  double mean_rel = 0.0;
};
ErrorSummary summarize_errors(std::span<const std::pair<TimGrid, TimGrid>> pairs);

/// Monotonic clock in seconds; injectable for tests.
using Clock = std::function<double()>;
double monotonic_seconds();

struct TimingSummary {
  std::vector<std::vector<double>> runs;  // [pattern][run]
  std::vector<double> t_min;              // per pattern
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation (N - 1), 0 for one pattern
  std::size_t n_runs = 0;
};

/// Minimum per pattern, then mean and sample standard deviation across
/// patterns.
TimingSummary summarize_timings(std::vector<std::vector<double>> runs);

/// Times subject(pattern_index) n_runs times for each pattern on a dedicated
/// thread and keeps the per-pattern minimum. Only the call is timed, so any
/// setup belongs outside the subject. Benchmarks within one process are
/// serialized. A throwing subject aborts with SubjectFailed naming the
/// pattern index.
TimingSummary benchmark_time(const std::function<void(std::size_t)>& subject, std::size_t n_patterns,
                             std::size_t n_runs = 10, const Clock& clock = monotonic_seconds);

/// Row-major cell selection of a grid.
struct CellMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> selected;

  static CellMask full(const GridSpec& spec);
  /// Rows [row0, row1) x cols [col0, col1).
  static CellMask rect(const GridSpec& spec, std::size_t row0, std::size_t col0, std::size_t row1,
                       std::size_t col1);
  std::size_t count() const;
};

/// Default coverage/void threshold as a fraction of the termination height.
inline constexpr double kDefaultThresholdFraction = 1e-3;

/// Fraction of selected cells whose amount is >= threshold.
double coverage_ratio(const TimGrid& grid, const CellMask& region, double threshold);

struct Cell {
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const Cell&) const = default;
};
using Region = std::vector<Cell>;

/// Below-threshold 4-connected components that cannot be reached from the
/// grid border. Regions are listed in row-major order of their first cell,
/// and cells within a region are row-major.
std::vector<Region> detect_voids(const TimGrid& grid, double threshold);

struct PatternRow {
  std::size_t pattern_id = 0;
  double e_comp = 0.0;
  double e_rel = 0.0;
  double t_min = 0.0;
};

/// "pattern_id,e_comp,e_rel,t_min" with round-trip precision.
std::string report_csv(std::span<const PatternRow> rows);

struct MethodSummary {
  std::string method;
  std::optional<double> mean_relative_error;
  double time_mean = 0.0;
  double time_std = 0.0;
  std::size_t n_pat = 0;
  std::size_t n_runs = 0;
};

/// {"rows": [{method, mean_relative_error, setup_time: "n/a",
///            computation_time: {mean, std}, n_pat, n_runs}]}
nlohmann::json report_json(std::span<const MethodSummary> methods);
/// Fixed-width text table in the same column order.
std::string report_table(std::span<const MethodSummary> methods);

}  // namespace timflow
