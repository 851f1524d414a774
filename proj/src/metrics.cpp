#include "timflow/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "timflow/error.hpp"

namespace timflow {

namespace {

void check_same_shape(const TimGrid& a, const TimGrid& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw Error(ErrorKind::ShapeMismatch, "grids have different resolutions");
  }
}

std::mutex& benchmark_mutex() {
  static std::mutex m;
  return m;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double error_abs(const TimGrid& a, const TimGrid& b) {
  check_same_shape(a, b);
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a.amounts()[i] - b.amounts()[i]);
  return total;
}

double error_rel(const TimGrid& a, const TimGrid& b) {
  check_same_shape(a, b);
  const double reference = a.sum();
  if (!(reference > 0.0)) throw Error(ErrorKind::ZeroReference, "reference grid holds no material");
  return error_abs(a, b) / reference;
}

ErrorSummary summarize_errors(std::span<const std::pair<TimGrid, TimGrid>> pairs) {
  if (pairs.empty()) throw Error(ErrorKind::EmptyList, "no grid pairs to compare");
  ErrorSummary s;
  for (const auto& [a, b] : pairs) {
    s.e_comp.push_back(error_abs(a, b));
    s.e_rel.push_back(error_rel(a, b));
  }
  s.mean_rel = std::accumulate(s.e_rel.begin(), s.e_rel.end(), 0.0) / static_cast<double>(s.e_rel.size());
  return s;
}

double error_mean(std::span<const std::pair<TimGrid, TimGrid>> pairs) {
  return summarize_errors(pairs).mean_rel;
}

double monotonic_seconds() {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count();
}

TimingSummary summarize_timings(std::vector<std::vector<double>> runs) {
  if (runs.empty()) throw Error(ErrorKind::EmptyList, "no patterns timed");
  TimingSummary s;
  s.n_runs = runs.front().size();
  for (const auto& r : runs) {
    if (r.empty()) throw Error(ErrorKind::EmptyList, "pattern without runs");
    s.t_min.push_back(*std::min_element(r.begin(), r.end()));
  }
  const auto n = static_cast<double>(s.t_min.size());
  s.mean = std::accumulate(s.t_min.begin(), s.t_min.end(), 0.0) / n;
  if (s.t_min.size() > 1) {
    double ss = 0.0;
    for (double t : s.t_min) ss += (t - s.mean) * (t - s.mean);
    s.stddev = std::sqrt(ss / (n - 1.0));
  }
  s.runs = std::move(runs);
  return s;
}

TimingSummary benchmark_time(const std::function<void(std::size_t)>& subject, std::size_t n_patterns,
                             std::size_t n_runs, const Clock& clock) {
  if (n_patterns == 0) throw Error(ErrorKind::EmptyList, "no patterns to benchmark");
  if (n_runs == 0) throw Error(ErrorKind::InvalidArgument, "n_runs must be positive");

  std::lock_guard lock(benchmark_mutex());
  std::vector<std::vector<double>> runs(n_patterns);
  std::exception_ptr failure;
  std::thread worker([&] {
    for (std::size_t p = 0; p < n_patterns; ++p) {
      runs[p].reserve(n_runs);
      for (std::size_t r = 0; r < n_runs; ++r) {
        try {
          const double t0 = clock();
          subject(p);
          const double t1 = clock();
          runs[p].push_back(t1 - t0);
        } catch (const std::exception& e) {
          failure = std::make_exception_ptr(
              Error(ErrorKind::SubjectFailed, "pattern " + std::to_string(p) + ": " + e.what()));
          return;
        }
      }
    }
  });
  worker.join();
  if (failure) std::rethrow_exception(failure);
  return summarize_timings(std::move(runs));
}

CellMask CellMask::full(const GridSpec& spec) {
  return {spec.height, spec.width, std::vector<std::uint8_t>(spec.height * spec.width, 1)};
}

CellMask CellMask::rect(const GridSpec& spec, std::size_t row0, std::size_t col0, std::size_t row1,
                        std::size_t col1) {
  CellMask m{spec.height, spec.width, std::vector<std::uint8_t>(spec.height * spec.width, 0)};
  for (std::size_t r = row0; r < std::min(row1, spec.height); ++r)
    for (std::size_t c = col0; c < std::min(col1, spec.width); ++c) m.selected[r * spec.width + c] = 1;
  return m;
}

std::size_t CellMask::count() const {
  return static_cast<std::size_t>(std::count(selected.begin(), selected.end(), std::uint8_t{1}));
}

double coverage_ratio(const TimGrid& grid, const CellMask& region, double threshold) {
  if (region.height != grid.height() || region.width != grid.width()) {
    throw Error(ErrorKind::ShapeMismatch, "mask and grid resolutions differ");
  }
  std::size_t selected = 0;
  std::size_t covered = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!region.selected[i]) continue;
    ++selected;
    if (grid.amounts()[i] >= threshold) ++covered;
  }
  if (selected == 0) throw Error(ErrorKind::EmptyRegion, "coverage region selects no cells");
  return static_cast<double>(covered) / static_cast<double>(selected);
}

std::vector<Region> detect_voids(const TimGrid& grid, double threshold) {
  const std::size_t H = grid.height();
  const std::size_t W = grid.width();
  // 0 = material, 1 = unvisited gap, 2 = reached
  std::vector<std::uint8_t> state(H * W);
  for (std::size_t i = 0; i < H * W; ++i) state[i] = grid.amounts()[i] < threshold ? 1 : 0;

  std::deque<std::size_t> queue;
  auto flood = [&](std::size_t start, Region* collect) {
    state[start] = 2;
    queue.push_back(start);
    while (!queue.empty()) {
      const std::size_t idx = queue.front();
      queue.pop_front();
      const std::size_t r = idx / W;
      const std::size_t c = idx % W;
      if (collect) collect->push_back({r, c});
      auto visit = [&](std::size_t n) {
        if (state[n] == 1) {
          state[n] = 2;
          queue.push_back(n);
        }
      };
      if (r > 0) visit(idx - W);
      if (r + 1 < H) visit(idx + W);
      if (c > 0) visit(idx - 1);
      if (c + 1 < W) visit(idx + 1);
    }
  };

  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      const bool border = r == 0 || c == 0 || r + 1 == H || c + 1 == W;
      if (border && state[r * W + c] == 1) flood(r * W + c, nullptr);
    }
  }

  std::vector<Region> voids;
  for (std::size_t i = 0; i < H * W; ++i) {
    if (state[i] != 1) continue;
    Region region;
    flood(i, &region);
    std::sort(region.begin(), region.end(), [](const Cell& a, const Cell& b) {
      return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    voids.push_back(std::move(region));
  }
  return voids;
}

std::string report_csv(std::span<const PatternRow> rows) {
  std::string out = "pattern_id,e_comp,e_rel,t_min\n";
  for (const PatternRow& r : rows) {
    out += std::to_string(r.pattern_id) + "," + format_double(r.e_comp) + "," + format_double(r.e_rel) +
           "," + format_double(r.t_min) + "\n";
  }
  return out;
}

nlohmann::json report_json(std::span<const MethodSummary> methods) {
  nlohmann::json rows = nlohmann::json::array();
  for (const MethodSummary& m : methods) {
    nlohmann::json row;
    row["method"] = m.method;
    row["mean_relative_error"] =
        m.mean_relative_error ? nlohmann::json(*m.mean_relative_error) : nlohmann::json(nullptr);
    row["setup_time"] = "n/a";
    row["computation_time"] = {{"mean", m.time_mean}, {"std", m.time_std}};
    row["n_pat"] = m.n_pat;
    row["n_runs"] = m.n_runs;
    rows.push_back(std::move(row));
  }
  return {{"rows", std::move(rows)}};
}

std::string report_table(std::span<const MethodSummary> methods) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %22s %12s %28s\n", "method", "mean relative error",
                "setup time", "computation time [s]");
  out += line;
  for (const MethodSummary& m : methods) {
    char err[32] = "-";
    if (m.mean_relative_error) std::snprintf(err, sizeof err, "%.2f %%", 100.0 * *m.mean_relative_error);
    std::snprintf(line, sizeof line, "%-12s %22s %12s %13.6f +- %-12.6f\n", m.method.c_str(), err, "n/a",
                  m.time_mean, m.time_std);
    out += line;
  }
  return out;
}

}  // namespace timflow
