#include "timflow/heuristic.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <vector>

#include "timflow/error.hpp"

namespace timflow {

namespace {

// Mutable relaxation state on a (possibly padded) H x W buffer. Sweeps only
// visit cells above the current level; cells below it shed nothing, so the
// result equals a full synchronous sweep. Each receiving cell gathers
// (up + down) + (left + right), which commutes with mirrors and quarter
// turns, so symmetric inputs stay exactly symmetric.
class Relaxer {
 public:
  Relaxer(std::size_t height, std::size_t width, std::vector<double> amounts, bool allow_exit,
          std::size_t max_sweeps, double settle_tolerance)
      : h_(height),
        w_(width),
        cells_(std::move(amounts)),
        shed_(cells_.size(), 0.0),
        mark_(cells_.size(), 0),
        allow_exit_(allow_exit),
        max_sweeps_(max_sweeps),
        settle_tolerance_(settle_tolerance) {}

  double max() const { return *std::max_element(cells_.begin(), cells_.end()); }

  // A level is settled once no cell exceeds it by more than
  // settle_tolerance * level. Without the slack, sub-ulp quarters can
  // round back up into a checkerboard cycle that never drains.
  void relax(double level) {
    const double ceiling = level + level * settle_tolerance_;
    active_.clear();
    for (std::size_t i = 0; i < cells_.size(); ++i)
      if (cells_[i] > ceiling) active_.push_back(static_cast<std::uint32_t>(i));

    std::size_t level_sweeps = 0;
    while (!active_.empty()) {
      if (++level_sweeps > max_sweeps_) {
        throw Error(ErrorKind::NonConvergence,
                    "no fixed point after " + std::to_string(max_sweeps_) + " sweeps");
      }
      ++sweeps_;
      touched_.clear();
      for (std::uint32_t idx : active_) {
        const double diff = cells_[idx] - level;
        cells_[idx] -= diff;
        const double quarter = diff / 4;
        shed_[idx] = quarter;
        const std::size_t r = idx / w_;
        const std::size_t c = idx % w_;
        receive(r > 0, idx - w_, quarter);
        receive(r + 1 < h_, idx + w_, quarter);
        receive(c > 0, idx - 1, quarter);
        receive(c + 1 < w_, idx + 1, quarter);
      }
      for (std::uint32_t idx : touched_) {
        const std::size_t r = idx / w_;
        const std::size_t c = idx % w_;
        const double up = r > 0 ? shed_[idx - w_] : 0.0;
        const double down = r + 1 < h_ ? shed_[idx + w_] : 0.0;
        const double left = c > 0 ? shed_[idx - 1] : 0.0;
        const double right = c + 1 < w_ ? shed_[idx + 1] : 0.0;
        incoming_.push_back((up + down) + (left + right));
      }
      for (std::size_t k = 0; k < touched_.size(); ++k) cells_[touched_[k]] += incoming_[k];
      incoming_.clear();
      for (std::uint32_t idx : active_) shed_[idx] = 0.0;

      // Next active set: previously active or newly fed cells above level.
      next_.clear();
      for (std::uint32_t idx : active_) {
        if (cells_[idx] > ceiling) {
          next_.push_back(idx);
          mark_[idx] = 2;
        }
      }
      for (std::uint32_t idx : touched_) {
        if (mark_[idx] != 2 && cells_[idx] > ceiling) next_.push_back(idx);
      }
      for (std::uint32_t idx : touched_) mark_[idx] = 0;
      for (std::uint32_t idx : next_) mark_[idx] = 0;
      std::sort(next_.begin(), next_.end());
      active_.swap(next_);
    }
  }

  std::size_t sweeps() const { return sweeps_; }
  double exited() const { return exited_; }
  const std::vector<double>& cells() const { return cells_; }

 private:
  void receive(bool inside, std::size_t target, double quarter) {
    if (!inside) {
      if (!allow_exit_) {
        throw Error(ErrorKind::MassOverflow, "excess mass would leave the grid; add margin");
      }
      exited_ += quarter;
      return;
    }
    if (mark_[target] == 0) {
      mark_[target] = 1;
      touched_.push_back(static_cast<std::uint32_t>(target));
    }
  }

  std::size_t h_;
  std::size_t w_;
  std::vector<double> cells_;
  std::vector<double> shed_;
  std::vector<std::uint8_t> mark_;
  std::vector<std::uint32_t> active_;
  std::vector<std::uint32_t> next_;
  std::vector<std::uint32_t> touched_;
  std::vector<double> incoming_;
  bool allow_exit_;
  std::size_t max_sweeps_;
  double settle_tolerance_;
  std::size_t sweeps_ = 0;
  double exited_ = 0.0;
};

void check_finite(const TimGrid& grid) {
  for (double a : grid.amounts()) {
    if (!std::isfinite(a)) throw Error(ErrorKind::NonFiniteInput, "grid contains non-finite amounts");
  }
}

double parse_number(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::InvalidArgument, "bad " + what + " '" + text + "'");
  }
}

}  // namespace

void CompressionConfig::validate() const {
  if (!(termination_height > 0.0) || !std::isfinite(termination_height)) {
    throw Error(ErrorKind::InvalidArgument, "termination height must be positive");
  }
  if (const auto* lin = std::get_if<LinearSteps>(&schedule); lin && lin->steps < 1) {
    throw Error(ErrorKind::InvalidArgument, "linear schedule needs at least one step");
  }
  if (const auto* mul = std::get_if<Multiplicative>(&schedule);
      mul && !(mul->factor > 0.0 && mul->factor < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "multiplicative factor must lie in (0, 1)");
  }
  if (max_sweeps < 1) throw Error(ErrorKind::InvalidArgument, "max_sweeps must be positive");
  if (!(settle_tolerance >= 0.0 && settle_tolerance < 1e-6)) {
    throw Error(ErrorKind::InvalidArgument, "settle tolerance must lie in [0, 1e-6)");
  }
}

CompressionResult compress(const TimGrid& initial, const CompressionConfig& config) {
  config.validate();
  check_finite(initial);

  const auto* crop = std::get_if<CropAndReport>(&config.boundary);
  const std::size_t margin = crop ? crop->margin : 0;
  const std::size_t H = initial.height() + 2 * margin;
  const std::size_t W = initial.width() + 2 * margin;
  std::vector<double> padded(H * W, 0.0);
  for (std::size_t r = 0; r < initial.height(); ++r)
    for (std::size_t c = 0; c < initial.width(); ++c)
      padded[(r + margin) * W + c + margin] = initial(r, c);

  Relaxer relaxer(H, W, std::move(padded), crop != nullptr, config.max_sweeps,
                  config.settle_tolerance);
  const double term = config.termination_height;
  const double start = relaxer.max();
  double level = start;
  std::size_t levels = 0;

  while (level > term) {
    ++levels;
    level = std::visit(
        [&](const auto& s) -> double {
          using S = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<S, SingleStep>) {
            return term;
          } else if constexpr (std::is_same_v<S, LinearSteps>) {
            if (levels >= static_cast<std::size_t>(s.steps)) return term;
            const double step = (start - term) / s.steps;
            return std::max(term, start - static_cast<double>(levels) * step);
          } else {
            return std::max(term, level * s.factor);
          }
        },
        config.schedule);
    relaxer.relax(level);
  }

  CompressionResult result;
  result.iterations = levels;
  result.sweeps = relaxer.sweeps();
  result.off_grid_mass = relaxer.exited();

  const auto& cells = relaxer.cells();
  std::vector<double> out(initial.size());
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      const double v = cells[r * W + c];
      const bool inside = r >= margin && r < margin + initial.height() && c >= margin &&
                          c < margin + initial.width();
      if (inside) {
        out[(r - margin) * initial.width() + (c - margin)] = v;
      } else {
        result.off_grid_mass += v;
      }
    }
  }
  result.compressed = TimGrid(initial.height(), initial.width(), std::move(out));
  result.overflowed = result.off_grid_mass > 0.0;
  return result;
}

TimGrid inner_relax(const TimGrid& grid, double h_art, std::size_t max_sweeps,
                    double settle_tolerance) {
  if (!(h_art > 0.0)) throw Error(ErrorKind::InvalidArgument, "artificial height must be positive");
  check_finite(grid);
  Relaxer relaxer(grid.height(), grid.width(),
                  std::vector<double>(grid.amounts().begin(), grid.amounts().end()), false, max_sweeps,
                  settle_tolerance);
  relaxer.relax(h_art);
  return TimGrid(grid.height(), grid.width(), relaxer.cells());
}

Schedule parse_schedule(const std::string& text) {
  if (text == "single") return SingleStep{};
  const auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
  if (head == "linear") {
    if (arg.empty()) return LinearSteps{};
    const double k = parse_number(arg, "step count");
    if (k != std::floor(k) || k < 1 || k > 1e9) {
      throw Error(ErrorKind::InvalidArgument, "linear step count must be a positive integer");
    }
    return LinearSteps{static_cast<int>(k)};
  }
  if (head == "mult") {
    if (arg.empty()) return Multiplicative{};
    const double f = parse_number(arg, "factor");
    if (!(f > 0.0 && f < 1.0)) throw Error(ErrorKind::InvalidArgument, "factor must lie in (0, 1)");
    return Multiplicative{f};
  }
  throw Error(ErrorKind::InvalidArgument,
              "unknown schedule '" + text + "' (expected single, linear:K or mult:F)");
}

std::string to_string(const Schedule& schedule) {
  return std::visit(
      [](const auto& s) -> std::string {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, SingleStep>) {
          return "single";
        } else if constexpr (std::is_same_v<S, LinearSteps>) {
          return "linear:" + std::to_string(s.steps);
        } else {
          char buf[64];
          auto [end, ec] = std::to_chars(buf, buf + sizeof buf, s.factor);
          return "mult:" + std::string(buf, end);
        }
      },
      schedule);
}

BoundaryPolicy parse_boundary(const std::string& text) {
  if (text == "error") return ErrorOnOverflow{};
  if (text.rfind("crop", 0) == 0) {
    if (text == "crop") return CropAndReport{};
    if (text.size() > 5 && text[4] == ':') {
      const double m = parse_number(text.substr(5), "margin");
      if (m == std::floor(m) && m >= 0 && m <= 4096) return CropAndReport{static_cast<std::size_t>(m)};
    }
  }
  throw Error(ErrorKind::InvalidArgument, "unknown boundary '" + text + "' (expected error or crop:M)");
}

std::string to_string(const BoundaryPolicy& boundary) {
  if (const auto* crop = std::get_if<CropAndReport>(&boundary)) {
    return "crop:" + std::to_string(crop->margin);
  }
  return "error";
}

}  // namespace timflow
