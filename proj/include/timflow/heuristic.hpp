#pragma once

#include <cstddef>
#include <string>
#include <variant>

#include "timflow/grid.hpp"

namespace timflow {

// Height-reduction schedules for the artificial height.
struct SingleStep {
  bool operator==(const SingleStep&) const = default;
};
struct LinearSteps {
  int steps = 50;
  bool operator==(const LinearSteps&) const = default;
};
struct Multiplicative {
  double factor = 0.95;
  bool operator==(const Multiplicative&) const = default;
};
using Schedule = std::variant<SingleStep, LinearSteps, Multiplicative>;

struct ErrorOnOverflow {
  bool operator==(const ErrorOnOverflow&) const = default;
};
/// Relaxes on a grid padded by `margin` cells per side, then crops back.
/// Mass that leaves the padded grid or rests in the margin is reported as
/// off-grid mass.
struct CropAndReport {
  std::size_t margin = 0;
  bool operator==(const CropAndReport&) const = default;
};
using BoundaryPolicy = std::variant<ErrorOnOverflow, CropAndReport>;

struct CompressionConfig {
  double termination_height = 1.0;
  Schedule schedule = Multiplicative{};
  BoundaryPolicy boundary = ErrorOnOverflow{};
  /// Cap on synchronous sweeps within one artificial-height level.
  std::size_t max_sweeps = 1'000'000;
  /// Relative slack above a level under which a cell counts as settled.
  double settle_tolerance = 1e-12;

  void validate() const;
};

struct CompressionResult {
  TimGrid compressed;
  double off_grid_mass = 0.0;
  /// Number of artificial-height levels visited.
  std::size_t iterations = 0;
  /// Total synchronous sweeps over all levels.
  std::size_t sweeps = 0;
  bool overflowed = false;
};

/// Iterative artificial-height relaxation. Starting from the initial maximum,
/// the artificial height is lowered per the schedule; at each level every
/// cell above it sheds its excess in quarters to its four neighbours using a
/// temporary array applied after the full sweep, until no cell exceeds the
/// level. Ends once the level reaches the termination height.
CompressionResult compress(const TimGrid& initial, const CompressionConfig& config = {});

/// One level of the relaxation: synchronous sweeps until no cell exceeds
/// h_art by more than settle_tolerance * h_art. Overflow past the grid edge
/// raises MassOverflow.
TimGrid inner_relax(const TimGrid& grid, double h_art, std::size_t max_sweeps = 1'000'000,
                    double settle_tolerance = 1e-12);

/// "single", "linear:K", "mult:F"
Schedule parse_schedule(const std::string& text);
std::string to_string(const Schedule& schedule);
/// "error", "crop:M"
BoundaryPolicy parse_boundary(const std::string& text);
std::string to_string(const BoundaryPolicy& boundary);

}  // namespace timflow
