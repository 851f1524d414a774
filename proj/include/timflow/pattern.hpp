#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "timflow/grid.hpp"

namespace timflow {

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

/// Polygonal dispense path with one feed rate per segment. Feed is an areal
/// density over the segment's width-1 rectangle, so a segment deposits
/// feed * length in total.
class DispensePattern {
 public:
  /// Throws InvalidPattern when an invariant is violated.
  DispensePattern(std::vector<Point> points, std::vector<double> feeds);

  const std::vector<Point>& points() const noexcept { return points_; }
  const std::vector<double>& feeds() const noexcept { return feeds_; }
  std::size_t segment_count() const noexcept { return feeds_.size(); }
  double segment_length(std::size_t segment) const noexcept;
  /// Sum of feed * length over all segments.
  double total_mass() const noexcept;

  DispensePattern translated(double dx, double dy) const;
  /// Mirror about the vertical line x = axis_x.
  DispensePattern mirrored_x(double axis_x) const;
  DispensePattern with_feeds_scaled(double factor) const;

  bool operator==(const DispensePattern&) const = default;

 private:
  std::vector<Point> points_;
  std::vector<double> feeds_;
};

/// Area of the intersection between unit cell [col, col+1] x [row, row+1]
/// and the width-1 flat-capped rectangle around segment p0-p1. Degenerate
/// segments yield 0.
double segment_cell_overlap(Point p0, Point p1, long col, long row);

/// Unweighted area sampling of the pattern onto a grid. Throws OutOfBounds
/// when a segment rectangle leaves [0, W] x [0, H].
TimGrid discretize(const DispensePattern& pattern, const GridSpec& spec);

/// Divides every amount by gap, so that compressing the result to unit
/// height and multiplying back by gap equals compressing to height gap.
TimGrid scale_for_gap(const TimGrid& grid, double gap);

/// Appends zero-feed, zero-length segments at the last point until the
/// pattern has target_segments segments.
DispensePattern pad_pattern(const DispensePattern& pattern, std::size_t target_segments);

/// {"points": [[x, y], ...], "feeds": [f, ...]}. Unknown keys are rejected.
DispensePattern pattern_from_json(const nlohmann::json& j);
nlohmann::json pattern_to_json(const DispensePattern& pattern);
DispensePattern parse_pattern(std::string_view text);
DispensePattern load_pattern_file(const std::string& path);

}  // namespace timflow
