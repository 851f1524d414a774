#include "timflow/pattern.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "timflow/error.hpp"

namespace timflow {

namespace {

constexpr double kDegenerateLength = 1e-12;
constexpr double kBoundsTolerance = 1e-9;

// Convex polygon in cell-local coordinates; at most 8 vertices after
// clipping a square by four half-planes.
struct Polygon {
  std::array<Point, 12> v{};
  int n = 0;
};

// Keeps the part of poly where a*x + b*y + c >= 0.
Polygon clip(const Polygon& poly, double a, double b, double c) {
  Polygon out;
  for (int i = 0; i < poly.n; ++i) {
    const Point& p = poly.v[i];
    const Point& q = poly.v[(i + 1) % poly.n];
    const double fp = a * p.x + b * p.y + c;
    const double fq = a * q.x + b * q.y + c;
    if (fp >= 0.0) out.v[out.n++] = p;
    if ((fp >= 0.0) != (fq >= 0.0)) {
      const double t = fp / (fp - fq);
      out.v[out.n++] = {p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)};
    }
  }
  return out;
}

double shoelace(const Polygon& poly) {
  double twice = 0.0;
  for (int i = 0; i < poly.n; ++i) {
    const Point& p = poly.v[i];
    const Point& q = poly.v[(i + 1) % poly.n];
    twice += p.x * q.y - q.x * p.y;
  }
  return std::abs(twice) * 0.5;
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw Error(ErrorKind::InvalidPattern, std::string(what) + " must be finite");
}

}  // namespace

DispensePattern::DispensePattern(std::vector<Point> points, std::vector<double> feeds)
    : points_(std::move(points)), feeds_(std::move(feeds)) {
  if (points_.size() < 2) {
    throw Error(ErrorKind::InvalidPattern, "a pattern needs at least two points");
  }
  if (feeds_.size() != points_.size() - 1) {
    throw Error(ErrorKind::InvalidPattern, "expected one feed per segment");
  }
  for (const Point& p : points_) {
    check_finite(p.x, "coordinates");
    check_finite(p.y, "coordinates");
  }
  for (std::size_t s = 0; s < feeds_.size(); ++s) {
    check_finite(feeds_[s], "feeds");
    if (feeds_[s] < 0.0) throw Error(ErrorKind::InvalidPattern, "feeds must be non-negative");
    if (feeds_[s] > 0.0 && segment_length(s) <= kDegenerateLength) {
      throw Error(ErrorKind::InvalidPattern,
                  "segment " + std::to_string(s) + " has zero length but a positive feed");
    }
  }
}

double DispensePattern::segment_length(std::size_t segment) const noexcept {
  const Point& a = points_[segment];
  const Point& b = points_[segment + 1];
  return std::hypot(b.x - a.x, b.y - a.y);
}

double DispensePattern::total_mass() const noexcept {
  double total = 0.0;
  for (std::size_t s = 0; s < feeds_.size(); ++s) total += feeds_[s] * segment_length(s);
  return total;
}

DispensePattern DispensePattern::translated(double dx, double dy) const {
  std::vector<Point> pts(points_);
  for (Point& p : pts) {
    p.x += dx;
    p.y += dy;
  }
  return DispensePattern(std::move(pts), feeds_);
}

DispensePattern DispensePattern::mirrored_x(double axis_x) const {
  std::vector<Point> pts(points_);
  for (Point& p : pts) p.x = 2.0 * axis_x - p.x;
  return DispensePattern(std::move(pts), feeds_);
}

DispensePattern DispensePattern::with_feeds_scaled(double factor) const {
  std::vector<double> f(feeds_);
  for (double& v : f) v *= factor;
  return DispensePattern(points_, std::move(f));
}

double segment_cell_overlap(Point p0, Point p1, long col, long row) {
  // Work relative to the cell origin so integer translations are exact.
  const Point a{p0.x - static_cast<double>(col), p0.y - static_cast<double>(row)};
  const Point b{p1.x - static_cast<double>(col), p1.y - static_cast<double>(row)};
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double length = std::hypot(dx, dy);
  if (!(length > kDegenerateLength)) return 0.0;
  const double ux = dx / length;
  const double uy = dy / length;
  const double nx = -uy;
  const double ny = ux;

  Polygon cell;
  cell.v[0] = {0.0, 0.0};
  cell.v[1] = {1.0, 0.0};
  cell.v[2] = {1.0, 1.0};
  cell.v[3] = {0.0, 1.0};
  cell.n = 4;

  const double along0 = ux * a.x + uy * a.y;
  const double across0 = nx * a.x + ny * a.y;
  // (q - a).u >= 0, length - (q - a).u >= 0, 1/2 +- (q - a).n >= 0
  Polygon p = clip(cell, ux, uy, -along0);
  if (p.n == 0) return 0.0;
  p = clip(p, -ux, -uy, along0 + length);
  if (p.n == 0) return 0.0;
  p = clip(p, nx, ny, 0.5 - across0);
  if (p.n == 0) return 0.0;
  p = clip(p, -nx, -ny, 0.5 + across0);
  if (p.n < 3) return 0.0;
  return std::clamp(shoelace(p), 0.0, 1.0);
}

TimGrid discretize(const DispensePattern& pattern, const GridSpec& spec) {
  spec.validate();
  const auto H = static_cast<double>(spec.height);
  const auto W = static_cast<double>(spec.width);
  std::vector<double> amounts(spec.height * spec.width, 0.0);
  const auto& pts = pattern.points();

  for (std::size_t s = 0; s < pattern.segment_count(); ++s) {
    const Point p0 = pts[s];
    const Point p1 = pts[s + 1];
    const double length = pattern.segment_length(s);
    if (!(length > kDegenerateLength)) continue;

    const double hx = -(p1.y - p0.y) / length * 0.5;
    const double hy = (p1.x - p0.x) / length * 0.5;
    const std::array<Point, 4> corners{{{p0.x + hx, p0.y + hy},
                                        {p1.x + hx, p1.y + hy},
                                        {p1.x - hx, p1.y - hy},
                                        {p0.x - hx, p0.y - hy}}};
    double xmin = corners[0].x, xmax = corners[0].x, ymin = corners[0].y, ymax = corners[0].y;
    for (const Point& c : corners) {
      xmin = std::min(xmin, c.x);
      xmax = std::max(xmax, c.x);
      ymin = std::min(ymin, c.y);
      ymax = std::max(ymax, c.y);
    }
    if (xmin < -kBoundsTolerance || ymin < -kBoundsTolerance || xmax > W + kBoundsTolerance ||
        ymax > H + kBoundsTolerance) {
      throw Error(ErrorKind::OutOfBounds,
                  "segment " + std::to_string(s) + " leaves the " + std::to_string(spec.height) +
                      "x" + std::to_string(spec.width) + " grid");
    }
    const double feed = pattern.feeds()[s];
    if (feed == 0.0) continue;

    const long c0 = std::max(0L, static_cast<long>(std::floor(xmin)));
    const long c1 = std::min(static_cast<long>(spec.width) - 1, static_cast<long>(std::ceil(xmax)) - 1);
    const long r0 = std::max(0L, static_cast<long>(std::floor(ymin)));
    const long r1 = std::min(static_cast<long>(spec.height) - 1, static_cast<long>(std::ceil(ymax)) - 1);
    for (long r = r0; r <= r1; ++r) {
      for (long c = c0; c <= c1; ++c) {
        const double area = segment_cell_overlap(p0, p1, c, r);
        if (area > 0.0) amounts[static_cast<std::size_t>(r) * spec.width + static_cast<std::size_t>(c)] += feed * area;
      }
    }
  }
  return TimGrid(spec.height, spec.width, std::move(amounts));
}

TimGrid scale_for_gap(const TimGrid& grid, double gap) {
  if (!(gap > 0.0) || !std::isfinite(gap)) {
    throw Error(ErrorKind::NonPositiveGap, "gap height must be positive and finite");
  }
  std::vector<double> out(grid.amounts().begin(), grid.amounts().end());
  for (double& a : out) a /= gap;
  return TimGrid(grid.height(), grid.width(), std::move(out));
}

DispensePattern pad_pattern(const DispensePattern& pattern, std::size_t target_segments) {
  if (target_segments < pattern.segment_count()) {
    throw Error(ErrorKind::TargetTooSmall,
                "pattern has " + std::to_string(pattern.segment_count()) + " segments, target is " +
                    std::to_string(target_segments));
  }
  std::vector<Point> pts = pattern.points();
  std::vector<double> feeds = pattern.feeds();
  while (feeds.size() < target_segments) {
    pts.push_back(pts.back());
    feeds.push_back(0.0);
  }
  return DispensePattern(std::move(pts), std::move(feeds));
}

DispensePattern pattern_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidPattern, "pattern must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "points" && key != "feeds") {
      throw Error(ErrorKind::InvalidPattern, "unknown field '" + key + "'");
    }
  }
  if (!j.contains("points") || !j["points"].is_array()) {
    throw Error(ErrorKind::InvalidPattern, "field 'points' must be an array");
  }
  if (!j.contains("feeds") || !j["feeds"].is_array()) {
    throw Error(ErrorKind::InvalidPattern, "field 'feeds' must be an array");
  }
  std::vector<Point> points;
  std::size_t idx = 0;
  for (const auto& p : j["points"]) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
      throw Error(ErrorKind::InvalidPattern, "points[" + std::to_string(idx) + "] must be [x, y]");
    }
    points.push_back({p[0].get<double>(), p[1].get<double>()});
    ++idx;
  }
  std::vector<double> feeds;
  idx = 0;
  for (const auto& f : j["feeds"]) {
    if (!f.is_number()) {
      throw Error(ErrorKind::InvalidPattern, "feeds[" + std::to_string(idx) + "] must be a number");
    }
    feeds.push_back(f.get<double>());
    ++idx;
  }
  return DispensePattern(std::move(points), std::move(feeds));
}

nlohmann::json pattern_to_json(const DispensePattern& pattern) {
  nlohmann::json points = nlohmann::json::array();
  for (const Point& p : pattern.points()) points.push_back({p.x, p.y});
  return {{"points", std::move(points)}, {"feeds", pattern.feeds()}};
}

DispensePattern parse_pattern(std::string_view text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorKind::InvalidPattern, "malformed JSON");
  return pattern_from_json(j);
}

DispensePattern load_pattern_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_pattern(ss.str());
}

}  // namespace timflow
