#include "timflow/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "timflow/error.hpp"

namespace timflow {

void GridSpec::validate() const {
  if (height < 1 || width < 1) {
    throw Error(ErrorKind::InvalidArgument, "grid resolution must be at least 1x1");
  }
}

TimGrid::TimGrid(std::size_t height, std::size_t width)
    : height_(height), width_(width), amounts_(height * width, 0.0) {
  GridSpec{height, width}.validate();
}

TimGrid::TimGrid(std::size_t height, std::size_t width, std::vector<double> amounts)
    : height_(height), width_(width), amounts_(std::move(amounts)) {
  GridSpec{height, width}.validate();
  if (amounts_.size() != height * width) {
    throw Error(ErrorKind::InvalidArgument,
                "expected " + std::to_string(height * width) + " amounts, got " +
                    std::to_string(amounts_.size()));
  }
  for (double a : amounts_) {
    if (!std::isfinite(a) || a < 0.0) {
      throw Error(ErrorKind::NonFiniteInput, "grid amounts must be finite and non-negative");
    }
  }
}

double TimGrid::sum() const noexcept {
  return std::accumulate(amounts_.begin(), amounts_.end(), 0.0);
}

double TimGrid::max() const noexcept {
  return *std::max_element(amounts_.begin(), amounts_.end());
}

TimGrid TimGrid::scaled(double factor) const {
  std::vector<double> out(amounts_);
  for (double& a : out) a *= factor;
  return TimGrid(height_, width_, std::move(out));
}

TimGrid TimGrid::mirrored_cols() const {
  std::vector<double> out(amounts_.size());
  for (std::size_t r = 0; r < height_; ++r)
    for (std::size_t c = 0; c < width_; ++c)
      out[r * width_ + (width_ - 1 - c)] = amounts_[r * width_ + c];
  return TimGrid(height_, width_, std::move(out));
}

TimGrid TimGrid::mirrored_rows() const {
  std::vector<double> out(amounts_.size());
  for (std::size_t r = 0; r < height_; ++r)
    for (std::size_t c = 0; c < width_; ++c)
      out[(height_ - 1 - r) * width_ + c] = amounts_[r * width_ + c];
  return TimGrid(height_, width_, std::move(out));
}

TimGrid TimGrid::rotated() const {
  // Result has width_ rows and height_ columns.
  std::vector<double> out(amounts_.size());
  for (std::size_t r = 0; r < height_; ++r)
    for (std::size_t c = 0; c < width_; ++c)
      out[c * height_ + (height_ - 1 - r)] = amounts_[r * width_ + c];
  return TimGrid(width_, height_, std::move(out));
}

}  // namespace timflow
