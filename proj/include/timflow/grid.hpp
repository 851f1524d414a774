#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace timflow {

/// Grid resolution. Cells are unit squares; cell (row, col) covers
/// [col, col+1] x [row, row+1] in grid units.
struct GridSpec {
  std::size_t height = 50;
  std::size_t width = 50;

  void validate() const;
  bool operator==(const GridSpec&) const = default;
};

/// Row-major H x W field of non-negative TIM amounts (mean height per cell).
class TimGrid {
 public:
  TimGrid() : TimGrid(1, 1) {}
  TimGrid(std::size_t height, std::size_t width);
  /// Throws InvalidArgument on a size mismatch and NonFiniteInput on negative
  /// or non-finite amounts.
  TimGrid(std::size_t height, std::size_t width, std::vector<double> amounts);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return amounts_.size(); }
  GridSpec spec() const noexcept { return {height_, width_}; }

  double operator()(std::size_t row, std::size_t col) const noexcept {
    return amounts_[row * width_ + col];
  }
  std::span<const double> amounts() const noexcept { return amounts_; }

  double sum() const noexcept;
  double max() const noexcept;

  TimGrid scaled(double factor) const;
  TimGrid mirrored_cols() const;
  TimGrid mirrored_rows() const;
  /// Quarter turn; (r, c) -> (c, H-1-r).
  TimGrid rotated() const;

  bool operator==(const TimGrid&) const = default;

 private:
  std::size_t height_;
  std::size_t width_;
  std::vector<double> amounts_;
};

}  // namespace timflow
