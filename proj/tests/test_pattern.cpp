#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support/oracles.hpp"
#include "timflow/error.hpp"
#include "timflow/pattern.hpp"

using namespace timflow;

namespace {

DispensePattern line(double x0, double y0, double x1, double y1, double feed) {
  return DispensePattern({{x0, y0}, {x1, y1}}, {feed});
}

template <typename F>
void expect_error(ErrorKind kind, F&& f) {
  try {
    f();
    FAIL() << "expected " << error_name(kind);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
  }
}

}  // namespace

TEST(Pattern, RejectsMalformedPatterns) {
  expect_error(ErrorKind::InvalidPattern, [] { DispensePattern({{0, 0}}, {}); });
  expect_error(ErrorKind::InvalidPattern, [] { DispensePattern({{0, 0}, {1, 1}}, {1.0, 1.0}); });
  expect_error(ErrorKind::InvalidPattern, [] { DispensePattern({{0, 0}, {1, 1}}, {-1.0}); });
  expect_error(ErrorKind::InvalidPattern, [] { DispensePattern({{0, 0}, {0, 0}}, {1.0}); });
  expect_error(ErrorKind::InvalidPattern, [] { DispensePattern({{0, NAN}, {1, 1}}, {1.0}); });
  EXPECT_NO_THROW(DispensePattern({{3, 3}, {3, 3}}, {0.0}));
}

TEST(Pattern, AxisAlignedSegmentTilesFourCells) {
  const TimGrid g = discretize(line(10.0, 10.5, 14.0, 10.5, 1.0), {50, 50});
  for (std::size_t r = 0; r < 50; ++r)
    for (std::size_t c = 0; c < 50; ++c)
      EXPECT_EQ(g(r, c), (r == 10 && c >= 10 && c <= 13) ? 1.0 : 0.0) << r << "," << c;
}

TEST(Pattern, FeedScalesAxisAlignedCellsExactly) {
  const TimGrid g = discretize(line(10.0, 10.5, 14.0, 10.5, 2.5), {50, 50});
  for (std::size_t c = 10; c <= 13; ++c) EXPECT_EQ(g(10, c), 2.5);
  EXPECT_EQ(g.sum(), 10.0);
}

TEST(Pattern, VerticalSegmentIsExact) {
  const TimGrid g = discretize(line(7.5, 3.0, 7.5, 9.0, 1.5), {20, 20});
  for (std::size_t r = 0; r < 20; ++r)
    for (std::size_t c = 0; c < 20; ++c)
      EXPECT_EQ(g(r, c), (c == 7 && r >= 3 && r < 9) ? 1.5 : 0.0);
}

// Exact polygon-clipping areas from tests/oracles/overlap_oracle.py.
TEST(Pattern, DiagonalMatchesPolygonOracle) {
  const double edge = 0.125, side = 0.25, core = std::sqrt(2.0) - 0.5;
  struct Expect {
    std::size_t col, row;
    double area;
  };
  const Expect expected[] = {{5, 4, edge}, {4, 5, edge}, {5, 5, core}, {6, 5, side}, {5, 6, side},
                             {6, 6, core}, {7, 6, side}, {6, 7, side}, {7, 7, core}, {8, 7, side},
                             {7, 8, side}, {8, 8, core}, {9, 8, edge}, {8, 9, edge}};
  const TimGrid g = discretize(line(5.0, 5.0, 9.0, 9.0, 1.0), {50, 50});
  double listed = 0.0;
  for (const auto& e : expected) {
    EXPECT_NEAR(g(e.row, e.col), e.area, 1e-12) << e.col << "," << e.row;
    listed += g(e.row, e.col);
  }
  EXPECT_NEAR(listed, g.sum(), 1e-15);
  EXPECT_NEAR(g.sum(), 4.0 * std::sqrt(2.0), 1e-12);
}

TEST(Pattern, ZeroLengthZeroFeedContributesNothing) {
  const DispensePattern p({{5, 5}, {5, 5}}, {0.0});
  EXPECT_EQ(discretize(p, {10, 10}).sum(), 0.0);
}

TEST(Pattern, OutOfBoundsIsRejected) {
  expect_error(ErrorKind::OutOfBounds, [] { discretize(line(2.0, 0.3, 6.0, 0.3, 1.0), {10, 10}); });
  expect_error(ErrorKind::OutOfBounds, [] { discretize(line(1.0, 5.0, 11.0, 5.0, 1.0), {10, 10}); });
  EXPECT_NO_THROW(discretize(line(0.0, 0.5, 10.0, 0.5, 1.0), {10, 10}));
}

TEST(Pattern, PadPatternKeepsRaster) {
  const DispensePattern p = line(10.0, 10.5, 14.0, 10.5, 1.0);
  const DispensePattern padded = pad_pattern(p, 6);
  EXPECT_EQ(padded.segment_count(), 6u);
  EXPECT_EQ(discretize(padded, {50, 50}), discretize(p, {50, 50}));
  expect_error(ErrorKind::TargetTooSmall, [&] { pad_pattern(padded, 2); });
}

TEST(Pattern, ScaleForGap) {
  const TimGrid g(2, 2, {1.0, 2.0, 0.0, 4.0});
  EXPECT_EQ(scale_for_gap(g, 2.0), TimGrid(2, 2, {0.5, 1.0, 0.0, 2.0}));
  expect_error(ErrorKind::NonPositiveGap, [&] { scale_for_gap(g, 0.0); });
  expect_error(ErrorKind::NonPositiveGap, [&] { scale_for_gap(g, -1.0); });
}

TEST(Pattern, JsonRoundTripAndSchema) {
  const DispensePattern p({{1.25, 2.5}, {3.0, 4.0}, {6.0, 4.0}}, {1.0, 0.5});
  EXPECT_EQ(pattern_from_json(pattern_to_json(p)), p);
  EXPECT_EQ(parse_pattern(R"({"points":[[1.25,2.5],[3,4],[6,4]],"feeds":[1,0.5]})"), p);
  expect_error(ErrorKind::InvalidPattern, [] { parse_pattern("{not json"); });
  expect_error(ErrorKind::InvalidPattern, [] { parse_pattern(R"({"points":[[0,0],[1,1]],"feeds":[1],"x":1})"); });
  expect_error(ErrorKind::InvalidPattern, [] { parse_pattern(R"({"points":[[0,0],[1]],"feeds":[1]})"); });
}

// Properties over random segments.

class RandomSegments : public ::testing::Test {
 protected:
  std::mt19937_64 rng{20240611};
  DispensePattern random_line(double lo, double hi, double feed) {
    std::uniform_real_distribution<double> u(lo, hi);
    for (;;) {
      const double x0 = u(rng), y0 = u(rng), x1 = u(rng), y1 = u(rng);
      if (std::hypot(x1 - x0, y1 - y0) > 0.1) return line(x0, y0, x1, y1, feed);
    }
  }
};

TEST_F(RandomSegments, MassFidelityForInteriorSegments) {
  for (int i = 0; i < 200; ++i) {
    const DispensePattern p = random_line(3.0, 37.0, 1.7);
    const double expected = 1.7 * p.segment_length(0);
    EXPECT_NEAR(discretize(p, {40, 40}).sum(), expected, 1e-9 * expected);
  }
}

TEST_F(RandomSegments, LinearInFeed) {
  for (int i = 0; i < 50; ++i) {
    const DispensePattern p = random_line(3.0, 27.0, 1.0);
    const TimGrid base = discretize(p, {30, 30});
    const TimGrid tripled = discretize(p.with_feeds_scaled(3.0), {30, 30});
    EXPECT_EQ(tripled, base.scaled(3.0));
  }
}

TEST_F(RandomSegments, IntegerTranslationShiftsCells) {
  for (int i = 0; i < 50; ++i) {
    const DispensePattern p = random_line(3.0, 20.0, 1.0);
    const TimGrid a = discretize(p, {30, 30});
    const TimGrid b = discretize(p.translated(4.0, 3.0), {30, 30});
    for (std::size_t r = 0; r + 3 < 30; ++r)
      for (std::size_t c = 0; c + 4 < 30; ++c) EXPECT_NEAR(b(r + 3, c + 4), a(r, c), 1e-12);
  }
}

TEST_F(RandomSegments, MirrorAboutGridCentre) {
  for (int i = 0; i < 50; ++i) {
    const DispensePattern p = random_line(3.0, 27.0, 1.0);
    const TimGrid a = discretize(p, {30, 30});
    const TimGrid b = discretize(p.mirrored_x(15.0), {30, 30});
    const TimGrid m = a.mirrored_cols();
    for (std::size_t k = 0; k < m.size(); ++k) EXPECT_NEAR(b.amounts()[k], m.amounts()[k], 1e-12);
  }
}

TEST_F(RandomSegments, StratifiedSamplingOracle) {
  std::mt19937_64 sampler(7);
  for (int i = 0; i < 8; ++i) {
    const DispensePattern p = random_line(4.0, 16.0, 1.0);
    const auto& pts = p.points();
    const oracle::Seg s{pts[0].x, pts[0].y, pts[1].x, pts[1].y};
    const TimGrid g = discretize(p, {20, 20});
    double covered = 0.0;
    for (auto [c, r] : oracle::candidate_cells(s)) {
      const double expect = oracle::overlap_stratified(s, c, r, 200, sampler);
      EXPECT_NEAR(g(static_cast<std::size_t>(r), static_cast<std::size_t>(c)), expect, 1e-3) << c << "," << r;
      covered += g(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
    }
    EXPECT_NEAR(covered, g.sum(), 1e-12);
  }
}
