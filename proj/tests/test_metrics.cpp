#include <gtest/gtest.h>

#include <cmath>
#include <optional>
#include <random>
#include <sstream>

#include "support/oracles.hpp"
#include "timflow/error.hpp"
#include "timflow/heuristic.hpp"
#include "timflow/metrics.hpp"

using namespace timflow;

namespace {

TimGrid filled(std::size_t h, std::size_t w, double v) { return TimGrid(h, w, std::vector<double>(h * w, v)); }

TimGrid random_grid(std::mt19937_64& rng, std::size_t h, std::size_t w) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(h * w);
  for (double& x : v) x = u(rng) < 0.4 ? 0.0 : u(rng);
  v[0] += 0.1;  // keep the reference non-empty
  return TimGrid(h, w, std::move(v));
}

std::optional<ErrorKind> kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

oracle::Grid to_oracle(const TimGrid& g) {
  return {g.height(), g.width(), std::vector<double>(g.amounts().begin(), g.amounts().end())};
}

}  // namespace

TEST(Errors, AbsoluteFixtures) {
  EXPECT_EQ(error_abs(filled(50, 50, 1.0), TimGrid(50, 50)), 2500.0);
  EXPECT_EQ(error_abs(TimGrid(2, 2, {1, 0, 0, 1}), TimGrid(2, 2, {0.5, 0.5, 0, 1})), 1.0);
  EXPECT_EQ(error_abs(filled(3, 3, 0.4), filled(3, 3, 0.4)), 0.0);
  EXPECT_EQ(kind_of([] { error_abs(TimGrid(2, 2), TimGrid(2, 3)); }), ErrorKind::ShapeMismatch);
}

TEST(Errors, RelativeFixtures) {
  EXPECT_EQ(error_rel(TimGrid(2, 2, {1, 0, 0, 1}), TimGrid(2, 2, {0.5, 0.5, 0, 1})), 0.5);
  EXPECT_EQ(kind_of([] { error_rel(TimGrid(2, 2), filled(2, 2, 1.0)); }), ErrorKind::ZeroReference);
  const std::vector<std::pair<TimGrid, TimGrid>> pairs{
      {filled(2, 2, 1.0), filled(2, 2, 1.0)},
      {TimGrid(2, 2, {1, 0, 0, 1}), TimGrid(2, 2, {0.5, 0.5, 0, 1})}};
  EXPECT_EQ(error_mean(pairs), 0.25);
  EXPECT_EQ(kind_of([] { error_mean({}); }), ErrorKind::EmptyList);
}

TEST(Errors, MatchScalarOracleOnRandomPairs) {
  std::mt19937_64 rng(3);
  std::vector<std::pair<TimGrid, TimGrid>> pairs;
  std::vector<double> rel;
  for (int i = 0; i < 50; ++i) {
    TimGrid a = random_grid(rng, 12, 9), b = random_grid(rng, 12, 9);
    double diff = 0.0, ref = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      diff += std::abs(a.amounts()[k] - b.amounts()[k]);
      ref += a.amounts()[k];
    }
    EXPECT_NEAR(error_abs(a, b), diff, 1e-12);
    EXPECT_NEAR(error_rel(a, b), diff / ref, 1e-12);
    rel.push_back(diff / ref);
    pairs.emplace_back(std::move(a), std::move(b));
  }
  const ErrorSummary s = summarize_errors(pairs);
  EXPECT_NEAR(s.mean_rel, oracle::mean(rel), 1e-12);
  EXPECT_EQ(s.e_rel.size(), 50u);
}

TEST(Errors, MetricProperties) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i) {
    const TimGrid a = random_grid(rng, 8, 8), b = random_grid(rng, 8, 8), c = random_grid(rng, 8, 8);
    EXPECT_EQ(error_abs(a, b), error_abs(b, a));
    EXPECT_LE(error_abs(a, c), error_abs(a, b) + error_abs(b, c) + 1e-12);
    EXPECT_NEAR(error_rel(a, b) * a.sum(), error_rel(b, a) * b.sum(), 1e-12);
  }
}

TEST(Timing, FakeClockMinimumPerPattern) {
  // Each run reads the clock twice; the differences are 3, 2, 4.
  std::vector<double> ticks{0, 3, 10, 12, 20, 24};
  std::size_t next = 0;
  const Clock clock = [&] { return ticks[next++]; };
  const TimingSummary s = benchmark_time([](std::size_t) {}, 1, 3, clock);
  ASSERT_EQ(s.t_min.size(), 1u);
  EXPECT_EQ(s.t_min[0], 2.0);
  EXPECT_EQ(s.runs[0], (std::vector<double>{3, 2, 4}));
  EXPECT_EQ(s.stddev, 0.0);
}

TEST(Timing, MeanAndSampleDeviationAcrossPatterns) {
  const TimingSummary s = summarize_timings({{2.0, 5.0}, {4.0, 6.0}});
  EXPECT_EQ(s.mean, 3.0);
  EXPECT_DOUBLE_EQ(s.stddev, std::sqrt(2.0));
  EXPECT_EQ(s.n_runs, 2u);
}

TEST(Timing, FailingSubjectNamesPattern) {
  try {
    benchmark_time(
        [](std::size_t p) {
          if (p == 3) throw std::runtime_error("boom");
        },
        5, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SubjectFailed);
    EXPECT_NE(std::string(e.what()).find("pattern 3"), std::string::npos);
  }
  EXPECT_EQ(kind_of([] { benchmark_time([](std::size_t) {}, 0, 2); }), ErrorKind::EmptyList);
}

TEST(Coverage, Cases) {
  const TimGrid g(2, 2, {1.0, 0.0, 0.5, 1e-4});
  EXPECT_EQ(coverage_ratio(g, CellMask::full(g.spec()), 1e-3), 0.5);
  EXPECT_EQ(coverage_ratio(g, CellMask::rect(g.spec(), 0, 0, 1, 1), 1e-3), 1.0);
  EXPECT_EQ(coverage_ratio(filled(4, 4, 0.2), CellMask::full({4, 4}), 1e-3), 1.0);
  EXPECT_EQ(coverage_ratio(TimGrid(4, 4), CellMask::full({4, 4}), 1e-3), 0.0);
  EXPECT_EQ(kind_of([&] { coverage_ratio(g, CellMask::rect(g.spec(), 1, 1, 1, 1), 1e-3); }),
            ErrorKind::EmptyRegion);
}

TEST(Voids, FullAndEmptyGridsHaveNone) {
  EXPECT_TRUE(detect_voids(filled(6, 6, 1.0), 1e-3).empty());
  EXPECT_TRUE(detect_voids(TimGrid(6, 6), 1e-3).empty());
}

TEST(Voids, RingEnclosesOneRegion) {
  std::vector<double> v(7 * 7, 0.0);
  for (std::size_t k = 1; k <= 5; ++k) v[7 + k] = v[5 * 7 + k] = v[k * 7 + 1] = v[k * 7 + 5] = 1.0;
  const auto voids = detect_voids(TimGrid(7, 7, v), 1e-3);
  ASSERT_EQ(voids.size(), 1u);
  EXPECT_EQ(voids[0].size(), 9u);
  EXPECT_EQ(voids[0].front(), (Cell{2, 2}));
  EXPECT_EQ(voids[0].back(), (Cell{4, 4}));
}

TEST(Voids, CompressedRingMatchesFloodFillOracle) {
  // A bead ring spread to the gap keeps its hole.
  std::vector<double> v(30 * 30, 0.0);
  for (std::size_t k = 8; k <= 21; ++k) v[8 * 30 + k] = v[21 * 30 + k] = v[k * 30 + 8] = v[k * 30 + 21] = 1.8;
  const TimGrid out = compress(TimGrid(30, 30, v)).compressed;
  const auto voids = detect_voids(out, 1e-3);
  EXPECT_EQ(voids.size(), 1u);
  EXPECT_EQ(voids.size(), oracle::count_enclosed(to_oracle(out), 1e-3));
}

TEST(Voids, CountMatchesOracleAndIsMirrorInvariant) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> v(15 * 11);
    for (double& x : v) x = u(rng) < 0.35 ? 0.0 : 1.0;
    const TimGrid g(15, 11, v);
    const std::size_t n = detect_voids(g, 0.5).size();
    EXPECT_EQ(n, oracle::count_enclosed(to_oracle(g), 0.5));
    EXPECT_EQ(detect_voids(g.mirrored_cols(), 0.5).size(), n);
    EXPECT_EQ(detect_voids(g.mirrored_rows(), 0.5).size(), n);
    EXPECT_EQ(detect_voids(g.rotated(), 0.5).size(), n);
  }
}

TEST(Report, CsvRoundTripsValues) {
  const std::vector<PatternRow> rows{{0, 1.5, 0.1, 0.001}, {1, 0.0, 1.0 / 3.0, 2e-5}};
  const std::string csv = report_csv(rows);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "pattern_id,e_comp,e_rel,t_min");
  std::getline(in, line);
  EXPECT_EQ(line, "0,1.5,0.10000000000000001,0.001");
  std::getline(in, line);
  std::istringstream cells(line);
  std::string id, ec, er, tm;
  std::getline(cells, id, ',');
  std::getline(cells, ec, ',');
  std::getline(cells, er, ',');
  std::getline(cells, tm, ',');
  EXPECT_EQ(std::stod(er), 1.0 / 3.0);
  EXPECT_EQ(std::stod(tm), 2e-5);
}

TEST(Report, JsonLayout) {
  const std::vector<MethodSummary> m{{"heuristic", std::nullopt, 0.2, 0.05, 50, 10},
                                     {"surrogate", 0.08, 0.004, 0.0001, 50, 10}};
  const nlohmann::json j = report_json(m);
  ASSERT_EQ(j["rows"].size(), 2u);
  EXPECT_TRUE(j["rows"][0]["mean_relative_error"].is_null());
  EXPECT_EQ(j["rows"][1]["mean_relative_error"], 0.08);
  EXPECT_EQ(j["rows"][1]["setup_time"], "n/a");
  EXPECT_EQ(j["rows"][0]["computation_time"]["mean"], 0.2);
  EXPECT_EQ(j["rows"][0]["n_pat"], 50);
  const std::string table = report_table(m);
  EXPECT_NE(table.find("8.00 %"), std::string::npos);
  EXPECT_NE(table.find("heuristic"), std::string::npos);
}
