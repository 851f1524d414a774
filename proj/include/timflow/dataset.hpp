#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "timflow/grid.hpp"
#include "timflow/heuristic.hpp"
#include "timflow/pattern.hpp"
#include "timflow/surrogate.hpp"

namespace timflow {

struct GeneratorConfig {
  std::uint64_t seed = 0;
  std::size_t count = 1;
  GridSpec resolution{50, 50};
  int min_segments = 1;
  int max_segments = 6;
  /// Cells kept clear at the border; pattern points are drawn inside.
  double margin = 8.0;
  /// Feeds are in units of the termination height; beads at or below 1
  /// never touch the lid.
  double feed_min = 2.0;
  double feed_max = 8.0;
  /// Patterns depositing more than this are redrawn; 0 means 0.3 * H * W.
  double max_total_mass = 0.0;
  /// Worker threads; 0 picks hardware concurrency. Output is independent of
  /// this value.
  unsigned threads = 0;

  void validate() const;
  double mass_limit() const;
  bool operator==(const GeneratorConfig&) const = default;
};

nlohmann::json to_json(const GeneratorConfig& config);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

struct Record {
  DispensePattern pattern;
  TimGrid dispensed;
  TimGrid compressed;
  bool operator==(const Record&) const = default;
};

/// Grids are stored at 32-bit precision, matching the on-disk format.
struct Dataset {
  GeneratorConfig config;
  std::vector<Record> records;
};

struct BuildStats {
  std::size_t rejected_overflow = 0;
  std::size_t rejected_mass = 0;
};

/// Segment count uniform in [min_segments, max_segments], points uniform in
/// the margin-inset rectangle, feeds uniform in [feed_min, feed_max].
DispensePattern generate_pattern(const GeneratorConfig& config, std::mt19937_64& rng);

/// Random stream for record `index`, independent of generation order.
std::mt19937_64 record_stream(std::uint64_t seed, std::size_t index);

/// Draws, rasterizes and compresses (default config, overflow is an error)
/// `count` patterns; rejected patterns are redrawn from the same stream.
/// Throws GenerationStalled when one record is rejected 100 times in a row.
Dataset build_dataset(const GeneratorConfig& config, BuildStats* stats = nullptr);

/// (dispensed, compressed) pairs in record order.
std::vector<Sample> to_samples(std::span<const Record> records);

/// Leading records train, the trailing `validation_fraction` validate. Both
/// splits get at least one record. Throws EmptyDataset below two records.
TrainData split_samples(std::span<const Record> records, double validation_fraction);

/// Rounds every amount to the nearest 32-bit float.
TimGrid quantize_f32(const TimGrid& grid);

inline constexpr std::uint16_t kDatasetVersion = 1;

/// TIMD: "TIMD", u16 version, u32 count, u32 H, u32 W, then per record a u16
/// segment count, (f64 x, f64 y) points, f64 feeds, H*W f32 dispensed and
/// H*W f32 compressed amounts. Little-endian throughout.
std::string serialize_timd(const std::vector<Record>& records, const GridSpec& resolution);
std::vector<Record> parse_timd(std::string_view bytes, GridSpec* resolution = nullptr);

/// Writes `path` and a JSON sidecar `path + ".json"` holding the config.
void save_dataset(const Dataset& dataset, const std::string& path);
/// Reads `path` and, when present, its sidecar.
Dataset load_dataset(const std::string& path);

}  // namespace timflow
