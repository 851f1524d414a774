#include "timflow/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <thread>

#include "binary_io.hpp"
#include "timflow/error.hpp"

namespace timflow {

namespace {

constexpr int kMaxConsecutiveRejections = 100;

}  // namespace

void GeneratorConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::InvalidArgument, what); };
  resolution.validate();
  if (count < 1) fail("count must be at least 1");
  if (min_segments < 1 || min_segments > max_segments || max_segments > 65535) {
    fail("segment range must satisfy 1 <= min <= max <= 65535");
  }
  if (!(margin >= 0.0)) fail("margin must be non-negative");
  if (2.0 * margin >= static_cast<double>(std::min(resolution.height, resolution.width))) {
    fail("margin leaves no room for pattern points");
  }
  if (!(feed_min > 0.0) || !(feed_min <= feed_max) || !std::isfinite(feed_max)) {
    fail("feed range must satisfy 0 < min <= max");
  }
  if (!(max_total_mass >= 0.0) || !std::isfinite(max_total_mass)) fail("max_total_mass must be non-negative");
}

double GeneratorConfig::mass_limit() const {
  if (max_total_mass > 0.0) return max_total_mass;
  return 0.3 * static_cast<double>(resolution.height * resolution.width);
}

nlohmann::json to_json(const GeneratorConfig& c) {
  return {{"seed", c.seed},
          {"count", c.count},
          {"resolution", {c.resolution.height, c.resolution.width}},
          {"segments", {c.min_segments, c.max_segments}},
          {"margin", c.margin},
          {"feed_range", {c.feed_min, c.feed_max}},
          {"max_total_mass", c.max_total_mass}};
}

GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  try {
    GeneratorConfig c;
    c.seed = j.at("seed").get<std::uint64_t>();
    c.count = j.at("count").get<std::size_t>();
    c.resolution = {j.at("resolution").at(0).get<std::size_t>(), j.at("resolution").at(1).get<std::size_t>()};
    c.min_segments = j.at("segments").at(0).get<int>();
    c.max_segments = j.at("segments").at(1).get<int>();
    c.margin = j.at("margin").get<double>();
    c.feed_min = j.at("feed_range").at(0).get<double>();
    c.feed_max = j.at("feed_range").at(1).get<double>();
    c.max_total_mass = j.at("max_total_mass").get<double>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("bad generator config: ") + e.what());
  }
}

DispensePattern generate_pattern(const GeneratorConfig& config, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> segments(config.min_segments, config.max_segments);
  std::uniform_real_distribution<double> xs(config.margin, static_cast<double>(config.resolution.width) - config.margin);
  std::uniform_real_distribution<double> ys(config.margin, static_cast<double>(config.resolution.height) - config.margin);
  std::uniform_real_distribution<double> feeds(config.feed_min, config.feed_max);

  const int n = segments(rng);
  std::vector<Point> points;
  points.reserve(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i <= n; ++i) {
    const double x = xs(rng);
    const double y = ys(rng);
    points.push_back({x, y});
  }
  std::vector<double> f;
  for (int i = 0; i < n; ++i) f.push_back(feeds(rng));
  return DispensePattern(std::move(points), std::move(f));
}

std::mt19937_64 record_stream(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(std::uint64_t(index) >> 32)};
  return std::mt19937_64(seq);
}

TimGrid quantize_f32(const TimGrid& grid) {
  std::vector<double> out(grid.amounts().begin(), grid.amounts().end());
  for (double& v : out) v = static_cast<double>(static_cast<float>(v));
  return TimGrid(grid.height(), grid.width(), std::move(out));
}

Dataset build_dataset(const GeneratorConfig& config, BuildStats* stats) {
  config.validate();
  std::vector<std::optional<Record>> slots(config.count);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> rejected_overflow{0};
  std::atomic<std::size_t> rejected_mass{0};
  std::mutex failure_mutex;
  std::exception_ptr failure;

  auto worker = [&] {
    for (std::size_t i = next++; i < config.count; i = next++) {
      try {
        std::mt19937_64 rng = record_stream(config.seed, i);
        int misses = 0;
        while (!slots[i]) {
          if (misses >= kMaxConsecutiveRejections) {
            throw Error(ErrorKind::GenerationStalled,
                        "record " + std::to_string(i) + " rejected " + std::to_string(misses) +
                            " times in a row; widen margin or lower feeds");
          }
          DispensePattern pattern = generate_pattern(config, rng);
          if (pattern.total_mass() > config.mass_limit()) {
            ++rejected_mass;
            ++misses;
            continue;
          }
          const TimGrid dispensed = discretize(pattern, config.resolution);
          try {
            const CompressionResult result = compress(dispensed);
            slots[i] = Record{std::move(pattern), quantize_f32(dispensed), quantize_f32(result.compressed)};
          } catch (const Error& e) {
            if (e.kind() != ErrorKind::MassOverflow) throw;
            ++rejected_overflow;
            ++misses;
          }
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = config.count;
        return;
      }
    }
  };

  unsigned threads = config.threads ? config.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, config.count));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  Dataset d;
  d.config = config;
  d.records.reserve(config.count);
  for (auto& slot : slots) d.records.push_back(std::move(*slot));
  if (stats) {
    stats->rejected_overflow = rejected_overflow;
    stats->rejected_mass = rejected_mass;
  }
  return d;
}

std::vector<Sample> to_samples(std::span<const Record> records) {
  std::vector<Sample> out;
  out.reserve(records.size());
  for (const Record& r : records) out.push_back({r.dispensed, r.compressed});
  return out;
}

TrainData split_samples(std::span<const Record> records, double validation_fraction) {
  if (records.size() < 2) throw Error(ErrorKind::EmptyDataset, "need at least two records to split");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "validation fraction must lie in (0, 1)");
  }
  auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(records.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, records.size() - 1);
  const std::size_t n_train = records.size() - n_val;
  return {to_samples(records.first(n_train)), to_samples(records.subspan(n_train))};
}

std::string serialize_timd(const std::vector<Record>& records, const GridSpec& resolution) {
  resolution.validate();
  detail::ByteWriter w;
  w.bytes("TIMD");
  w.put<std::uint16_t>(kDatasetVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(records.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(resolution.height));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(resolution.width));
  for (const Record& rec : records) {
    if (rec.dispensed.spec() != resolution || rec.compressed.spec() != resolution) {
      throw Error(ErrorKind::ShapeMismatch, "record resolution differs from dataset resolution");
    }
    if (rec.pattern.segment_count() > 65535) {
      throw Error(ErrorKind::InvalidArgument, "pattern has too many segments for TIMD");
    }
    w.put<std::uint16_t>(static_cast<std::uint16_t>(rec.pattern.segment_count()));
    for (const Point& p : rec.pattern.points()) {
      w.put<double>(p.x);
      w.put<double>(p.y);
    }
    for (double f : rec.pattern.feeds()) w.put<double>(f);
    for (double v : rec.dispensed.amounts()) w.put<float>(static_cast<float>(v));
    for (double v : rec.compressed.amounts()) w.put<float>(static_cast<float>(v));
  }
  return std::move(w.str());
}

std::vector<Record> parse_timd(std::string_view bytes, GridSpec* resolution) {
  detail::ByteReader r(bytes, "TIMD");
  r.expect_magic("TIMD");
  const auto version = r.get<std::uint16_t>();
  if (version != kDatasetVersion) {
    throw Error(ErrorKind::FormatError, "TIMD: unsupported version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  const GridSpec res{r.get<std::uint32_t>(), r.get<std::uint32_t>()};
  if (res.height < 1 || res.width < 1) throw Error(ErrorKind::FormatError, "TIMD: empty resolution");
  const std::size_t cells = res.height * res.width;

  auto read_grid = [&] {
    std::vector<double> v(cells);
    for (double& a : v) a = r.get<float>();
    try {
      return TimGrid(res.height, res.width, std::move(v));
    } catch (const Error& e) {
      throw Error(ErrorKind::FormatError, std::string("TIMD: ") + e.what());
    }
  };

  std::vector<Record> records;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto segments = r.get<std::uint16_t>();
    std::vector<Point> points(static_cast<std::size_t>(segments) + 1);
    for (Point& p : points) {
      p.x = r.get<double>();
      p.y = r.get<double>();
    }
    std::vector<double> feeds(segments);
    for (double& f : feeds) f = r.get<double>();
    std::optional<DispensePattern> pattern;
    try {
      pattern.emplace(std::move(points), std::move(feeds));
    } catch (const Error& e) {
      throw Error(ErrorKind::FormatError, "TIMD: record " + std::to_string(i) + ": " + e.what());
    }
    TimGrid dispensed = read_grid();
    TimGrid compressed = read_grid();
    records.push_back({std::move(*pattern), std::move(dispensed), std::move(compressed)});
  }
  if (r.remaining() != 0) throw Error(ErrorKind::FormatError, "TIMD: trailing bytes after last record");
  if (resolution) *resolution = res;
  return records;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  detail::write_file(path, serialize_timd(dataset.records, dataset.config.resolution));
  detail::write_file(path + ".json", to_json(dataset.config).dump(2) + "\n");
}

Dataset load_dataset(const std::string& path) {
  Dataset d;
  GridSpec res;
  d.records = parse_timd(detail::read_file(path), &res);
  const std::string sidecar = path + ".json";
  if (std::filesystem::exists(sidecar)) {
    const nlohmann::json j = nlohmann::json::parse(detail::read_file(sidecar), nullptr, false);
    if (j.is_discarded()) throw Error(ErrorKind::FormatError, "sidecar " + sidecar + " is not valid JSON");
    d.config = generator_config_from_json(j);
    if (d.config.resolution != res) {
      throw Error(ErrorKind::FormatError, "sidecar resolution disagrees with " + path);
    }
  } else {
    d.config.resolution = res;
    d.config.count = std::max<std::size_t>(1, d.records.size());
    d.config.margin = 0.0;
  }
  return d;
}

}  // namespace timflow
