#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "timflow/dataset.hpp"
#include "timflow/error.hpp"
#include "timflow/heuristic.hpp"
#include "timflow/metrics.hpp"
#include "timflow/network.hpp"
#include "timflow/pattern.hpp"
#include "timflow/service.hpp"
#include "timflow/surrogate.hpp"
#include "timflow/weights_io.hpp"

using namespace timflow;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Logger {
 public:
  bool json_mode = false;

  void info(const std::string& msg, const json& fields = json::object()) const { emit("info", msg, fields); }
  void error(const std::string& msg, const json& fields = json::object()) const { emit("error", msg, fields); }

 private:
  void emit(const char* level, const std::string& msg, const json& fields) const {
    if (json_mode) {
      json line = fields;
      line["level"] = level;
      line["msg"] = msg;
      std::cerr << line.dump() << '\n';
      return;
    }
    std::cerr << '[' << level << "] " << msg;
    for (const auto& [k, v] : fields.items()) std::cerr << ' ' << k << '=' << (v.is_string() ? v.get<std::string>() : v.dump());
    std::cerr << '\n';
  }
};

GridSpec parse_resolution(const std::string& text) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument("no x");
    std::size_t used_h = 0, used_w = 0;
    const std::string hs = text.substr(0, x), ws = text.substr(x + 1);
    const long h = std::stol(hs, &used_h);
    const long w = std::stol(ws, &used_w);
    if (used_h != hs.size() || used_w != ws.size() || h < 1 || w < 1) throw std::invalid_argument("bad");
    return {static_cast<std::size_t>(h), static_cast<std::size_t>(w)};
  } catch (const std::exception&) {
    throw UsageError("--res expects HxW with positive integers, got '" + text + "'");
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw Error(ErrorKind::IoError, "cannot write " + path);
}

struct Options {
  // shared
  std::string log_format = "text";
  std::uint64_t seed = 0;
  std::string res = "50x50";
  std::string out;
  std::string dataset;
  std::string weights;
  // discretize / compress
  std::string pattern;
  std::string in;
  std::string model = "heuristic";
  std::string schedule;
  std::string boundary;
  double gap = 1.0;
  // gen-dataset
  std::size_t count = 0;
  GeneratorConfig gen;
  // train / search
  Hyperparams hp;
  double validation = 0.2;
  std::string report;
  int trials = 0;
  int repeats = 1;
  SearchBudget budget;
  std::size_t max_params = 0;
  // bench
  std::size_t patterns = 50;
  std::size_t runs = 10;
  // serve
  std::string host = "127.0.0.1";
  int port = 8080;
};

int cmd_discretize(const Options& o, const Logger& log) {
  const DispensePattern pattern = load_pattern_file(o.pattern);
  const TimGrid grid = discretize(pattern, parse_resolution(o.res));
  write_text(o.out, serialize_timd({Record{pattern, quantize_f32(grid), quantize_f32(grid)}}, grid.spec()));
  log.info("discretized", {{"out", o.out}, {"mass", grid.sum()}, {"max", grid.max()}});
  std::cout << json{{"out", o.out}, {"height", grid.height()}, {"width", grid.width()}, {"mass", grid.sum()}}.dump()
            << '\n';
  return 0;
}

int cmd_compress(const Options& o, const Logger& log) {
  if (o.model != "heuristic" && o.model != "surrogate") throw UsageError("--model must be heuristic or surrogate");
  if (o.model == "surrogate" && (!o.schedule.empty() || !o.boundary.empty())) {
    throw UsageError("--schedule and --boundary apply to --model heuristic only");
  }
  if (o.model == "surrogate" && o.weights.empty()) throw UsageError("--model surrogate requires --weights");
  if (o.model == "heuristic" && !o.weights.empty()) throw UsageError("--weights applies to --model surrogate only");

  Dataset data = load_dataset(o.in);
  CompressionConfig cfg;
  cfg.termination_height = o.gap;
  if (!o.schedule.empty()) cfg.schedule = parse_schedule(o.schedule);
  if (!o.boundary.empty()) cfg.boundary = parse_boundary(o.boundary);
  cfg.validate();
  std::optional<SurrogateModel> model;
  std::optional<SurrogatePredictor> predictor;
  if (!o.weights.empty()) predictor.emplace(model.emplace(load_model(o.weights)));

  json summary = json::array();
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    Record& rec = data.records[i];
    double off_grid = 0.0;
    TimGrid result;
    if (model) {
      result = predictor->compress(rec.dispensed, o.gap);
    } else {
      CompressionResult r = compress(rec.dispensed, cfg);
      result = std::move(r.compressed);
      off_grid = r.off_grid_mass;
    }
    summary.push_back({{"record", i}, {"mass", result.sum()}, {"max", result.max()}, {"off_grid_mass", off_grid}});
    rec.compressed = quantize_f32(result);
  }
  if (!o.out.empty()) write_text(o.out, serialize_timd(data.records, data.config.resolution));
  log.info("compressed", {{"records", data.records.size()}, {"model", o.model}});
  std::cout << json{{"records", summary}}.dump() << '\n';
  return 0;
}

int cmd_gen_dataset(const Options& o, const Logger& log) {
  GeneratorConfig cfg = o.gen;
  cfg.seed = o.seed;
  cfg.count = o.count;
  cfg.resolution = parse_resolution(o.res);
  BuildStats stats;
  const Dataset d = build_dataset(cfg, &stats);
  save_dataset(d, o.out);
  log.info("dataset written", {{"out", o.out},
                               {"count", d.records.size()},
                               {"rejected_overflow", stats.rejected_overflow},
                               {"rejected_mass", stats.rejected_mass}});
  return 0;
}

int cmd_train(const Options& o, const Logger& log) {
  const Dataset d = load_dataset(o.dataset);
  const TrainData data = split_samples(d.records, o.validation);
  TrainOptions opts;
  opts.on_epoch = [&](const EpochLog& e) { log.info("epoch", to_json(e)); };
  auto [model, report] = train(data, o.hp, o.seed, opts);
  save_model(model, o.out);
  json out = to_json(report);
  out["hyperparams"] = to_json(o.hp);
  out["weights"] = o.out;
  if (!o.report.empty()) write_text(o.report, out.dump(2) + "\n");
  log.info("trained", {{"best_epoch", report.best_epoch}, {"best_validation_loss", report.best_validation_loss}});
  std::cout << out.dump() << '\n';
  return 0;
}

int cmd_search(const Options& o, const Logger& log) {
  const Dataset d = load_dataset(o.dataset);
  const TrainData data = split_samples(d.records, o.validation);
  SearchSpace space;
  space.max_parameters = o.max_params;
  const SearchResult result = hyperparameter_search(space, o.trials, o.repeats, data, o.budget, o.seed, default_trainer(),
                                                    [&](const TrialRecord& t) { log.info("trial", to_json(t)); });
  json trials = json::array();
  for (const auto& t : result.trials) trials.push_back(to_json(t));
  const json out{{"best", to_json(result.best)}, {"best_score", result.best_score}, {"trials", trials}};
  if (!o.out.empty()) write_text(o.out, out.dump(2) + "\n");
  std::cout << json{{"best", out["best"]}, {"best_score", result.best_score}}.dump() << '\n';
  return 0;
}

int cmd_eval(const Options& o, const Logger& log) {
  const Dataset d = load_dataset(o.dataset);
  const SurrogateModel model = load_model(o.weights);
  const std::vector<Sample> samples = to_samples(d.records);
  if (samples.empty()) throw Error(ErrorKind::EmptyDataset, o.dataset + " has no records");
  const double loss = mean_loss(model, samples);
  const double rel = mean_relative_error(model, samples);
  log.info("evaluated", {{"count", samples.size()}});
  std::cout << json{{"count", samples.size()}, {"mean_relative_error", rel}, {"loss", loss}}.dump() << '\n';
  return 0;
}

int cmd_bench(const Options& o, const Logger& log) {
  GeneratorConfig gen = o.gen;
  gen.seed = o.seed;
  gen.count = o.patterns;
  gen.resolution = parse_resolution(o.res);
  const Dataset d = build_dataset(gen);
  CompressionConfig cfg;
  cfg.schedule = parse_schedule(o.schedule.empty() ? "mult:0.99" : o.schedule);
  std::vector<TimGrid> reference(d.records.size());

  log.info("timing heuristic", {{"patterns", o.patterns}, {"runs", o.runs}, {"schedule", to_string(cfg.schedule)}});
  const TimingSummary heur = benchmark_time(
      [&](std::size_t k) { reference[k] = compress(d.records[k].dispensed, cfg).compressed; }, o.patterns, o.runs);

  std::vector<PatternRow> heur_rows;
  for (std::size_t k = 0; k < o.patterns; ++k) heur_rows.push_back({k, 0.0, 0.0, heur.t_min[k]});
  std::vector<MethodSummary> methods{{"heuristic", std::nullopt, heur.mean, heur.stddev, o.patterns, o.runs}};

  std::vector<PatternRow> surr_rows;
  if (!o.weights.empty()) {
    const SurrogateModel model = load_model(o.weights);
    if (model.resolution() != gen.resolution) {
      throw Error(ErrorKind::ShapeMismatch, "weights resolution differs from --res");
    }
    std::vector<TimGrid> predicted(d.records.size());
    SurrogatePredictor predictor(model);
    log.info("timing surrogate", {{"patterns", o.patterns}, {"runs", o.runs}});
    const TimingSummary surr = benchmark_time(
        [&](std::size_t k) { predicted[k] = predictor.compress(d.records[k].dispensed, 1.0); }, o.patterns,
        o.runs);
    std::vector<std::pair<TimGrid, TimGrid>> pairs;
    for (std::size_t k = 0; k < o.patterns; ++k) {
      const double e_comp = error_abs(reference[k], predicted[k]);
      const double e_rel = error_rel(reference[k], predicted[k]);
      surr_rows.push_back({k, e_comp, e_rel, surr.t_min[k]});
      pairs.emplace_back(reference[k], predicted[k]);
    }
    methods.push_back({"surrogate", error_mean(pairs), surr.mean, surr.stddev, o.patterns, o.runs});
  }

  if (!o.out.empty()) {
    write_text(o.out + ".heuristic.csv", report_csv(heur_rows));
    if (!surr_rows.empty()) write_text(o.out + ".surrogate.csv", report_csv(surr_rows));
    write_text(o.out + ".json", report_json(methods).dump(2) + "\n");
  }
  std::cout << report_table(methods);
  return 0;
}

sigset_t stop_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  return set;
}

int cmd_serve(const Options& o, const Logger& log) {
  std::optional<SurrogateModel> model;
  if (!o.weights.empty()) model = load_model(o.weights);
  auto service = std::make_shared<const Service>(std::move(model));

  // Route SIGINT/SIGTERM to a watcher thread so the server stops cleanly.
  const sigset_t signals = stop_signals();
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  HttpServer server(service);
  const int port = server.bind(o.host, o.port);
  std::thread watcher([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  log.info("serving", {{"host", o.host}, {"port", port}, {"model_loaded", service->model_loaded()}});
  std::cout << json{{"host", o.host}, {"port", port}}.dump() << std::endl;
  server.listen();
  pthread_kill(watcher.native_handle(), SIGTERM);
  watcher.join();
  log.info("stopped", {{"requests", server.requests_served()}});
  return 0;
}

void add_generator_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--min-segments", o.gen.min_segments, "Fewest segments per pattern")->capture_default_str();
  cmd->add_option("--max-segments", o.gen.max_segments, "Most segments per pattern")->capture_default_str();
  cmd->add_option("--margin", o.gen.margin, "Border cells kept free of pattern points")->capture_default_str();
  cmd->add_option("--feed-min", o.gen.feed_min, "Lowest feed rate")->capture_default_str();
  cmd->add_option("--feed-max", o.gen.feed_max, "Highest feed rate")->capture_default_str();
  cmd->add_option("--max-mass", o.gen.max_total_mass, "Redraw patterns depositing more than this, 0 = 0.3*H*W")
      ->capture_default_str();
  cmd->add_option("--threads", o.gen.threads, "Worker threads, 0 = all cores")->capture_default_str();
}

void add_arch_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--conv-layers", o.hp.conv_layers, "Hidden convolution layers")->capture_default_str();
  cmd->add_option("--filters", o.hp.filters, "Filters per hidden convolution")->capture_default_str();
  cmd->add_option("--kernel", o.hp.kernel, "Odd kernel size")->capture_default_str();
  cmd->add_option("--dense-layers", o.hp.dense_layers, "Dense H*W layers after the convolutions")
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  Logger log;
  CLI::App app{"Thermal interface material spreading: heuristic simulator and CNN surrogate"};
  app.set_version_flag("--version", std::string(TIMFLOW_VERSION));
  app.require_subcommand(1);
  app.add_option("--log", o.log_format, "Log format on stderr")
      ->check(CLI::IsMember({"text", "json"}))
      ->capture_default_str();

  auto* disc = app.add_subcommand("discretize", "Rasterize a pattern JSON file into a one-record TIMD file");
  disc->add_option("--pattern", o.pattern, "Pattern JSON file")->required()->check(CLI::ExistingFile);
  disc->add_option("--res", o.res, "Grid resolution HxW")->capture_default_str();
  disc->add_option("--out", o.out, "Output TIMD file")->required();

  auto* comp = app.add_subcommand("compress", "Compress every record of a TIMD file");
  comp->add_option("--in", o.in, "Input TIMD file")->required()->check(CLI::ExistingFile);
  comp->add_option("--model", o.model, "heuristic or surrogate")
      ->check(CLI::IsMember({"heuristic", "surrogate"}))
      ->capture_default_str();
  comp->add_option("--schedule", o.schedule, "Heuristic schedule: single, linear:K, mult:F (default mult:0.95)");
  comp->add_option("--boundary", o.boundary, "Heuristic boundary: error or crop:M (default error)");
  comp->add_option("--gap", o.gap, "Gap height")->capture_default_str()->check(CLI::PositiveNumber);
  comp->add_option("--weights", o.weights, "TIMW weights (surrogate)")->check(CLI::ExistingFile);
  comp->add_option("--out", o.out, "Output TIMD with compressed grids replaced");

  auto* gen = app.add_subcommand("gen-dataset", "Generate random patterns with heuristic targets");
  gen->add_option("--count", o.count, "Number of records")->required()->check(CLI::PositiveNumber);
  gen->add_option("--seed", o.seed, "Random seed")->required();
  gen->add_option("--out", o.out, "Output TIMD file (config sidecar at OUT.json)")->required();
  gen->add_option("--res", o.res, "Grid resolution HxW")->capture_default_str();
  add_generator_flags(gen, o);

  auto* tr = app.add_subcommand("train", "Train the surrogate on a dataset");
  tr->add_option("--dataset", o.dataset, "TIMD dataset")->required()->check(CLI::ExistingFile);
  tr->add_option("--epochs", o.hp.epochs, "Epochs")->capture_default_str()->check(CLI::NonNegativeNumber);
  tr->add_option("--lr", o.hp.learning_rate, "Adam learning rate")->capture_default_str()->check(CLI::NonNegativeNumber);
  tr->add_option("--batch", o.hp.batch_size, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
  tr->add_option("--seed", o.seed, "Initialisation and shuffling seed")->required();
  tr->add_option("--out", o.out, "Output TIMW weights")->required();
  tr->add_option("--validation", o.validation, "Trailing fraction held out for validation")->capture_default_str();
  tr->add_option("--report", o.report, "Write the training report JSON here");
  add_arch_flags(tr, o);

  auto* se = app.add_subcommand("search", "Random hyperparameter search");
  se->add_option("--trials", o.trials, "Sampled configurations")->required()->check(CLI::PositiveNumber);
  se->add_option("--repeats", o.repeats, "Seeded runs per configuration")->capture_default_str()->check(CLI::PositiveNumber);
  se->add_option("--dataset", o.dataset, "TIMD dataset")->required()->check(CLI::ExistingFile);
  se->add_option("--seed", o.seed, "Search seed")->required();
  se->add_option("--epochs", o.budget.epochs, "Epochs per run")->capture_default_str()->check(CLI::PositiveNumber);
  se->add_option("--train-count", o.budget.train_count, "Training samples per run")->capture_default_str();
  se->add_option("--validation-count", o.budget.validation_count, "Validation samples per run")->capture_default_str();
  se->add_option("--validation", o.validation, "Trailing fraction held out for validation")->capture_default_str();
  se->add_option("--max-params", o.max_params, "Skip configurations above this many weights, 0 = no cap")
      ->capture_default_str();
  se->add_option("--out", o.out, "Write all trial records as JSON");

  auto* ev = app.add_subcommand("eval", "Mean relative error and loss of weights on a dataset");
  ev->add_option("--dataset", o.dataset, "TIMD dataset")->required()->check(CLI::ExistingFile);
  ev->add_option("--weights", o.weights, "TIMW weights")->required()->check(CLI::ExistingFile);

  auto* be = app.add_subcommand("bench", "Time heuristic and surrogate on generated patterns");
  be->add_option("--patterns", o.patterns, "Number of patterns")->capture_default_str()->check(CLI::PositiveNumber);
  be->add_option("--runs", o.runs, "Runs per pattern")->capture_default_str()->check(CLI::PositiveNumber);
  be->add_option("--weights", o.weights, "TIMW weights; heuristic only when absent")->check(CLI::ExistingFile);
  be->add_option("--seed", o.seed, "Pattern seed")->required();
  be->add_option("--res", o.res, "Grid resolution HxW")->capture_default_str();
  be->add_option("--schedule", o.schedule, "Heuristic schedule (default mult:0.99)");
  be->add_option("--out", o.out, "Write OUT.heuristic.csv, OUT.surrogate.csv and OUT.json");
  add_generator_flags(be, o);

  auto* sv = app.add_subcommand("serve", "Run the HTTP/JSON service");
  if (const char* env = std::getenv("TIMFLOW_PORT")) o.port = std::atoi(env);
  if (const char* env = std::getenv("TIMFLOW_WEIGHTS")) o.weights = env;
  sv->add_option("--port", o.port, "Port, 0 picks a free one (env TIMFLOW_PORT)")
      ->capture_default_str()
      ->check(CLI::Range(0, 65535));
  sv->add_option("--host", o.host, "Bind address")->capture_default_str();
  sv->add_option("--weights", o.weights, "TIMW weights for the surrogate (env TIMFLOW_WEIGHTS)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }
  log.json_mode = o.log_format == "json";

  try {
    if (*disc) return cmd_discretize(o, log);
    if (*comp) return cmd_compress(o, log);
    if (*gen) return cmd_gen_dataset(o, log);
    if (*tr) return cmd_train(o, log);
    if (*se) return cmd_search(o, log);
    if (*ev) return cmd_eval(o, log);
    if (*be) return cmd_bench(o, log);
    if (*sv) return cmd_serve(o, log);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    log.error(e.what(), {{"kind", e.name()}});
    return kExitRuntime;
  } catch (const std::exception& e) {
    log.error(e.what(), {{"kind", "InternalError"}});
    return kExitRuntime;
  }
  return kExitUsage;
}
