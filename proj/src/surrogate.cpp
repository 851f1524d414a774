#include "timflow/surrogate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "timflow/error.hpp"
#include "timflow/metrics.hpp"

namespace timflow {

namespace {

// Flattened float copies of a sample list, scaled for the network.
struct Prepared {
  std::size_t cells = 0;
  std::vector<float> inputs;
  std::vector<float> targets;
  std::size_t size() const { return cells == 0 ? 0 : inputs.size() / cells; }
  std::span<const float> input(std::size_t i) const { return {inputs.data() + i * cells, cells}; }
  std::span<const float> target(std::size_t i) const { return {targets.data() + i * cells, cells}; }
};

Prepared prepare(std::span<const Sample> samples, const GridSpec& res, double input_scale) {
  Prepared p;
  p.cells = res.height * res.width;
  p.inputs.reserve(samples.size() * p.cells);
  p.targets.reserve(samples.size() * p.cells);
  const double inv = 1.0 / input_scale;
  for (const Sample& s : samples) {
    if (s.input.spec() != res || s.target.spec() != res) {
      throw Error(ErrorKind::ShapeMismatch, "samples have mixed resolutions");
    }
    for (double a : s.input.amounts()) p.inputs.push_back(static_cast<float>(a * inv));
    for (double t : s.target.amounts()) p.targets.push_back(static_cast<float>(t));
  }
  return p;
}

double evaluate_loss(Evaluator<float>& eval, const Prepared& set) {
  double total = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto out = eval.forward(set.input(i));
    double loss = 0.0;
    for (std::size_t j = 0; j < set.cells; ++j) {
      const double p = std::clamp(static_cast<double>(out[j]), 1e-7, 1.0 - 1e-7);
      const double t = set.targets[i * set.cells + j];
      loss -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
    total += loss / static_cast<double>(set.cells);
  }
  return total / static_cast<double>(set.size());
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::size_t count_parameters(const Hyperparams& hp, const GridSpec& res) {
  std::size_t n = 0;
  for (const LayerShape& l : layer_shapes(hp, res)) {
    const std::size_t taps = l.kind == LayerShape::Kind::Conv ? l.kernel * l.kernel : 1;
    n += l.out * l.in * taps + l.out;
  }
  return n;
}

std::vector<Sample> head(const std::vector<Sample>& v, std::size_t n) {
  return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(std::min(n, v.size()))};
}

}  // namespace

template <typename T>
Adam<T>::Adam(const std::vector<Tensor<T>>& like, double learning_rate, AdamConfig config)
    : lr_(learning_rate), cfg_(config), m_(zeros_like(like)), v_(zeros_like(like)) {}

template <typename T>
void Adam<T>::step(std::vector<Tensor<T>>& weights, const std::vector<Tensor<T>>& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const T b1 = static_cast<T>(cfg_.beta1);
  const T b2 = static_cast<T>(cfg_.beta2);
  const T step = static_cast<T>(lr_ / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(cfg_.epsilon);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    T* w = weights[i].values.data();
    const T* g = grads[i].values.data();
    T* m = m_[i].values.data();
    T* v = v_[i].values.data();
    const std::size_t n = weights[i].values.size();
    for (std::size_t j = 0; j < n; ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      w[j] -= step * m[j] / (std::sqrt(v[j] * inv_c2) + eps);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

nlohmann::json to_json(const EpochLog& log) {
  return {{"epoch", log.epoch},
          {"train_loss", log.train_loss},
          {"validation_loss", log.validation_loss},
          {"seconds", log.seconds}};
}

nlohmann::json to_json(const TrainReport& report) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const EpochLog& e : report.epochs) epochs.push_back(to_json(e));
  return {{"initial_train_loss", report.initial_train_loss},
          {"initial_validation_loss", report.initial_validation_loss},
          {"epochs", std::move(epochs)},
          {"best_epoch", report.best_epoch},
          {"best_validation_loss", report.best_validation_loss},
          {"wall_seconds", report.wall_seconds},
          {"validation_mean_rel_error", report.validation_mean_rel_error}};
}

double input_scale_for(std::span<const Sample> samples) {
  double scale = 0.0;
  for (const Sample& s : samples) scale = std::max(scale, s.input.max());
  return scale > 0.0 ? scale : 1.0;
}

std::pair<SurrogateModel, TrainReport> train(const TrainData& data, const Hyperparams& hp,
                                             std::uint64_t seed, const TrainOptions& options) {
  if (data.train.empty()) throw Error(ErrorKind::EmptyDataset, "training split is empty");
  if (data.validation.empty()) throw Error(ErrorKind::EmptyDataset, "validation split is empty");
  hp.validate();
  const auto started = std::chrono::steady_clock::now();
  const GridSpec res = data.train.front().input.spec();
  const double scale = input_scale_for(data.train);

  SurrogateModel model = SurrogateModel::initialized(hp, res, scale, seed);
  const Prepared train_set = prepare(data.train, res, scale);
  const Prepared val_set = prepare(data.validation, res, scale);

  Evaluator<float> eval(model);
  std::vector<Tensor<float>> grads = zeros_like(model.weights());
  Adam<float> adam(model.weights(), hp.learning_rate);
  std::seed_seq shuffle_seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                            0x5eedu};
  std::mt19937_64 shuffle_rng(shuffle_seq);

  TrainReport report;
  report.initial_train_loss = evaluate_loss(eval, train_set);
  report.initial_validation_loss = evaluate_loss(eval, val_set);
  report.best_validation_loss = report.initial_validation_loss;
  std::vector<Tensor<float>> best = model.weights();

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(hp.batch_size);

  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      for (auto& g : grads) std::fill(g.values.begin(), g.values.end(), 0.0f);
      double batch_loss = 0.0;
      for (std::size_t k = start; k < stop; ++k) {
        batch_loss += eval.accumulate_gradients(train_set.input(order[k]), train_set.target(order[k]), grads);
      }
      if (!std::isfinite(batch_loss)) {
        throw Error(ErrorKind::DivergedLoss, "non-finite training loss in epoch " + std::to_string(epoch));
      }
      loss_sum += batch_loss;
      const float inv = 1.0f / static_cast<float>(stop - start);
      for (auto& g : grads)
        for (float& v : g.values) v *= inv;
      adam.step(model.weights(), grads);
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(order.size());
    log.validation_loss = evaluate_loss(eval, val_set);
    if (!std::isfinite(log.validation_loss)) {
      throw Error(ErrorKind::DivergedLoss, "non-finite validation loss in epoch " + std::to_string(epoch));
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    if (log.validation_loss < report.best_validation_loss) {
      report.best_validation_loss = log.validation_loss;
      report.best_epoch = epoch;
      best = model.weights();
    }
    report.epochs.push_back(log);
    if (options.on_epoch) options.on_epoch(log);
  }

  model.weights() = std::move(best);
  if (options.evaluate_relative_error) {
    report.validation_mean_rel_error = mean_relative_error(model, data.validation);
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(model), std::move(report)};
}

double mean_loss(const SurrogateModel& model, std::span<const Sample> samples) {
  if (samples.empty()) throw Error(ErrorKind::EmptyDataset, "no samples to evaluate");
  const Prepared set = prepare(samples, model.resolution(), model.input_scale());
  Evaluator<float> eval(model);
  return evaluate_loss(eval, set);
}

double mean_relative_error(const SurrogateModel& model, std::span<const Sample> samples) {
  if (samples.empty()) throw Error(ErrorKind::EmptyDataset, "no samples to evaluate");
  Evaluator<float> eval(model);
  double total = 0.0;
  for (const Sample& s : samples) {
    const std::vector<float> x = scaled_input(model, s.input);
    const auto y = eval.forward(x);
    const TimGrid prediction(s.input.height(), s.input.width(), std::vector<double>(y.begin(), y.end()));
    total += error_rel(s.target, prediction);
  }
  return total / static_cast<double>(samples.size());
}

TimGrid predict_compressed(const SurrogateModel& model, const DispensePattern& pattern, double gap) {
  const TimGrid dispensed = discretize(pattern, model.resolution());
  const TimGrid scaled = scale_for_gap(dispensed, gap);
  return forward(model, scaled).scaled(gap);
}

SurrogatePredictor::SurrogatePredictor(const SurrogateModel& model)
    : model_(&model), eval_(model), input_(model.resolution().height * model.resolution().width) {}

TimGrid SurrogatePredictor::compress(const TimGrid& dispensed, double gap) {
  if (!(gap > 0.0) || !std::isfinite(gap)) throw Error(ErrorKind::NonPositiveGap, "gap must be positive");
  if (dispensed.spec() != model_->resolution()) {
    throw Error(ErrorKind::ShapeMismatch, "grid resolution differs from the model's");
  }
  // Same rounding as scale_for_gap followed by scaled_input.
  const double inv = 1.0 / model_->input_scale();
  for (std::size_t i = 0; i < input_.size(); ++i) {
    input_[i] = static_cast<float>((dispensed.amounts()[i] / gap) * inv);
  }
  const std::span<const float> y = eval_.forward(input_);
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = static_cast<double>(y[i]) * gap;
  return TimGrid(dispensed.height(), dispensed.width(), std::move(out));
}

nlohmann::json to_json(const Hyperparams& hp) {
  return {{"conv_layers", hp.conv_layers},     {"filters", hp.filters},
          {"kernel", hp.kernel},               {"dense_layers", hp.dense_layers},
          {"dense_width", hp.dense_width},     {"batch_size", hp.batch_size},
          {"learning_rate", hp.learning_rate}, {"epochs", hp.epochs}};
}

Hyperparams hyperparams_from_json(const nlohmann::json& j) {
  try {
    Hyperparams hp;
    hp.conv_layers = j.at("conv_layers").get<int>();
    hp.filters = j.at("filters").get<int>();
    hp.kernel = j.at("kernel").get<int>();
    hp.dense_layers = j.at("dense_layers").get<int>();
    hp.dense_width = j.at("dense_width").get<std::size_t>();
    hp.batch_size = j.at("batch_size").get<int>();
    hp.learning_rate = j.at("learning_rate").get<double>();
    hp.epochs = j.at("epochs").get<int>();
    hp.validate();
    return hp;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("bad hyperparameter block: ") + e.what());
  }
}

nlohmann::json to_json(const TrialRecord& trial) {
  nlohmann::json losses = nlohmann::json::array();
  for (const auto& l : trial.losses) losses.push_back(l ? nlohmann::json(*l) : nlohmann::json(nullptr));
  return {{"trial", trial.index},
          {"hyperparams", to_json(trial.hyperparams)},
          {"seeds", trial.seeds},
          {"losses", std::move(losses)},
          {"failures", trial.failures},
          {"score", trial.score ? nlohmann::json(*trial.score) : nlohmann::json(nullptr)}};
}

Trainer default_trainer() {
  return [](const TrainData& data, const Hyperparams& hp, std::uint64_t seed) {
    TrainOptions options;
    options.evaluate_relative_error = false;
    return train(data, hp, seed, options).second.best_validation_loss;
  };
}

Hyperparams sample_hyperparams(const SearchSpace& space, std::mt19937_64& rng) {
  auto pick = [&rng](const std::vector<int>& choices) {
    if (choices.empty()) throw Error(ErrorKind::InvalidArgument, "empty choice list in search space");
    std::uniform_int_distribution<std::size_t> d(0, choices.size() - 1);
    return choices[d(rng)];
  };
  if (space.conv_min > space.conv_max || space.dense_min > space.dense_max ||
      !(space.lr_min > 0.0 && space.lr_min <= space.lr_max)) {
    throw Error(ErrorKind::InvalidArgument, "inconsistent search space bounds");
  }
  Hyperparams hp;
  hp.conv_layers = std::uniform_int_distribution<int>(space.conv_min, space.conv_max)(rng);
  hp.filters = pick(space.filters);
  hp.kernel = pick(space.kernels);
  hp.dense_layers = std::uniform_int_distribution<int>(space.dense_min, space.dense_max)(rng);
  hp.batch_size = pick(space.batch_sizes);
  const double lo = std::log(space.lr_min);
  const double hi = std::log(space.lr_max);
  hp.learning_rate = std::exp(std::uniform_real_distribution<double>(lo, hi)(rng));
  return hp;
}

SearchResult evaluate_candidates(std::span<const Hyperparams> candidates, int repeats,
                                 const TrainData& data, const SearchBudget& budget, std::uint64_t seed,
                                 const Trainer& trainer,
                                 const std::function<void(const TrialRecord&)>& on_trial,
                                 std::size_t max_parameters) {
  if (candidates.empty()) throw Error(ErrorKind::InvalidArgument, "at least one trial is required");
  if (repeats < 1) throw Error(ErrorKind::InvalidArgument, "repeats must be at least 1");
  if (data.train.empty() || data.validation.empty()) {
    throw Error(ErrorKind::EmptyDataset, "search needs training and validation samples");
  }
  const TrainData subset{head(data.train, budget.train_count), head(data.validation, budget.validation_count)};
  const GridSpec res = subset.train.front().input.spec();

  SearchResult result;
  result.best_score = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    TrialRecord trial;
    trial.index = i;
    trial.hyperparams = candidates[i];
    trial.hyperparams.epochs = budget.epochs;
    bool too_large = false;
    try {
      too_large = max_parameters > 0 && count_parameters(trial.hyperparams, res) > max_parameters;
    } catch (const std::exception& e) {
      trial.failures.push_back(e.what());
      too_large = true;
    }
    if (too_large && trial.failures.empty()) {
      trial.failures.push_back("exceeds parameter cap of " + std::to_string(max_parameters));
    }
    for (int r = 0; r < repeats && !too_large; ++r) {
      const std::uint64_t run_seed = splitmix64(seed ^ splitmix64((i << 16) + static_cast<std::uint64_t>(r)));
      trial.seeds.push_back(run_seed);
      try {
        const double loss = trainer(subset, trial.hyperparams, run_seed);
        if (!std::isfinite(loss)) throw Error(ErrorKind::DivergedLoss, "non-finite validation loss");
        trial.losses.emplace_back(loss);
        if (!trial.score || loss < *trial.score) trial.score = loss;
      } catch (const std::exception& e) {
        trial.losses.emplace_back(std::nullopt);
        trial.failures.push_back(e.what());
      }
    }
    if (trial.score && *trial.score < result.best_score) {
      result.best = trial.hyperparams;
      result.best_score = *trial.score;
    }
    if (on_trial) on_trial(trial);
    result.trials.push_back(std::move(trial));
  }
  if (!std::isfinite(result.best_score)) {
    throw Error(ErrorKind::DivergedLoss, "every search trial failed");
  }
  return result;
}

SearchResult hyperparameter_search(const SearchSpace& space, int trials, int repeats,
                                   const TrainData& data, const SearchBudget& budget, std::uint64_t seed,
                                   const Trainer& trainer,
                                   const std::function<void(const TrialRecord&)>& on_trial) {
  if (trials < 1) throw Error(ErrorKind::InvalidArgument, "trials must be at least 1");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x5ea7u};
  std::mt19937_64 rng(seq);
  std::vector<Hyperparams> candidates;
  for (int i = 0; i < trials; ++i) candidates.push_back(sample_hyperparams(space, rng));
  return evaluate_candidates(candidates, repeats, data, budget, seed, trainer, on_trial,
                             space.max_parameters);
}

}  // namespace timflow
