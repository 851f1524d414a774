#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "timflow/network.hpp"
#include "timflow/pattern.hpp"

namespace timflow {

struct Sample {
  TimGrid input;   // dispensed state
  TimGrid target;  // compressed state, cells in [0, 1]
};

struct TrainData {
  std::vector<Sample> train;
  std::vector<Sample> validation;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
class Adam {
 public:
  Adam(const std::vector<Tensor<T>>& like, double learning_rate, AdamConfig config = {});
  void step(std::vector<Tensor<T>>& weights, const std::vector<Tensor<T>>& grads);
  long steps() const noexcept { return t_; }

 private:
  double lr_;
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  double initial_train_loss = 0.0;
  double initial_validation_loss = 0.0;
  std::vector<EpochLog> epochs;
  /// 0 when no epoch improved on the initial weights.
  int best_epoch = 0;
  double best_validation_loss = 0.0;
  double wall_seconds = 0.0;
  /// Mean relative error of the returned model against validation targets.
  double validation_mean_rel_error = 0.0;
};

nlohmann::json to_json(const EpochLog& log);
nlohmann::json to_json(const TrainReport& report);

struct TrainOptions {
  std::function<void(const EpochLog&)> on_epoch;
  /// Skips the final relative-error evaluation (used by the search loop).
  bool evaluate_relative_error = true;
};

/// Largest dispensed amount in the training split (1 if all zero).
double input_scale_for(std::span<const Sample> samples);

/// Adam on mean binary cross-entropy; weights He/Glorot initialised from
/// `seed` and batches shuffled from the same seed. Returns the weights with
/// the lowest validation loss seen (initial weights included).
std::pair<SurrogateModel, TrainReport> train(const TrainData& data, const Hyperparams& hp,
                                             std::uint64_t seed, const TrainOptions& options = {});

/// Mean BCE of the model over samples.
double mean_loss(const SurrogateModel& model, std::span<const Sample> samples);
/// Mean relative error of model outputs against sample targets.
double mean_relative_error(const SurrogateModel& model, std::span<const Sample> samples);

/// discretize -> scale_for_gap -> forward -> multiply by gap.
TimGrid predict_compressed(const SurrogateModel& model, const DispensePattern& pattern, double gap);

/// Holds evaluation buffers so repeated predictions allocate nothing; the
/// model must outlive it. One instance per thread.
class SurrogatePredictor {
 public:
  explicit SurrogatePredictor(const SurrogateModel& model);
  /// scale_for_gap -> forward -> multiply by gap, on a rasterized grid.
  TimGrid compress(const TimGrid& dispensed, double gap);

 private:
  const SurrogateModel* model_;
  Evaluator<float> eval_;
  std::vector<float> input_;
};

struct SearchSpace {
  int conv_min = 2;
  int conv_max = 6;
  std::vector<int> filters{8, 32, 128, 512};
  std::vector<int> kernels{3, 5};
  int dense_min = 0;
  int dense_max = 2;
  std::vector<int> batch_sizes{8, 32, 128};
  double lr_min = 1e-5;
  double lr_max = 1e-2;
  /// Trials whose networks exceed this many parameters are recorded as
  /// failed rather than trained; 0 disables the cap.
  std::size_t max_parameters = 0;
};

struct SearchBudget {
  int epochs = 1;
  std::size_t train_count = 16000;
  std::size_t validation_count = 4000;
};

struct TrialRecord {
  std::size_t index = 0;
  Hyperparams hyperparams;
  std::vector<std::uint64_t> seeds;
  std::vector<std::optional<double>> losses;  // nullopt for failed runs
  std::vector<std::string> failures;
  std::optional<double> score;  // min over successful runs
};

nlohmann::json to_json(const Hyperparams& hp);
Hyperparams hyperparams_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrialRecord& trial);

struct SearchResult {
  Hyperparams best;
  double best_score = 0.0;
  std::vector<TrialRecord> trials;
};

/// Trains one model and returns its best validation loss.
using Trainer = std::function<double(const TrainData&, const Hyperparams&, std::uint64_t seed)>;
Trainer default_trainer();

/// Draws a configuration; the learning rate is log-uniform.
Hyperparams sample_hyperparams(const SearchSpace& space, std::mt19937_64& rng);

/// Scores each candidate by the minimum validation loss over `repeats`
/// seeded runs on the budget subset. Failed runs are logged, not fatal;
/// throws DivergedLoss only if every trial failed.
SearchResult evaluate_candidates(std::span<const Hyperparams> candidates, int repeats,
                                 const TrainData& data, const SearchBudget& budget, std::uint64_t seed,
                                 const Trainer& trainer = default_trainer(),
                                 const std::function<void(const TrialRecord&)>& on_trial = {},
                                 std::size_t max_parameters = 0);

/// Random search over `space` with `trials` sampled configurations.
SearchResult hyperparameter_search(const SearchSpace& space, int trials, int repeats,
                                   const TrainData& data, const SearchBudget& budget, std::uint64_t seed,
                                   const Trainer& trainer = default_trainer(),
                                   const std::function<void(const TrialRecord&)>& on_trial = {});

}  // namespace timflow
