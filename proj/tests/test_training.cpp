#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "timflow/dataset.hpp"
#include "timflow/error.hpp"
#include "timflow/surrogate.hpp"
#include "timflow/weights_io.hpp"

using namespace timflow;

namespace {

const Dataset& small_dataset() {
  static const Dataset d = [] {
    GeneratorConfig c;
    c.seed = 12;
    c.count = 60;
    c.resolution = {16, 16};
    c.margin = 3;
    c.max_segments = 3;
    return build_dataset(c);
  }();
  return d;
}

TrainData small_split(std::size_t n_train, std::size_t n_val) {
  const auto& r = small_dataset().records;
  TrainData data;
  for (std::size_t i = 0; i < n_train; ++i) data.train.push_back({r[i].dispensed, r[i].compressed});
  for (std::size_t i = 0; i < n_val; ++i) data.validation.push_back({r[50 + i].dispensed, r[50 + i].compressed});
  return data;
}

Hyperparams small_hp(double lr, int epochs) {
  Hyperparams hp;
  hp.conv_layers = 2;
  hp.filters = 8;
  hp.kernel = 3;
  hp.batch_size = 8;
  hp.learning_rate = lr;
  hp.epochs = epochs;
  return hp;
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<Tensor<double>> w{{{3}, {1.0, -2.0, 0.5}}};
  const std::vector<Tensor<double>> g{{{3}, {0.3, -4.0, 0.0}}};
  Adam<double> adam(w, 0.01);
  adam.step(w, g);
  // Bias-corrected first step is lr * g / (|g| + eps').
  EXPECT_NEAR(w[0].values[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(w[0].values[1], -2.0 + 0.01, 1e-9);
  EXPECT_EQ(w[0].values[2], 0.5);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Adam, MatchesScalarRecurrence) {
  std::vector<Tensor<double>> w{{{1}, {0.7}}};
  Adam<double> adam(w, 0.05);
  double x = 0.7, m = 0, v = 0;
  for (int t = 1; t <= 20; ++t) {
    const double grad = 2 * x - 1 + 0.1 * t;
    adam.step(w, {{{1}, {2 * w[0].values[0] - 1 + 0.1 * t}}});
    m = 0.9 * m + 0.1 * grad;
    v = 0.999 * v + 0.001 * grad * grad;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    x -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(w[0].values[0], x, 1e-12) << t;
  }
}

TEST(Train, RejectsEmptySplits) {
  TrainData data = small_split(4, 2);
  data.validation.clear();
  EXPECT_THROW(train(data, small_hp(1e-3, 1), 1), Error);
}

TEST(Train, ZeroLearningRateKeepsWeights) {
  const TrainData data = small_split(8, 4);
  const Hyperparams hp = small_hp(0.0, 1);
  auto [model, report] = train(data, hp, 3);
  const auto init = SurrogateModel::initialized(hp, {16, 16}, input_scale_for(data.train), 3);
  EXPECT_TRUE(model == init);
  EXPECT_EQ(report.best_epoch, 0);
  EXPECT_EQ(report.epochs.size(), 1u);
  EXPECT_DOUBLE_EQ(report.epochs[0].validation_loss, report.initial_validation_loss);
}

TEST(Train, SameSeedSameWeights) {
  const TrainData data = small_split(24, 6);
  const Hyperparams hp = small_hp(3e-3, 2);
  auto a = train(data, hp, 9).first;
  auto b = train(data, hp, 9).first;
  EXPECT_TRUE(a == b);
  auto c = train(data, hp, 10).first;
  EXPECT_FALSE(a == c);
}

TEST(Train, LossDecreasesOnTinyDataset) {
  const TrainData data = small_split(50, 10);
  Hyperparams hp = small_hp(3e-3, 6);
  std::vector<double> losses;
  TrainOptions opts;
  opts.on_epoch = [&](const EpochLog& e) { losses.push_back(e.train_loss); };
  auto [model, report] = train(data, hp, 4, opts);
  ASSERT_EQ(losses.size(), 6u);
  EXPECT_LT(losses.back(), report.initial_train_loss);
  EXPECT_LT(report.best_validation_loss, report.initial_validation_loss);
  EXPECT_GT(report.best_epoch, 0);
  EXPECT_NEAR(mean_loss(model, data.validation), report.best_validation_loss, 1e-6);
}

TEST(Predict, PredictorMatchesComposition) {
  const auto model = SurrogateModel::initialized(small_hp(1e-3, 1), {16, 16}, 4.0, 8);
  SurrogatePredictor predictor(model);
  for (std::size_t i = 0; i < 5; ++i) {
    const Record& r = small_dataset().records[i];
    for (double gap : {1.0, 0.5, 1.7}) {
      const TimGrid a = predict_compressed(model, r.pattern, gap);
      const TimGrid b = predictor.compress(discretize(r.pattern, {16, 16}), gap);
      EXPECT_EQ(a, b);
    }
  }
  const TimGrid g1 = predict_compressed(model, small_dataset().records[0].pattern, 1.0);
  EXPECT_EQ(g1, forward(model, discretize(small_dataset().records[0].pattern, {16, 16})));
}

TEST(Predict, ZeroFeedGivesModelResponseToZeroInput) {
  const auto model = SurrogateModel::initialized(small_hp(1e-3, 1), {16, 16}, 4.0, 8);
  const DispensePattern p({{4, 4}, {10, 10}}, {0.0});
  EXPECT_EQ(predict_compressed(model, p, 1.0), forward(model, TimGrid(16, 16)));
}

// Search.

TEST(Search, SingleTrialReturnsItsConfiguration) {
  const TrainData data = small_split(8, 4);
  SearchSpace space;
  space.filters = {8};
  space.conv_max = 2;
  const Trainer fake = [](const TrainData&, const Hyperparams& hp, std::uint64_t) { return hp.learning_rate; };
  const SearchResult r = hyperparameter_search(space, 1, 2, data, {1, 8, 4}, 5, fake);
  ASSERT_EQ(r.trials.size(), 1u);
  EXPECT_EQ(r.best, r.trials[0].hyperparams);
  EXPECT_EQ(r.best.filters, 8);
  EXPECT_EQ(r.best.conv_layers, 2);
  EXPECT_EQ(r.best.epochs, 1);
  EXPECT_EQ(r.best_score, r.best.learning_rate);
  const SearchResult again = hyperparameter_search(space, 1, 2, data, {1, 8, 4}, 5, fake);
  EXPECT_EQ(again.best, r.best);
}

TEST(Search, SamplesStayInSpace) {
  SearchSpace space;
  std::mt19937_64 rng(6);
  for (int i = 0; i < 2000; ++i) {
    const Hyperparams hp = sample_hyperparams(space, rng);
    EXPECT_GE(hp.conv_layers, 2);
    EXPECT_LE(hp.conv_layers, 6);
    EXPECT_GE(hp.dense_layers, 0);
    EXPECT_LE(hp.dense_layers, 2);
    EXPECT_GE(hp.learning_rate, 1e-5);
    EXPECT_LE(hp.learning_rate, 1e-2);
    EXPECT_TRUE(hp.kernel == 3 || hp.kernel == 5);
    EXPECT_TRUE(hp.batch_size == 8 || hp.batch_size == 32 || hp.batch_size == 128);
  }
}

TEST(Search, ScoreIsMinOverSurvivingRepeats) {
  const TrainData data = small_split(8, 4);
  const std::vector<Hyperparams> candidates{small_hp(1e-3, 1)};
  int call = 0;
  const Trainer fake = [&](const TrainData&, const Hyperparams&, std::uint64_t) -> double {
    const int k = call++;
    if (k == 1) throw Error(ErrorKind::DivergedLoss, "seed diverged");
    return k == 0 ? 0.5 : 0.3;
  };
  const SearchResult r = evaluate_candidates(candidates, 3, data, {1, 8, 4}, 1, fake);
  ASSERT_EQ(r.trials.size(), 1u);
  const TrialRecord& t = r.trials[0];
  ASSERT_EQ(t.losses.size(), 3u);
  EXPECT_FALSE(t.losses[1].has_value());
  EXPECT_EQ(t.failures.size(), 1u);
  ASSERT_TRUE(t.score.has_value());
  EXPECT_EQ(*t.score, 0.3);
  EXPECT_EQ(r.best_score, 0.3);
  EXPECT_EQ(t.seeds.size(), 3u);
  EXPECT_NE(t.seeds[0], t.seeds[1]);
}

TEST(Search, AllFailedIsFatal) {
  const TrainData data = small_split(8, 4);
  const std::vector<Hyperparams> candidates{small_hp(1e-3, 1), small_hp(1e-2, 1)};
  const Trainer fake = [](const TrainData&, const Hyperparams&, std::uint64_t) -> double {
    throw Error(ErrorKind::DivergedLoss, "nope");
  };
  EXPECT_THROW(evaluate_candidates(candidates, 2, data, {1, 8, 4}, 1, fake), Error);
}

TEST(Search, LearningTrialBeatsFrozenTrial) {
  const TrainData data = small_split(50, 10);
  std::vector<Hyperparams> candidates{small_hp(0.0, 2), small_hp(1e-3, 2)};
  const SearchResult r = evaluate_candidates(candidates, 1, data, {2, 50, 10}, 3);
  EXPECT_EQ(r.best.learning_rate, 1e-3);
  ASSERT_TRUE(r.trials[0].score && r.trials[1].score);
  EXPECT_LT(*r.trials[1].score, *r.trials[0].score);
}

TEST(Search, ParameterCapSkipsLargeTrials) {
  const TrainData data = small_split(8, 4);
  Hyperparams big = small_hp(1e-3, 1);
  big.filters = 512;
  const std::vector<Hyperparams> candidates{big, small_hp(1e-3, 1)};
  const Trainer fake = [](const TrainData&, const Hyperparams&, std::uint64_t) { return 1.0; };
  const SearchResult r = evaluate_candidates(candidates, 1, data, {1, 8, 4}, 1, fake, {}, 10000);
  EXPECT_FALSE(r.trials[0].score.has_value());
  EXPECT_EQ(r.best.filters, 8);
}

// Weights file.

TEST(Weights, RoundTripIsExact) {
  Hyperparams hp = small_hp(2e-3, 3);
  hp.dense_layers = 1;
  const auto model = SurrogateModel::initialized(hp, {6, 5}, 3.25, 77);
  const SurrogateModel back = deserialize_model(serialize_model(model));
  EXPECT_TRUE(back == model);
  EXPECT_EQ(back.input_scale(), 3.25);
  EXPECT_EQ(back.hyperparams(), hp);
  const auto path = (std::filesystem::temp_directory_path() / "timflow_test.timw").string();
  save_model(model, path);
  EXPECT_TRUE(load_model(path) == model);
  std::filesystem::remove(path);
}

TEST(Weights, CorruptFilesAreFormatErrors) {
  const auto model = SurrogateModel::initialized(small_hp(1e-3, 1), {4, 4}, 1.0, 1);
  const std::string bytes = serialize_model(model);
  auto kind_of = [](const std::string& b) {
    try {
      deserialize_model(b);
    } catch (const Error& e) {
      return std::string(e.what()) + "|" + std::string(e.name());
    }
    return std::string("ok");
  };
  EXPECT_NE(kind_of(bytes.substr(0, bytes.size() - 3)).find("FormatError"), std::string::npos);
  EXPECT_NE(kind_of(bytes + "x").find("FormatError"), std::string::npos);
  const std::string wrong = "TIMD" + bytes.substr(4);
  const std::string msg = kind_of(wrong);
  EXPECT_NE(msg.find("FormatError"), std::string::npos);
  EXPECT_NE(msg.find("TIMW"), std::string::npos);
  EXPECT_THROW(load_model("/nonexistent/dir/w.timw"), Error);
}
