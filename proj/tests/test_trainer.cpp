#include <doctest.h>

#include <cmath>
#include <numbers>

#include "tsxil/error.hpp"
#include "tsxil/random.hpp"
#include "tsxil/trainer.hpp"

using namespace tsxil;

namespace {

FcnConfig small_fcn() {
  FcnConfig c;
  c.channels = {4, 4};
  c.kernels = {5, 3};
  return c;
}

// Class 1 series are shifted up by `gap`, class 0 down.
TrainingSet separable(std::size_t n, std::size_t t, double gap, std::uint64_t seed) {
  Rng rng(seed);
  TrainingSet s;
  s.num_classes = 2;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % 2;
    std::vector<double> x(t);
    for (auto& v : x) v = rng.normal() * 0.5 + (y ? gap : -gap);
    s.inputs.push_back(x);
    s.labels.push_back(y);
    s.ids.push_back(std::to_string(i));
  }
  return s;
}

TrainConfig quick(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 16;
  c.learning_rate = 0.05;
  c.seed = 3;
  c.ig.steps = 4;
  return c;
}

}  // namespace

TEST_CASE("balanced accuracy examples") {
  CHECK(balanced_accuracy({0, 1, 1, 0}, {0, 1, 1, 0}).value == 1.0);
  CHECK(balanced_accuracy({1, 1, 1, 1}, {0, 1, 1, 0}).value == 0.5);
  const auto three = balanced_accuracy({0, 0, 1, 0, 0, 0}, {0, 0, 1, 1, 2, 2});
  CHECK(three.value == doctest::Approx(0.5).epsilon(1e-15));
  const auto missing = balanced_accuracy({0, 0}, {0, 0}, 2);
  CHECK(missing.value == 1.0);
  CHECK(missing.warnings.size() == 1);
  CHECK_THROWS_AS(balanced_accuracy({0}, {0, 1}), ShapeError);
}

TEST_CASE("regression metric examples") {
  const auto zero = regression_metrics({{1, 2}}, {{1, 2}});
  CHECK(zero.mse == 0.0);
  CHECK(zero.mae == 0.0);
  const auto one = regression_metrics({{1, -1}}, {{0, 0}});
  CHECK(one.mse == 1.0);
  CHECK(one.mae == 1.0);
  const auto skew = regression_metrics({{3, 0, 0, 0}}, {{0, 0, 0, 0}});
  CHECK(skew.mse == 2.25);
  CHECK(skew.mae == 0.75);
}

TEST_CASE("plain training fits a separable problem") {
  const auto data = separable(64, 16, 1.0, 1);
  FcnClassifier model(small_fcn(), 2);
  const auto r = train(model, data, nullptr, quick(15));
  CHECK(r.epochs_run == 15);
  CHECK(evaluate(model, data) >= 0.99);
  CHECK(r.log.back().loss.ra < r.log.front().loss.ra);
}

TEST_CASE("all-zero feedback leaves the trajectory bitwise unchanged") {
  const auto data = separable(32, 16, 0.5, 2);
  FeedbackSet zeros;
  for (std::size_t i = 0; i < data.size(); ++i) {
    zeros.time.push_back({data.ids[i], std::vector<std::uint8_t>(16, 0)});
    zeros.freq.push_back({data.ids[i], std::vector<std::uint8_t>(16, 0), std::vector<std::uint8_t>(16, 0)});
  }
  auto cfg = quick(3);
  FcnClassifier a(small_fcn(), 5), b(small_fcn(), 5);
  train(a, data, nullptr, cfg);
  cfg.loss.lambda_sp = 50.0;
  cfg.loss.lambda_fr = 5.0;
  train(b, data, &zeros, cfg);
  CHECK(a.flat_parameters() == b.flat_parameters());
}

TEST_CASE("right-reason training suppresses masked attributions") {
  // The shortcut lives at positions 0..3: a constant +-2 block.
  auto data = separable(48, 16, 0.5, 4);
  FeedbackSet fs;
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::vector<std::uint8_t> bits(16, 0);
    for (std::size_t t = 0; t < 4; ++t) {
      data.inputs[i][t] = data.labels[i] ? 2.0 : -2.0;
      bits[t] = 1;
    }
    fs.time.push_back({data.ids[i], bits});
  }
  auto cfg = quick(12);
  FcnClassifier model(small_fcn(), 7);
  train(model, data, nullptr, cfg);
  REQUIRE(evaluate(model, data) >= 0.99);
  cfg.loss.lambda_sp = 500.0;
  const auto r = train(model, data, &fs, cfg);
  REQUIRE(r.log.size() == 12);
  CHECK(r.log.front().loss.rr_sp > 0.0);
  CHECK(r.log.back().loss.rr_sp <= 0.1 * r.log.front().loss.rr_sp);
  for (const auto& e : r.log)
    CHECK(std::abs(e.loss.total - (e.loss.ra + 500.0 * e.loss.rr_sp)) <= 1e-9 * std::max(1.0, e.loss.total));
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto data = separable(32, 16, 0.5, 6);
  FcnClassifier a(small_fcn(), 1), b(small_fcn(), 1);
  const auto ra = train(a, data, nullptr, quick(3));
  const auto rb = train(b, data, nullptr, quick(3));
  CHECK(a.flat_parameters() == b.flat_parameters());
  CHECK(ra.log.back().loss.total == rb.log.back().loss.total);
}

TEST_CASE("callback can stop training") {
  const auto data = separable(16, 16, 0.5, 6);
  FcnClassifier m(small_fcn(), 1);
  const auto r = train(m, data, nullptr, quick(10), [](EpochLog& e, const Model&) { return e.epoch < 2; });
  CHECK(r.epochs_run == 2);
}

TEST_CASE("early stopping keeps the best validation epoch") {
  const auto data = separable(48, 16, 0.3, 8);
  const auto val = separable(32, 16, 0.3, 9);
  auto cfg = quick(30);
  cfg.patience = 3;
  FcnClassifier m(small_fcn(), 2);
  const auto r = train_early_stopping(m, data, val, cfg);
  REQUIRE(r.best_epoch.has_value());
  double best = -1.0;
  std::size_t best_epoch = 0;
  for (const auto& e : r.log) {
    REQUIRE(e.validation.has_value());
    if (*e.validation > best) {
      best = *e.validation;
      best_epoch = e.epoch;
    }
  }
  CHECK(*r.best_epoch == best_epoch);
  CHECK(evaluate(m, val) == best);
  CHECK(r.epochs_run <= std::min<std::size_t>(30, best_epoch + 3));
  cfg.patience.reset();
  CHECK_THROWS_AS(train_early_stopping(m, data, val, cfg), ConfigError);
}

TEST_CASE("forecaster learns a constant and a sinusoid") {
  SUBCASE("constant") {
    std::vector<double> s(200, 0.7);
    const auto set = training_set(window_set(make_windows(s, 16, 4, 4)));
    MlpConfig mc;
    mc.lookback = 16;
    mc.horizon = 4;
    mc.hidden = {16};
    MlpForecaster m(mc, 1);
    auto cfg = quick(40);
    cfg.learning_rate = 0.01;
    train(m, set, nullptr, cfg);
    for (double v : forecast(m, set.inputs[0])) CHECK(std::abs(v - 0.7) < 0.05);
  }
  SUBCASE("sinusoid") {
    std::vector<double> s(800);
    for (std::size_t t = 0; t < s.size(); ++t) s[t] = std::sin(2 * std::numbers::pi * double(t) / 16.0);
    const auto parts = temporal_split(s);
    const auto train_set = training_set(window_set(make_windows(parts.train, 32, 8, 4)));
    const auto test_set = training_set(window_set(make_windows(parts.test, 32, 8, 4)));
    MlpConfig mc;
    mc.lookback = 32;
    mc.horizon = 8;
    mc.hidden = {32};
    MlpForecaster m(mc, 2);
    auto cfg = quick(60);
    cfg.learning_rate = 0.01;
    train(m, train_set, nullptr, cfg);
    CHECK(evaluate(m, test_set) < 0.05);
  }
}

TEST_CASE("training rejects mismatched feedback and diverging runs") {
  const auto data = separable(8, 16, 0.5, 1);
  FcnClassifier m(small_fcn(), 1);
  FeedbackSet short_fs;
  short_fs.time.push_back({"0", std::vector<std::uint8_t>(16, 1)});
  CHECK_THROWS_AS(train(m, data, &short_fs, quick(1)), ShapeError);
  std::vector<double> s(100);
  for (std::size_t t = 0; t < s.size(); ++t) s[t] = 1e160 * double(t);
  const auto windows = training_set(window_set(make_windows(s, 8, 2, 2)));
  MlpConfig mc;
  mc.lookback = 8;
  mc.horizon = 2;
  mc.hidden = {8};
  MlpForecaster f(mc, 1);
  auto cfg = quick(1);
  try {
    train(f, windows, nullptr, cfg);
    FAIL("expected divergence");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
}

TEST_CASE("train config and experiment spec json") {
  auto c = quick(7);
  c.optimizer = OptimizerKind::Adam;
  c.patience = 4;
  const auto back = train_config_from_json(train_config_json(c));
  CHECK(train_config_json(back) == train_config_json(c));
  auto bad = train_config_json(c);
  bad["epochs"] = 0;
  CHECK_THROWS_AS(train_config_from_json(bad), ConfigError);

  ExperimentSpec s;
  s.decoys.push_back(DecoyConfig{});
  s.model = FcnClassifier(small_fcn(), 0).descriptor();
  s.lambda_sp = 2.0;
  s.rows = {RowKind::Base, RowKind::EarlyStopping};
  const auto sb = experiment_spec_from_json(experiment_spec_json(s));
  CHECK(experiment_spec_json(sb) == experiment_spec_json(s));
  s.decoys[0].kind = DecoyKind::FcBackcopy;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  CHECK(row_kind_from_string("+RioT_sp") == RowKind::RiotSp);
  CHECK_THROWS_AS(row_kind_from_string("x"), ConfigError);
}

TEST_CASE("experiment runs every row and reports failures per row") {
  ExperimentSpec s;
  s.toy.samples = 40;
  s.toy.length = 32;
  s.toy.min_position = 8;
  DecoyConfig d;
  d.segment = 8;
  s.decoys.push_back(d);
  s.model = FcnClassifier(small_fcn(), 0).descriptor();
  s.train = quick(2);
  s.lambda_sp = 1.0;
  s.seeds = {0, 1};
  const auto t = run_experiment(s);
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[0].label == "No Shortcut");
  CHECK(t.row("+RioT_sp").runs.size() == 2);
  for (const auto& r : t.rows) CHECK_FALSE(r.failed);
  const auto j = metric_table_json(t);
  CHECK(j["rows"][1]["test"]["std"].is_number());
  CHECK(metric_table_text(t).find("Base") != std::string::npos);

  // A model that cannot take the input length fails its rows only.
  auto broken = s;
  broken.model = MlpForecaster(MlpConfig{}, 0).descriptor();
  const auto f = run_experiment(broken);
  for (const auto& r : f.rows) CHECK(r.failed);
  CHECK_FALSE(f.rows[0].error.empty());
}

TEST_CASE("data preparation keeps evaluation splits clean") {
  ExperimentSpec s;
  s.toy.samples = 40;
  s.toy.length = 32;
  s.toy.min_position = 8;
  DecoyConfig d;
  d.segment = 8;
  s.decoys.push_back(d);
  s.model = FcnClassifier(small_fcn(), 0).descriptor();
  const auto p = prepare_data(s, 3);
  CHECK(p.clean_train.size() == p.decoyed_train.size());
  CHECK(p.clean_train.inputs != p.decoyed_train.inputs);
  CHECK(p.feedback.time.size() == p.decoyed_train.size());
  CHECK(p.test.size() == 12);
  s.coverage = 0.25;
  CHECK(prepare_data(s, 3).feedback.annotated_count() == 6);

  ExperimentSpec f;
  f.task = TaskKind::Forecasting;
  f.seasonal.length = 600;
  DecoyConfig bc;
  bc.kind = DecoyKind::FcBackcopy;
  f.decoys.push_back(bc);
  f.model = MlpForecaster(MlpConfig{}, 0).descriptor();
  const auto q = prepare_data(f, 1);
  CHECK(q.decoyed_train.size() == q.clean_train.size());
  CHECK(q.decoyed_train.targets == q.clean_train.targets);
  CHECK(q.test.size() > 0);
}
