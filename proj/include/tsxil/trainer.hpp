#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsxil/attribution.hpp"
#include "tsxil/datasets.hpp"
#include "tsxil/decoys.hpp"
#include "tsxil/feedback.hpp"
#include "tsxil/losses.hpp"
#include "tsxil/models.hpp"

namespace tsxil {

enum class OptimizerKind { Sgd, Adam };
// Class whose attribution the right-reason terms penalize.
enum class ExplainTarget { Label, Argmax };

std::string to_string(OptimizerKind k);
std::string to_string(ExplainTarget k);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 0.01;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  double momentum = 0.9;
  // Rescale the parameter gradient to at most this global L2 norm; 0 = off.
  double grad_clip = 0.0;
  std::uint64_t seed = 0;
  LossConfig loss;
  IgConfig ig{8, {}, true};
  ExplainTarget explain_target = ExplainTarget::Label;
  std::optional<std::size_t> patience;

  void validate() const;
};

nlohmann::json train_config_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Rows a model is trained or evaluated on. Classification uses `labels`,
// forecasting `targets`.
struct TrainingSet {
  TaskKind task = TaskKind::Classification;
  std::vector<std::vector<double>> inputs;
  std::vector<std::size_t> labels;
  std::vector<std::vector<double>> targets;
  std::vector<std::string> ids;
  std::size_t num_classes = 0;

  std::size_t size() const { return inputs.size(); }
};

// Samples of one split. Feedback for them is `select_feedback(fs, ds, split)`.
TrainingSet training_set(const ClassificationDataset& ds, Split split);
TrainingSet training_set(const WindowSet& windows);
FeedbackSet select_feedback(const FeedbackSet& fs, const ClassificationDataset& ds, Split split);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  LossReport loss;        // batch means
  std::optional<double> validation;
};

nlohmann::json epoch_log_json(const EpochLog& e);

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t epochs_run = 0;
  // Early stopping only.
  std::optional<std::size_t> best_epoch;
};

// Called after every epoch; returning false stops training.
using EpochCallback = std::function<bool(EpochLog&, const Model&)>;

// Mini-batch training on ra + lambda_sp rr_sp + lambda_fr rr_fr. Feedback, if
// given, has one mask per row of `data` in either domain. Attributions are
// recomputed for the annotated rows of every batch. Throws NumericalError
// naming epoch and batch when the loss or a gradient stops being finite.
TrainResult train(Model& model, const TrainingSet& data, const FeedbackSet* feedback, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

// Plain training with a shortcut-free validation set: keeps the parameters of
// the best validation epoch and stops after `cfg.patience` epochs without
// improvement.
TrainResult train_early_stopping(Model& model, const TrainingSet& data, const TrainingSet& clean_val,
                                 const TrainConfig& cfg);

// ---- metrics -------------------------------------------------------------------

struct BalancedAccuracy {
  double value = 0.0;
  std::vector<std::string> warnings;
};

// Mean per-class recall over the classes present in `labels`. With
// num_classes > 0, classes missing from the labels are reported in warnings.
BalancedAccuracy balanced_accuracy(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& labels,
                                   std::size_t num_classes = 0);

struct RegressionMetrics {
  double mse = 0.0;
  double mae = 0.0;
};

RegressionMetrics regression_metrics(const std::vector<std::vector<double>>& forecasts,
                                     const std::vector<std::vector<double>>& targets);

// Balanced accuracy (classification) or MSE (forecasting) of the model on `data`.
double evaluate(const Model& model, const TrainingSet& data);
nlohmann::json evaluation_json(const Model& model, const TrainingSet& data);
// Higher is better for accuracy, lower for MSE.
bool better(TaskKind task, double a, double b);

// Fraction of sum |e| that falls inside the mask, averaged over the samples
// with a non-empty mask.
double attribution_mass_in_mask(const Model& model, const TrainingSet& data, const std::vector<TimeMask>& masks,
                                const IgConfig& cfg);

// ---- experiments ---------------------------------------------------------------

enum class RowKind { NoShortcut, Base, RiotSp, RiotFreq, RiotBoth, EarlyStopping };

std::string to_string(RowKind k);
RowKind row_kind_from_string(const std::string& s);

struct ExperimentSpec {
  std::string name = "experiment";
  TaskKind task = TaskKind::Classification;
  // Empty path: synthetic data generated per seed from the configs below.
  std::filesystem::path dataset;
  ToyClassificationConfig toy;
  SeasonalSeriesConfig seasonal;
  std::size_t lookback = 32;
  std::size_t horizon = 8;
  std::size_t stride = 0;
  // One decoy, or cls_spatial + cls_frequency for the dual-domain setting.
  std::vector<DecoyConfig> decoys;
  nlohmann::json model;
  TrainConfig train;
  // Weights used by the RioT rows.
  double lambda_sp = 0.0;
  double lambda_fr = 0.0;
  double coverage = 1.0;
  double noise = 0.0;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<RowKind> rows;
  // Parallel worker slots for independent runs.
  std::size_t workers = 1;
  // When set, JSONL logs and checkpoints go here.
  std::filesystem::path output_dir;

  void validate() const;
};

nlohmann::json experiment_spec_json(const ExperimentSpec& s);
ExperimentSpec experiment_spec_from_json(const nlohmann::json& j);

struct RunResult {
  std::uint64_t seed = 0;
  double train_metric = 0.0;
  double test_metric = 0.0;
  std::size_t epochs = 0;
};

struct MetricRow {
  std::string label;
  std::vector<RunResult> runs;
  double train_mean = 0.0, train_std = 0.0;
  double test_mean = 0.0, test_std = 0.0;
  bool failed = false;
  std::string error;
};

struct MetricTable {
  std::string name;
  std::string metric;  // "balanced_accuracy" or "mse"
  std::vector<MetricRow> rows;

  const MetricRow& row(const std::string& label) const;
};

nlohmann::json metric_table_json(const MetricTable& t);
std::string metric_table_text(const MetricTable& t);

// Everything a single (row, seed) run needs, prepared from the spec.
struct PreparedData {
  TrainingSet clean_train;
  TrainingSet decoyed_train;
  TrainingSet val;   // shortcut-free
  TrainingSet test;  // shortcut-free
  FeedbackSet feedback;  // aligned with decoyed_train
};

PreparedData prepare_data(const ExperimentSpec& spec, std::uint64_t seed);
std::unique_ptr<Model> make_model(const ExperimentSpec& spec, std::uint64_t seed);

RunResult run_single(const ExperimentSpec& spec, RowKind row, std::uint64_t seed);

MetricTable run_experiment(const ExperimentSpec& spec);

// RioT rows with coverage (or noise) swept over `values`; one table row per value.
enum class SweepKind { Coverage, Noise };
MetricTable run_feedback_sweep(const ExperimentSpec& spec, SweepKind kind, const std::vector<double>& values);

}  // namespace tsxil
