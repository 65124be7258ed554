#include "tsxil/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "tsxil/error.hpp"
#include "tsxil/random.hpp"

namespace tsxil {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }
std::string to_string(ExplainTarget k) { return k == ExplainTarget::Argmax ? "argmax" : "label"; }

namespace {

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

ExplainTarget explain_target_from_string(const std::string& s) {
  if (s == "label") return ExplainTarget::Label;
  if (s == "argmax") return ExplainTarget::Argmax;
  throw ConfigError("unknown explain target '" + s + "'");
}

TaskKind task_from_string(const std::string& s) {
  if (s == "classification") return TaskKind::Classification;
  if (s == "forecasting") return TaskKind::Forecasting;
  throw ConfigError("unknown task '" + s + "'");
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
  if (patience && *patience < 1) throw ConfigError("patience must be >= 1");
  if (ig.steps == 0) throw ConfigError("integrated gradients: steps must be >= 1");
  loss.validate();
}

nlohmann::json train_config_json(const TrainConfig& c) {
  nlohmann::json j = {{"epochs", c.epochs},
                      {"batch_size", c.batch_size},
                      {"lr", c.learning_rate},
                      {"optimizer", to_string(c.optimizer)},
                      {"momentum", c.momentum},
                      {"grad_clip", c.grad_clip},
                      {"seed", c.seed},
                      {"lambda_sp", c.loss.lambda_sp},
                      {"lambda_fr", c.loss.lambda_fr},
                      {"normalize_by_length", c.loss.normalize_by_length},
                      {"ig_steps", c.ig.steps},
                      {"ig_centered", c.ig.centered},
                      {"explain_target", to_string(c.explain_target)}};
  j["patience"] = c.patience ? nlohmann::json(*c.patience) : nlohmann::json(nullptr);
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("lr", c.learning_rate);
  c.optimizer = optimizer_from_string(j.value("optimizer", std::string("sgd")));
  c.momentum = j.value("momentum", c.momentum);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.seed = j.value("seed", c.seed);
  c.loss.lambda_sp = j.value("lambda_sp", c.loss.lambda_sp);
  c.loss.lambda_fr = j.value("lambda_fr", c.loss.lambda_fr);
  c.loss.normalize_by_length = j.value("normalize_by_length", false);
  c.ig.steps = j.value("ig_steps", c.ig.steps);
  c.ig.centered = j.value("ig_centered", c.ig.centered);
  c.explain_target = explain_target_from_string(j.value("explain_target", std::string("label")));
  if (j.contains("patience") && !j["patience"].is_null()) c.patience = j["patience"].get<std::size_t>();
  c.validate();
  return c;
}

// ---- data views ----------------------------------------------------------------

TrainingSet training_set(const ClassificationDataset& ds, Split split) {
  TrainingSet t;
  t.task = TaskKind::Classification;
  t.num_classes = ds.num_classes();
  for (auto i : ds.indices(split)) {
    t.inputs.push_back(ds.series[i]);
    t.labels.push_back(ds.labels[i]);
    t.ids.push_back(ds.sample_ids[i]);
  }
  return t;
}

TrainingSet training_set(const WindowSet& windows) {
  TrainingSet t;
  t.task = TaskKind::Forecasting;
  t.inputs = windows.inputs;
  t.targets = windows.targets;
  for (auto p : windows.starts) t.ids.push_back("w" + std::to_string(p));
  return t;
}

FeedbackSet select_feedback(const FeedbackSet& fs, const ClassificationDataset& ds, Split split) {
  FeedbackSet out;
  out.coverage = fs.coverage;
  out.noise = fs.noise;
  out.seed = fs.seed;
  for (auto i : ds.indices(split)) {
    if (fs.has_time()) out.time.push_back(fs.time.at(i));
    if (fs.has_freq()) out.freq.push_back(fs.freq.at(i));
  }
  return out;
}

nlohmann::json epoch_log_json(const EpochLog& e) {
  auto j = loss_row_json(e.epoch, e.loss);
  if (e.validation) j["validation"] = *e.validation;
  return j;
}

// ---- optimizer -----------------------------------------------------------------

namespace {

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const std::vector<ad::Tensor>& params) : cfg_(cfg) {
    for (const auto& p : params) {
      m_.emplace_back(p.size(), 0.0);
      if (cfg.optimizer == OptimizerKind::Adam) v_.emplace_back(p.size(), 0.0);
    }
  }

  void step(const std::vector<ad::Tensor>& params, const std::vector<ad::Tensor>& grads) {
    ++t_;
    double scale = 1.0;
    if (cfg_.grad_clip > 0.0) {
      double sq = 0.0;
      for (const auto& g : grads)
        for (double v : g.values()) sq += v * v;
      const double norm = std::sqrt(sq);
      if (norm > cfg_.grad_clip) scale = cfg_.grad_clip / norm;
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& w = const_cast<ad::Tensor&>(params[i]).mutable_values();
      const auto g = grads[i].values();
      auto& m = m_[i];
      if (cfg_.optimizer == OptimizerKind::Sgd) {
        for (std::size_t k = 0; k < w.size(); ++k) {
          m[k] = cfg_.momentum * m[k] + scale * g[k];
          w[k] -= cfg_.learning_rate * m[k];
        }
      } else {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        auto& v = v_[i];
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        for (std::size_t k = 0; k < w.size(); ++k) {
          const double gk = scale * g[k];
          m[k] = b1 * m[k] + (1 - b1) * gk;
          v[k] = b2 * v[k] + (1 - b2) * gk * gk;
          w[k] -= cfg_.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
        }
      }
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

void check_feedback(const TrainingSet& data, const FeedbackSet* fs) {
  if (!fs) return;
  const std::size_t t = data.inputs.empty() ? 0 : data.inputs[0].size();
  if (fs->has_time() && fs->time.size() != data.size())
    throw ShapeError("feedback has " + std::to_string(fs->time.size()) + " time masks for " +
                     std::to_string(data.size()) + " samples");
  if (fs->has_freq() && fs->freq.size() != data.size())
    throw ShapeError("feedback has " + std::to_string(fs->freq.size()) + " frequency masks for " +
                     std::to_string(data.size()) + " samples");
  for (const auto& m : fs->time)
    if (m.size() != t) throw ShapeError("time mask length " + std::to_string(m.size()) + " != series length " + std::to_string(t));
  for (const auto& m : fs->freq)
    if (m.size() != t) throw ShapeError("frequency mask length " + std::to_string(m.size()) + " != series length " + std::to_string(t));
}

void check_data(const Model& model, const TrainingSet& data) {
  if (data.size() == 0) throw DataError("empty training set");
  if (model.task() != data.task) throw ContractViolation("model task does not match the data");
  if (data.task == TaskKind::Classification && data.labels.size() != data.size())
    throw DataError("label count does not match sample count");
  if (data.task == TaskKind::Forecasting && data.targets.size() != data.size())
    throw DataError("target count does not match sample count");
}

std::vector<std::size_t> argmax_rows(const ad::Tensor& logits, const std::vector<std::size_t>& rows) {
  const std::size_t k = logits.dim(1);
  std::vector<std::size_t> out;
  for (auto r : rows) {
    const auto v = logits.values().subspan(r * k, k);
    out.push_back(static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin()));
  }
  return out;
}

}  // namespace

// ---- training ------------------------------------------------------------------

TrainResult train(Model& model, const TrainingSet& data, const FeedbackSet* feedback, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  check_data(model, data);
  check_feedback(data, feedback);
  const bool classification = data.task == TaskKind::Classification;
  const bool use_sp = feedback && feedback->has_time() && cfg.loss.lambda_sp > 0.0;
  const bool use_fr = feedback && feedback->has_freq() && cfg.loss.lambda_fr > 0.0;

  Optimizer opt(cfg, model.parameters());
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  TrainResult result;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    LossReport sum;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t batch_no = start / cfg.batch_size + 1;
      const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
      const std::size_t b = rows.size();
      const auto x = batch_tensor(data.inputs, rows);
      const auto out = model.forward(x);
      ad::Tensor ra;
      std::vector<std::size_t> labels;
      if (classification) {
        for (auto r : rows) labels.push_back(data.labels[r]);
        ra = cross_entropy(out, labels);
      } else {
        ra = mse(out, batch_tensor(data.targets, rows));
      }

      // Rows of this batch that carry feedback in a domain that is switched on.
      std::vector<std::size_t> local, annotated;
      for (std::size_t i = 0; i < b; ++i) {
        const auto r = rows[i];
        const bool sp = use_sp && !feedback->time[r].empty();
        const bool fr = use_fr && !feedback->freq[r].empty();
        if (sp || fr) {
          local.push_back(i);
          annotated.push_back(r);
        }
      }
      ad::Tensor rr_sp, rr_fr;
      if (!annotated.empty()) {
        std::vector<std::size_t> targets;
        if (classification) {
          if (cfg.explain_target == ExplainTarget::Label) {
            for (auto i : local) targets.push_back(labels[i]);
          } else {
            targets = argmax_rows(out, local);
          }
        }
        const auto e = integrated_gradients(model, batch_tensor(data.inputs, annotated), targets, cfg.ig, true);
        if (use_sp) rr_sp = rr_spatial(e, mask_tensor(feedback->time, annotated), b, cfg.loss.normalize_by_length);
        if (use_fr) {
          const auto [re, im] = mask_tensors(feedback->freq, annotated);
          rr_fr = rr_frequency(dft(e), re, im, b, cfg.loss.normalize_by_length);
        }
      }
      const auto total = combined_loss(ra, rr_sp, rr_fr, cfg.loss);
      if (!std::isfinite(total.item())) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no));
      }
      const auto grads = ad::grad(total, model.parameters());
      for (const auto& g : grads)
        for (double v : g.values())
          if (!std::isfinite(v))
            throw NumericalError("non-finite gradient at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(batch_no));
      opt.step(model.parameters(), grads);

      sum.ra += ra.item();
      sum.rr_sp += rr_sp.defined() ? rr_sp.item() : 0.0;
      sum.rr_fr += rr_fr.defined() ? rr_fr.item() : 0.0;
      sum.total += total.item();
      ++batches;
    }
    const double n = static_cast<double>(batches);
    EpochLog entry{epoch, {sum.ra / n, sum.rr_sp / n, sum.rr_fr / n, sum.total / n}, std::nullopt};
    result.epochs_run = epoch;
    const bool go_on = on_epoch ? on_epoch(entry, model) : true;
    result.log.push_back(entry);
    if (!go_on) break;
  }
  return result;
}

TrainResult train_early_stopping(Model& model, const TrainingSet& data, const TrainingSet& clean_val,
                                 const TrainConfig& cfg) {
  if (!cfg.patience) throw ConfigError("early stopping needs a patience");
  const std::size_t patience = *cfg.patience;
  std::optional<double> best;
  std::size_t best_epoch = 0;
  std::vector<double> best_params = model.flat_parameters();
  std::vector<double> val_scores;
  auto result = train(model, data, nullptr, cfg, [&](EpochLog& e, const Model& m) {
    const double score = evaluate(m, clean_val);
    e.validation = score;
    if (!best || better(data.task, score, *best)) {
      best = score;
      best_epoch = e.epoch;
      best_params = m.flat_parameters();
    }
    return e.epoch - best_epoch < patience;
  });
  model.set_flat_parameters(best_params);
  result.best_epoch = best_epoch;
  return result;
}

// ---- metrics -------------------------------------------------------------------

BalancedAccuracy balanced_accuracy(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& labels,
                                   std::size_t num_classes) {
  if (predictions.size() != labels.size()) throw ShapeError("balanced_accuracy: prediction/label count mismatch");
  if (labels.empty()) throw DataError("balanced_accuracy: no samples");
  const std::size_t k =
      std::max(num_classes, *std::max_element(labels.begin(), labels.end()) + 1);
  std::vector<std::size_t> hit(k, 0), total(k, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++total[labels[i]];
    if (predictions[i] == labels[i]) ++hit[labels[i]];
  }
  BalancedAccuracy out;
  double acc = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (total[c] == 0) {
      out.warnings.push_back("class " + std::to_string(c) + " absent from labels; excluded from the mean");
      continue;
    }
    acc += static_cast<double>(hit[c]) / static_cast<double>(total[c]);
    ++present;
  }
  out.value = acc / static_cast<double>(present);
  return out;
}

RegressionMetrics regression_metrics(const std::vector<std::vector<double>>& forecasts,
                                     const std::vector<std::vector<double>>& targets) {
  if (forecasts.size() != targets.size()) throw ShapeError("regression_metrics: window count mismatch");
  RegressionMetrics m;
  std::size_t n = 0;
  for (std::size_t i = 0; i < forecasts.size(); ++i) {
    if (forecasts[i].size() != targets[i].size()) throw ShapeError("regression_metrics: horizon mismatch");
    for (std::size_t k = 0; k < forecasts[i].size(); ++k) {
      const double d = forecasts[i][k] - targets[i][k];
      m.mse += d * d;
      m.mae += std::abs(d);
      ++n;
    }
  }
  if (n > 0) {
    m.mse /= static_cast<double>(n);
    m.mae /= static_cast<double>(n);
  }
  return m;
}

namespace {
std::vector<std::size_t> predicted_classes(const Model& model, const TrainingSet& data) {
  std::vector<std::size_t> out;
  for (const auto& logits : predict(model, data.inputs))
    out.push_back(static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin()));
  return out;
}
}  // namespace

double evaluate(const Model& model, const TrainingSet& data) {
  if (data.task == TaskKind::Classification) {
    return balanced_accuracy(predicted_classes(model, data), data.labels, 0).value;
  }
  return regression_metrics(predict(model, data.inputs), data.targets).mse;
}

nlohmann::json evaluation_json(const Model& model, const TrainingSet& data) {
  if (data.task == TaskKind::Classification) {
    const auto preds = predicted_classes(model, data);
    const auto ba = balanced_accuracy(preds, data.labels, data.num_classes);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == data.labels[i] ? 1 : 0;
    return {{"balanced_accuracy", ba.value},
            {"accuracy", static_cast<double>(correct) / static_cast<double>(preds.size())},
            {"samples", preds.size()},
            {"warnings", ba.warnings}};
  }
  const auto m = regression_metrics(predict(model, data.inputs), data.targets);
  return {{"mse", m.mse}, {"mae", m.mae}, {"windows", data.size()}};
}

bool better(TaskKind task, double a, double b) { return task == TaskKind::Classification ? a > b : a < b; }

double attribution_mass_in_mask(const Model& model, const TrainingSet& data, const std::vector<TimeMask>& masks,
                                const IgConfig& cfg) {
  if (masks.size() != data.size()) throw ShapeError("attribution_mass_in_mask: one mask per sample required");
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (masks[i].empty()) continue;
    const auto e = explain(model, data.inputs[i], cfg);
    double inside = 0.0, all = 0.0;
    for (std::size_t t = 0; t < e.values.size(); ++t) {
      all += std::abs(e.values[t]);
      if (masks[i].bits[t]) inside += std::abs(e.values[t]);
    }
    if (all > 0.0) {
      sum += inside / all;
      ++counted;
    }
  }
  return counted ? sum / static_cast<double>(counted) : 0.0;
}

// ---- experiments ---------------------------------------------------------------

std::string to_string(RowKind k) {
  switch (k) {
    case RowKind::NoShortcut:
      return "No Shortcut";
    case RowKind::Base:
      return "Base";
    case RowKind::RiotSp:
      return "+RioT_sp";
    case RowKind::RiotFreq:
      return "+RioT_freq";
    case RowKind::RiotBoth:
      return "+RioT_freq,sp";
    case RowKind::EarlyStopping:
      return "ES";
  }
  return "Base";
}

RowKind row_kind_from_string(const std::string& s) {
  for (auto k : {RowKind::NoShortcut, RowKind::Base, RowKind::RiotSp, RowKind::RiotFreq, RowKind::RiotBoth,
                 RowKind::EarlyStopping})
    if (to_string(k) == s) return k;
  if (s == "no_shortcut") return RowKind::NoShortcut;
  if (s == "base") return RowKind::Base;
  if (s == "riot_sp") return RowKind::RiotSp;
  if (s == "riot_freq") return RowKind::RiotFreq;
  if (s == "riot_both") return RowKind::RiotBoth;
  if (s == "es") return RowKind::EarlyStopping;
  throw ConfigError("unknown experiment row '" + s + "'");
}

namespace {

RowKind riot_row(const ExperimentSpec& spec) {
  if (spec.decoys.size() >= 2) return RowKind::RiotBoth;
  if (spec.decoys.empty()) return RowKind::RiotSp;
  switch (spec.decoys[0].kind) {
    case DecoyKind::ClsFrequency:
    case DecoyKind::FcDirac:
      return RowKind::RiotFreq;
    default:
      return RowKind::RiotSp;
  }
}

std::vector<RowKind> default_rows(const ExperimentSpec& spec) {
  return {RowKind::NoShortcut, RowKind::Base, riot_row(spec)};
}

}  // namespace

void ExperimentSpec::validate() const {
  train.validate();
  if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
  if (decoys.empty() || decoys.size() > 2) throw ConfigError("experiment needs one decoy (or two for dual-domain)");
  for (const auto& d : decoys) {
    d.validate();
    const bool cls = d.kind == DecoyKind::ClsSpatial || d.kind == DecoyKind::ClsFrequency;
    if (cls != (task == TaskKind::Classification)) throw ConfigError("decoy " + to_string(d.kind) + " does not fit the task");
  }
  if (decoys.size() == 2 &&
      !(decoys[0].kind == DecoyKind::ClsSpatial && decoys[1].kind == DecoyKind::ClsFrequency)) {
    throw ConfigError("dual-domain experiments take cls_spatial followed by cls_frequency");
  }
  if (!(lambda_sp >= 0.0) || !(lambda_fr >= 0.0)) throw ConfigError("lambda weights must be >= 0");
  if (!(coverage >= 0.0 && coverage <= 1.0)) throw ConfigError("coverage must lie in [0, 1]");
  if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("noise must lie in [0, 1]");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (!model.is_object() || !model.contains("family")) throw ConfigError("experiment model descriptor needs a family");
}

nlohmann::json experiment_spec_json(const ExperimentSpec& s) {
  nlohmann::json decoys = nlohmann::json::array();
  for (const auto& d : s.decoys) decoys.push_back(decoy_config_json(d));
  nlohmann::json rows = nlohmann::json::array();
  for (auto r : s.rows) rows.push_back(to_string(r));
  return {{"name", s.name},
          {"task", to_string(s.task)},
          {"dataset", s.dataset.string()},
          {"toy",
           {{"samples", s.toy.samples},
            {"length", s.toy.length},
            {"noise", s.toy.noise},
            {"signal", s.toy.signal},
            {"bump_width", s.toy.bump_width},
            {"min_position", s.toy.min_position}}},
          {"seasonal",
           {{"length", s.seasonal.length},
            {"period", s.seasonal.period},
            {"second_period", s.seasonal.second_period},
            {"second_amplitude", s.seasonal.second_amplitude},
            {"noise", s.seasonal.noise}}},
          {"lookback", s.lookback},
          {"horizon", s.horizon},
          {"stride", s.stride},
          {"decoys", decoys},
          {"model", s.model},
          {"train", train_config_json(s.train)},
          {"lambda_sp", s.lambda_sp},
          {"lambda_fr", s.lambda_fr},
          {"coverage", s.coverage},
          {"noise", s.noise},
          {"seeds", s.seeds},
          {"rows", rows},
          {"workers", s.workers},
          {"output_dir", s.output_dir.string()}};
}

ExperimentSpec experiment_spec_from_json(const nlohmann::json& j) {
  ExperimentSpec s;
  try {
    s.name = j.value("name", s.name);
    s.task = task_from_string(j.value("task", std::string("classification")));
    s.dataset = j.value("dataset", std::string());
    if (j.contains("toy")) {
      const auto& t = j["toy"];
      s.toy.samples = t.value("samples", s.toy.samples);
      s.toy.length = t.value("length", s.toy.length);
      s.toy.noise = t.value("noise", s.toy.noise);
      s.toy.signal = t.value("signal", s.toy.signal);
      s.toy.bump_width = t.value("bump_width", s.toy.bump_width);
      s.toy.min_position = t.value("min_position", s.toy.min_position);
    }
    if (j.contains("seasonal")) {
      const auto& t = j["seasonal"];
      s.seasonal.length = t.value("length", s.seasonal.length);
      s.seasonal.period = t.value("period", s.seasonal.period);
      s.seasonal.second_period = t.value("second_period", s.seasonal.second_period);
      s.seasonal.second_amplitude = t.value("second_amplitude", s.seasonal.second_amplitude);
      s.seasonal.noise = t.value("noise", s.seasonal.noise);
    }
    s.lookback = j.value("lookback", s.lookback);
    s.horizon = j.value("horizon", s.horizon);
    s.stride = j.value("stride", s.stride);
    if (j.contains("decoys"))
      for (const auto& d : j["decoys"]) s.decoys.push_back(decoy_config_from_json(d));
    if (j.contains("decoy")) s.decoys.push_back(decoy_config_from_json(j["decoy"]));
    s.model = j.value("model", nlohmann::json::object());
    if (j.contains("train")) s.train = train_config_from_json(j["train"]);
    s.lambda_sp = j.value("lambda_sp", s.lambda_sp);
    s.lambda_fr = j.value("lambda_fr", s.lambda_fr);
    s.coverage = j.value("coverage", s.coverage);
    s.noise = j.value("noise", s.noise);
    if (j.contains("seeds")) s.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("rows"))
      for (const auto& r : j["rows"]) s.rows.push_back(row_kind_from_string(r.get<std::string>()));
    s.workers = j.value("workers", s.workers);
    s.output_dir = j.value("output_dir", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment spec: ") + e.what());
  }
  s.validate();
  return s;
}

const MetricRow& MetricTable::row(const std::string& label) const {
  for (const auto& r : rows)
    if (r.label == label) return r;
  throw NotFoundError("no row '" + label + "' in table " + name);
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

void summarize(MetricRow& row) {
  std::vector<double> tr, te;
  for (const auto& r : row.runs) {
    tr.push_back(r.train_metric);
    te.push_back(r.test_metric);
  }
  std::tie(row.train_mean, row.train_std) = mean_std(tr);
  std::tie(row.test_mean, row.test_std) = mean_std(te);
}

}  // namespace

nlohmann::json metric_table_json(const MetricTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& run : r.runs)
      runs.push_back({{"seed", run.seed}, {"train", run.train_metric}, {"test", run.test_metric}, {"epochs", run.epochs}});
    nlohmann::json row = {{"label", r.label}, {"failed", r.failed}, {"runs", runs}};
    if (r.failed) {
      row["error"] = r.error;
    } else {
      row["train"] = {{"mean", r.train_mean}, {"std", r.runs.size() >= 2 ? nlohmann::json(r.train_std) : nlohmann::json(nullptr)}};
      row["test"] = {{"mean", r.test_mean}, {"std", r.runs.size() >= 2 ? nlohmann::json(r.test_std) : nlohmann::json(nullptr)}};
    }
    rows.push_back(row);
  }
  return {{"name", t.name}, {"metric", t.metric}, {"rows", rows}};
}

std::string metric_table_text(const MetricTable& t) {
  std::ostringstream os;
  os << t.name << " (" << t.metric << ")\n";
  os << std::left << std::setw(16) << "row" << std::setw(20) << "train" << "test\n";
  os << std::fixed << std::setprecision(3);
  for (const auto& r : t.rows) {
    os << std::left << std::setw(16) << r.label;
    if (r.failed) {
      os << "FAILED: " << r.error << "\n";
      continue;
    }
    std::ostringstream tr, te;
    tr << std::fixed << std::setprecision(3) << r.train_mean << " +- " << r.train_std;
    te << std::fixed << std::setprecision(3) << r.test_mean << " +- " << r.test_std;
    os << std::setw(20) << tr.str() << te.str() << "\n";
  }
  return os.str();
}

std::unique_ptr<Model> make_model(const ExperimentSpec& spec, std::uint64_t seed) {
  return model_from_descriptor(spec.model, seed);
}

PreparedData prepare_data(const ExperimentSpec& spec, std::uint64_t seed) {
  PreparedData out;
  if (spec.task == TaskKind::Classification) {
    ClassificationDataset ds = spec.dataset.empty() ? make_toy_classification(spec.toy, seed)
                                                    : load_classification_csv(spec.dataset);
    ds.header.decoy.reset();
    ds = standardize(split(ds, seed));
    auto decoyed = spec.decoys.size() == 2 ? inject_cls_dual(ds, spec.decoys[0], spec.decoys[1])
                   : spec.decoys[0].kind == DecoyKind::ClsSpatial ? inject_cls_spatial(ds, spec.decoys[0])
                                                                  : inject_cls_frequency(ds, spec.decoys[0]);
    out.clean_train = training_set(ds, Split::Train);
    out.decoyed_train = training_set(decoyed.data, Split::Train);
    out.val = training_set(ds, Split::Val);
    out.test = training_set(ds, Split::Test);
    out.feedback = select_feedback(decoyed.feedback, decoyed.data, Split::Train);
  } else {
    SeriesData series = spec.dataset.empty() ? make_seasonal_series(spec.seasonal, seed) : load_series_csv(spec.dataset);
    series.header.decoy.reset();
    const auto parts = temporal_split(series.values);
    const auto stats = fit_standardization(parts.train);
    SeriesData train_part;
    train_part.header = series.header;
    train_part.header.standardization = stats;
    train_part.values = apply_standardization(parts.train, stats);
    const auto val = apply_standardization(parts.val, stats);
    const auto test = apply_standardization(parts.test, stats);
    const std::size_t t = spec.lookback, w = spec.horizon;
    const auto& d = spec.decoys[0];
    const auto decoyed = d.kind == DecoyKind::FcBackcopy ? inject_fc_backcopy(train_part, t, w, spec.stride)
                                                         : inject_fc_dirac(train_part, t, w, spec.stride, d);
    out.clean_train = training_set(window_set(make_windows(train_part.values, t, w, spec.stride)));
    out.decoyed_train = training_set(decoyed.windows);
    out.val = training_set(window_set(make_windows(val, t, w, spec.stride)));
    out.test = training_set(window_set(make_windows(test, t, w, spec.stride)));
    out.feedback = decoyed.feedback;
  }
  out.feedback = subset_feedback(out.feedback, spec.coverage, seed);
  out.feedback = noisy_feedback(out.feedback, spec.noise, seed + 7919);
  return out;
}

RunResult run_single(const ExperimentSpec& spec, RowKind row, std::uint64_t seed) {
  const auto data = prepare_data(spec, seed);
  auto model = make_model(spec, seed);
  TrainConfig cfg = spec.train;
  cfg.seed = seed;
  cfg.loss.task = spec.task;
  cfg.loss.lambda_sp = 0.0;
  cfg.loss.lambda_fr = 0.0;
  const TrainingSet* train_on = &data.decoyed_train;
  const FeedbackSet* fb = nullptr;
  TrainResult tr;
  switch (row) {
    case RowKind::NoShortcut:
      train_on = &data.clean_train;
      break;
    case RowKind::Base:
    case RowKind::EarlyStopping:
      break;
    case RowKind::RiotSp:
      cfg.loss.lambda_sp = spec.lambda_sp;
      fb = &data.feedback;
      break;
    case RowKind::RiotFreq:
      cfg.loss.lambda_fr = spec.lambda_fr;
      fb = &data.feedback;
      break;
    case RowKind::RiotBoth:
      cfg.loss.lambda_sp = spec.lambda_sp;
      cfg.loss.lambda_fr = spec.lambda_fr;
      fb = &data.feedback;
      break;
  }
  if (row == RowKind::EarlyStopping) {
    if (!cfg.patience) cfg.patience = 5;
    tr = train_early_stopping(*model, *train_on, data.val, cfg);
  } else {
    tr = train(*model, *train_on, fb, cfg);
  }
  RunResult r{seed, evaluate(*model, *train_on), evaluate(*model, data.test), tr.epochs_run};
  if (!spec.output_dir.empty()) {
    std::string tag = to_string(row);
    std::replace_if(tag.begin(), tag.end(), [](char c) { return !std::isalnum(static_cast<unsigned char>(c)); }, '_');
    const auto dir = spec.output_dir / spec.name;
    std::filesystem::create_directories(dir);
    std::ofstream log(dir / (tag + "_seed" + std::to_string(seed) + ".jsonl"));
    for (const auto& e : tr.log) log << epoch_log_json(e).dump() << "\n";
    save_checkpoint(*model, dir / (tag + "_seed" + std::to_string(seed) + ".ckpt"));
  }
  return r;
}

namespace {

struct Job {
  std::size_t row;
  std::size_t seed_index;
  std::function<RunResult()> run;
};

// Runs every job; failures are recorded per row, other rows complete.
void run_jobs(std::vector<Job>& jobs, std::vector<MetricRow>& rows, std::size_t workers, std::size_t seeds) {
  std::vector<std::optional<RunResult>> results(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        results[i] = jobs[i].run();
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, jobs.size()); ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& row : rows) row.runs.assign(seeds, RunResult{});
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    auto& row = rows[jobs[i].row];
    if (results[i]) {
      row.runs[jobs[i].seed_index] = *results[i];
    } else if (!row.failed) {
      row.failed = true;
      row.error = errors[i];
    }
  }
  for (auto& row : rows) {
    if (row.failed) row.runs.clear();
    else summarize(row);
  }
}

}  // namespace

MetricTable run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  const auto kinds = spec.rows.empty() ? default_rows(spec) : spec.rows;
  MetricTable table{spec.name, spec.task == TaskKind::Classification ? "balanced_accuracy" : "mse", {}};
  std::vector<Job> jobs;
  for (std::size_t r = 0; r < kinds.size(); ++r) {
    table.rows.emplace_back().label = to_string(kinds[r]);
    for (std::size_t s = 0; s < spec.seeds.size(); ++s) {
      const auto kind = kinds[r];
      const auto seed = spec.seeds[s];
      jobs.push_back({r, s, [&spec, kind, seed] { return run_single(spec, kind, seed); }});
    }
  }
  run_jobs(jobs, table.rows, spec.workers, spec.seeds.size());
  return table;
}

MetricTable run_feedback_sweep(const ExperimentSpec& spec, SweepKind kind, const std::vector<double>& values) {
  spec.validate();
  const auto riot = riot_row(spec);
  MetricTable table{spec.name, spec.task == TaskKind::Classification ? "balanced_accuracy" : "mse", {}};
  std::vector<ExperimentSpec> variants;
  for (double v : values) {
    auto s = spec;
    if (kind == SweepKind::Coverage) s.coverage = v;
    else s.noise = v;
    s.validate();
    variants.push_back(s);
    std::ostringstream label;
    label << (kind == SweepKind::Coverage ? "p=" : "q=") << v;
    table.rows.emplace_back().label = label.str();
  }
  std::vector<Job> jobs;
  for (std::size_t r = 0; r < variants.size(); ++r) {
    for (std::size_t s = 0; s < spec.seeds.size(); ++s) {
      const auto seed = spec.seeds[s];
      const ExperimentSpec* v = &variants[r];
      jobs.push_back({r, s, [v, riot, seed] { return run_single(*v, riot, seed); }});
    }
  }
  run_jobs(jobs, table.rows, spec.workers, spec.seeds.size());
  return table;
}

}  // namespace tsxil
