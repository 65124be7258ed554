#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include "tsxil/error.hpp"
#include "tsxil/service.hpp"
#include "tsxil/trainer.hpp"

using namespace tsxil;
namespace fs = std::filesystem;

namespace {

bool g_json = false;

void emit(const nlohmann::json& j, const std::string& text) {
  if (g_json) std::cout << j.dump(2) << "\n";
  else std::cout << text;
}

std::vector<std::size_t> parse_sizes(const std::string& csv) {
  std::vector<std::size_t> out;
  std::stringstream ss(csv);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    out.push_back(static_cast<std::size_t>(std::stoul(part)));
  }
  return out;
}

std::vector<double> parse_reals(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (!part.empty()) out.push_back(std::stod(part));
  }
  return out;
}

nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_text(p));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

ClassificationDataset load_split(const fs::path& csv, std::uint64_t seed) {
  auto ds = load_classification_csv(csv);
  return split(ds, ds.header.decoy ? ds.header.decoy->seed : seed);
}

// ---- decoy ---------------------------------------------------------------------

struct DecoyArgs {
  std::string kind;
  DecoyConfig cfg;
  std::size_t lookback = 32, horizon = 8, stride = 0;
  std::string input, out_dir;
};

int run_decoy(const DecoyArgs& a) {
  DecoyConfig cfg = a.cfg;
  cfg.kind = decoy_kind_from_string(a.kind);
  cfg.validate();
  const fs::path in(a.input), out(a.out_dir);
  const std::string stem = in.stem().string();
  fs::create_directories(out);
  const auto csv = out / (stem + ".csv");
  const auto masks = out / (stem + ".masks.json");
  nlohmann::json report = {{"kind", a.kind}, {"csv", csv.string()}, {"masks", masks.string()},
                           {"header", header_path(csv).string()}};
  if (cfg.kind == DecoyKind::ClsSpatial || cfg.kind == DecoyKind::ClsFrequency) {
    const auto ds = split(load_classification_csv(in), cfg.seed);
    const auto d = cfg.kind == DecoyKind::ClsSpatial ? inject_cls_spatial(ds, cfg) : inject_cls_frequency(ds, cfg);
    write_text(csv, classification_csv(d.data));
    write_text(header_path(csv), header_json(d.data.header).dump(2) + "\n");
    write_text(masks, feedback_file_json(d.feedback).dump(2) + "\n");
    report["annotated"] = d.feedback.annotated_count();
    report["samples"] = d.data.size();
  } else {
    const auto series = load_series_csv(in);
    const auto d = cfg.kind == DecoyKind::FcBackcopy ? inject_fc_backcopy(series, a.lookback, a.horizon, a.stride)
                                                     : inject_fc_dirac(series, a.lookback, a.horizon, a.stride, cfg);
    write_text(csv, series_csv(d.series.values));
    write_text(header_path(csv), header_json(d.series.header).dump(2) + "\n");
    write_text(masks, feedback_file_json(d.feedback).dump(2) + "\n");
    report["annotated"] = d.feedback.annotated_count();
    report["windows"] = d.windows.size();
  }
  emit(report, "wrote " + csv.string() + ", " + masks.string() + " and " + header_path(csv).string() + "\n");
  return 0;
}

// ---- train ---------------------------------------------------------------------

struct TrainArgs {
  std::string data, out, masks, task = "classification", channels = "32,64,32", kernels = "7,5,3", hidden = "128,128";
  std::size_t lookback = 32, horizon = 8, stride = 0;
  std::uint64_t seed = 0;
  TrainConfig cfg;
  std::string optimizer = "sgd";
  double lambda1 = 0.0, lambda2 = 0.0;
  std::string log;
};

int run_train(TrainArgs a) {
  a.cfg.optimizer = a.optimizer == "adam" ? OptimizerKind::Adam : OptimizerKind::Sgd;
  if (a.optimizer != "adam" && a.optimizer != "sgd") throw ConfigError("unknown optimizer '" + a.optimizer + "'");
  a.cfg.seed = a.seed;
  a.cfg.loss.lambda_sp = a.lambda1;
  a.cfg.loss.lambda_fr = a.lambda2;
  std::unique_ptr<Model> model;
  TrainingSet data, test;
  FeedbackSet fb;
  if (a.task == "classification") {
    const auto ds = load_split(a.data, a.seed);
    FcnConfig fc;
    fc.channels = parse_sizes(a.channels);
    fc.kernels = parse_sizes(a.kernels);
    fc.num_classes = ds.num_classes();
    model = std::make_unique<FcnClassifier>(fc, a.seed);
    data = training_set(ds, Split::Train);
    test = training_set(ds, Split::Test);
    if (!a.masks.empty())
      fb = select_feedback(materialize(parse_mask_file(read_json(a.masks)), ds.sample_ids, ds.length()), ds, Split::Train);
  } else if (a.task == "forecasting") {
    a.cfg.loss.task = TaskKind::Forecasting;
    const auto series = load_series_csv(a.data);
    const auto parts = temporal_split(series.values);
    MlpConfig mc;
    mc.lookback = a.lookback;
    mc.horizon = a.horizon;
    mc.hidden = parse_sizes(a.hidden);
    model = std::make_unique<MlpForecaster>(mc, a.seed);
    data = training_set(window_set(make_windows(parts.train, a.lookback, a.horizon, a.stride)));
    test = training_set(window_set(make_windows(parts.test, a.lookback, a.horizon, a.stride)));
    if (!a.masks.empty()) fb = materialize(parse_mask_file(read_json(a.masks)), data.ids, a.lookback);
  } else {
    throw ConfigError("unknown task '" + a.task + "'");
  }
  std::ofstream log;
  if (!a.log.empty()) log.open(a.log);
  const auto r = train(*model, data, fb.size() > 0 ? &fb : nullptr, a.cfg, [&](EpochLog& e, const Model&) {
    if (log) log << epoch_log_json(e).dump() << "\n";
    return true;
  });
  save_checkpoint(*model, a.out);
  nlohmann::json report = {{"checkpoint", a.out},
                           {"epochs", r.epochs_run},
                           {"final_loss", epoch_log_json(r.log.back())},
                           {"train", evaluation_json(*model, data)},
                           {"test", evaluation_json(*model, test)},
                           {"hash", checkpoint_hash(*model)}};
  std::ostringstream text;
  text << "trained " << r.epochs_run << " epochs, saved " << a.out << "\n"
       << "train " << report["train"].dump() << "\ntest  " << report["test"].dump() << "\n";
  emit(report, text.str());
  return 0;
}

// ---- explain / evaluate --------------------------------------------------------

int run_explain(const std::string& model_path, const std::string& data, const std::string& sample,
                const std::string& domain, std::size_t steps, std::uint64_t seed) {
  const auto model = load_checkpoint(model_path);
  const auto ds = load_split(data, seed);
  std::size_t idx = ds.size();
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.sample_ids[i] == sample) idx = i;
  if (idx == ds.size()) throw NotFoundError("unknown sample '" + sample + "'");
  const auto attr = explain(*model, ds.series[idx], IgConfig{steps, {}, true});
  nlohmann::json j;
  if (domain == "time") j = attribution_json(sample, attr);
  else if (domain == "freq") j = attribution_json(sample, frequency_attribution(attr));
  else throw ConfigError("domain must be time or freq");
  std::cout << j.dump(g_json ? 2 : -1) << "\n";
  return 0;
}

int run_evaluate(const std::string& model_path, const std::string& data, const std::string& split_name,
                 std::uint64_t seed) {
  const auto model = load_checkpoint(model_path);
  const auto ds = load_split(data, seed);
  Split s = Split::Test;
  if (split_name == "train") s = Split::Train;
  else if (split_name == "val") s = Split::Val;
  else if (split_name != "test") throw ConfigError("split must be train, val or test");
  const auto j = evaluation_json(*model, training_set(ds, s));
  emit(j, split_name + " " + j.dump() + "\n");
  return 0;
}

// ---- experiments ---------------------------------------------------------------

ExperimentSpec load_spec(const std::string& path, const std::string& seeds, std::size_t epochs, std::size_t workers) {
  auto j = read_json(path);
  if (!seeds.empty()) j["seeds"] = parse_sizes(seeds);
  if (epochs > 0) j["train"]["epochs"] = epochs;
  if (workers > 0) j["workers"] = workers;
  return experiment_spec_from_json(j);
}

int print_table(const MetricTable& t) {
  emit(metric_table_json(t), metric_table_text(t));
  for (const auto& r : t.rows)
    if (r.failed) return 1;
  return 0;
}

HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-series explanatory interactive learning workbench"};
  app.require_subcommand(1);
  app.add_flag("--json", g_json, "Machine-readable output");

  DecoyArgs da;
  auto* decoy = app.add_subcommand("decoy", "Inject a shortcut decoy and write data, masks and header");
  decoy->add_option("--kind", da.kind, "cls_spatial | cls_frequency | fc_backcopy | fc_dirac")->required();
  decoy->add_option("--A", da.cfg.amplitude, "Amplitude");
  decoy->add_option("--m", da.cfg.segment, "Segment length (cls_spatial)");
  decoy->add_option("--offset", da.cfg.offset, "Segment offset (cls_spatial)");
  decoy->add_option("--base-bin", da.cfg.base_bin, "First class bin (cls_frequency)");
  decoy->add_option("--k", da.cfg.spacing, "Impulse spacing (fc_dirac)");
  decoy->add_option("--seed", da.cfg.seed, "Split seed");
  decoy->add_option("--lookback", da.lookback, "Window lookback T (forecasting)");
  decoy->add_option("--horizon", da.horizon, "Window horizon W (forecasting)");
  decoy->add_option("--stride", da.stride, "Window stride (forecasting, 0 = T/2)");
  decoy->add_option("input", da.input, "Input CSV")->required();
  decoy->add_option("out", da.out_dir, "Output directory")->required();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a model, optionally with right-reason feedback");
  tr->add_option("--data", ta.data, "Dataset CSV")->required();
  tr->add_option("--out", ta.out, "Checkpoint path")->required();
  tr->add_option("--task", ta.task, "classification | forecasting");
  tr->add_option("--masks", ta.masks, "Mask file JSON");
  tr->add_option("--lambda1", ta.lambda1, "Weight of the time-domain right-reason term");
  tr->add_option("--lambda2", ta.lambda2, "Weight of the frequency-domain right-reason term");
  tr->add_option("--epochs", ta.cfg.epochs, "Epochs");
  tr->add_option("--batch-size", ta.cfg.batch_size, "Batch size");
  tr->add_option("--lr", ta.cfg.learning_rate, "Learning rate");
  tr->add_option("--momentum", ta.cfg.momentum, "SGD momentum");
  tr->add_option("--optimizer", ta.optimizer, "sgd | adam");
  tr->add_option("--ig-steps", ta.cfg.ig.steps, "Integrated-gradients steps for the right-reason terms");
  tr->add_option("--seed", ta.seed, "Seed");
  tr->add_option("--channels", ta.channels, "FCN channels, comma separated");
  tr->add_option("--kernels", ta.kernels, "FCN kernel sizes, comma separated");
  tr->add_option("--hidden", ta.hidden, "MLP hidden widths, comma separated");
  tr->add_option("--lookback", ta.lookback, "Lookback (forecasting)");
  tr->add_option("--horizon", ta.horizon, "Horizon (forecasting)");
  tr->add_option("--stride", ta.stride, "Window stride (forecasting)");
  tr->add_option("--log", ta.log, "JSONL per-epoch log");

  std::string ex_model, ex_data, ex_sample, ex_domain = "time";
  std::size_t ex_steps = 32;
  std::uint64_t ex_seed = 0;
  auto* ex = app.add_subcommand("explain", "Dump the attribution of one sample as JSON");
  ex->add_option("--model", ex_model, "Checkpoint")->required();
  ex->add_option("--data", ex_data, "Dataset CSV")->required();
  ex->add_option("--sample", ex_sample, "Sample id")->required();
  ex->add_option("--domain", ex_domain, "time | freq");
  ex->add_option("--steps", ex_steps, "Integrated-gradients steps");
  ex->add_option("--seed", ex_seed, "Split seed for undecoyed data");

  std::string ev_model, ev_data, ev_split = "test";
  std::uint64_t ev_seed = 0;
  auto* ev = app.add_subcommand("evaluate", "Balanced accuracy of a checkpoint on one split");
  ev->add_option("--model", ev_model, "Checkpoint")->required();
  ev->add_option("--data", ev_data, "Dataset CSV")->required();
  ev->add_option("--split", ev_split, "train | val | test");
  ev->add_option("--seed", ev_seed, "Split seed for undecoyed data");

  std::string spec_path, seeds, fractions, noise;
  std::size_t epochs = 0, workers = 0;
  auto* ab = app.add_subcommand("ablate", "Sweep feedback coverage or mask noise");
  ab->add_option("--spec", spec_path, "Experiment spec JSON")->required();
  auto* frac_opt = ab->add_option("--fractions", fractions, "Coverage values, comma separated");
  auto* noise_opt = ab->add_option("--noise", noise, "Noise values, comma separated");
  frac_opt->excludes(noise_opt);
  ab->add_option("--seeds", seeds, "Override seeds");
  ab->add_option("--epochs", epochs, "Override epochs");
  ab->add_option("--workers", workers, "Parallel runs");

  auto* exp = app.add_subcommand("experiment", "Run the row table of an experiment spec");
  exp->add_option("--spec", spec_path, "Experiment spec JSON")->required();
  exp->add_option("--seeds", seeds, "Override seeds");
  exp->add_option("--epochs", epochs, "Override epochs");
  exp->add_option("--workers", workers, "Parallel runs");

  std::string root;
  int port = -1;
  std::size_t jobs = 1;
  auto* sv = app.add_subcommand("serve", "Run the HTTP service");
  sv->add_option("--data-root", root, "Data root (default: $TSXIL_DATA_ROOT)");
  sv->add_option("--port", port, "Port (0 picks a free one)");
  sv->add_option("--jobs", jobs, "Parallel revision jobs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (decoy->parsed()) return run_decoy(da);
    if (tr->parsed()) return run_train(ta);
    if (ex->parsed()) return run_explain(ex_model, ex_data, ex_sample, ex_domain, ex_steps, ex_seed);
    if (ev->parsed()) return run_evaluate(ev_model, ev_data, ev_split, ev_seed);
    if (ab->parsed()) {
      const auto spec = load_spec(spec_path, seeds, epochs, workers);
      if (fractions.empty() && noise.empty()) throw ConfigError("ablate needs --fractions or --noise");
      const bool cov = !fractions.empty();
      return print_table(run_feedback_sweep(spec, cov ? SweepKind::Coverage : SweepKind::Noise,
                                            parse_reals(cov ? fractions : noise)));
    }
    if (exp->parsed()) return print_table(run_experiment(load_spec(spec_path, seeds, epochs, workers)));
    if (sv->parsed()) {
      ServiceConfig cfg;
      if (root.empty()) cfg = service_config_from_env();
      else cfg.data_root = root;
      if (port >= 0) cfg.port = port;
      cfg.workers = jobs;
      Workbench bench(cfg);
      HttpServer server(bench);
      const int bound = server.bind();
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "listening on " << cfg.host << ":" << bound << " (data root " << cfg.data_root.string() << ")\n";
      server.listen();
      return 0;
    }
  } catch (const std::exception& e) {
    if (g_json) std::cout << nlohmann::json{{"error", e.what()}}.dump() << "\n";
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
