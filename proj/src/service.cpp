#include "tsxil/service.hpp"

#include <httplib.h>

#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstdlib>

#include "tsxil/error.hpp"

namespace tsxil {

namespace {

const std::string kJson = "application/json";

bool valid_id(const std::string& id) {
  if (id.empty() || id.size() > 128 || id.front() == '.') return false;
  for (unsigned char c : id)
    if (!(std::isalnum(c) || c == '_' || c == '-' || c == '.')) return false;
  return true;
}

void check_id(const std::string& kind, const std::string& id) {
  if (!valid_id(id)) throw NotFoundError("unknown " + kind + " '" + id + "'");
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::size_t resolve_sample(const ClassificationDataset& ds, const std::string& sample) {
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.sample_ids[i] == sample) return i;
  std::size_t n = 0;
  const auto* end = sample.data() + sample.size();
  const auto [p, ec] = std::from_chars(sample.data(), end, n);
  if (ec == std::errc() && p == end && n < ds.size()) return n;
  throw NotFoundError("unknown sample '" + sample + "'");
}

nlohmann::json export_attribution(const Model& model, const ClassificationDataset& ds, std::size_t i,
                                  const std::string& domain, std::size_t steps) {
  if (domain != "time" && domain != "freq")
    throw ValidationError("invalid domain '" + domain + "'", {"domain: must be \"time\" or \"freq\""});
  const auto attr = explain(model, ds.series[i], IgConfig{steps, {}, true});
  if (domain == "time") return attribution_json(ds.sample_ids[i], attr);
  return attribution_json(ds.sample_ids[i], frequency_attribution(attr));
}

// Every training row must come from the training split.
void ensure_train_only(const ClassificationDataset& ds, const std::vector<std::size_t>& rows) {
  for (auto i : rows)
    if (ds.splits.at(i) != Split::Train)
      throw ContractViolation("refusing to train on sample '" + ds.sample_ids[i] + "' tagged " + to_string(ds.splits[i]));
}

nlohmann::json metrics(const Model& model, const ClassificationDataset& ds) {
  return {{"train", evaluation_json(model, training_set(ds, Split::Train))},
          {"val", evaluation_json(model, training_set(ds, Split::Val))},
          {"test", evaluation_json(model, training_set(ds, Split::Test))}};
}

bool terminal(JobState s) { return s == JobState::Done || s == JobState::Failed; }

}  // namespace

ServiceConfig service_config_from_env() {
  ServiceConfig cfg;
  const char* root = std::getenv("TSXIL_DATA_ROOT");
  if (!root || !*root) throw ConfigError("TSXIL_DATA_ROOT is not set");
  cfg.data_root = root;
  if (const char* port = std::getenv("TSXIL_PORT")) cfg.port = std::atoi(port);
  return cfg;
}

std::string to_string(JobState s) {
  switch (s) {
    case JobState::Queued:
      return "queued";
    case JobState::Running:
      return "running";
    case JobState::Done:
      return "done";
    case JobState::Failed:
      return "failed";
  }
  return "failed";
}

RevisionRequest RevisionRequest::from_json(const nlohmann::json& j) {
  std::vector<std::string> problems;
  if (!j.is_object()) throw ValidationError("revision request must be an object", {"$: must be an object"});
  auto str = [&](const char* key, bool required) {
    if (!j.contains(key)) {
      if (required) problems.push_back(std::string(key) + ": required string");
      return std::string();
    }
    if (!j[key].is_string()) {
      problems.push_back(std::string(key) + ": must be a string");
      return std::string();
    }
    return j[key].get<std::string>();
  };
  RevisionRequest r;
  r.model = str("model", true);
  r.dataset = str("dataset", true);
  r.masks = str("masks", false);
  if (j.contains("train")) {
    try {
      r.train = train_config_from_json(j["train"]);
    } catch (const std::exception& e) {
      problems.push_back(std::string("train: ") + e.what());
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid revision request:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ValidationError(msg, problems);
  }
  r.train.loss.task = TaskKind::Classification;
  return r;
}

nlohmann::json RevisionRequest::to_json() const {
  return {{"model", model}, {"dataset", dataset}, {"masks", masks}, {"train", train_config_json(train)}};
}

nlohmann::json job_json(const RevisionJob& job) {
  nlohmann::json progress = nlohmann::json::array();
  for (const auto& e : job.progress) progress.push_back(epoch_log_json(e));
  nlohmann::json j = {{"id", job.id},
                      {"state", to_string(job.state)},
                      {"request", job.request.to_json()},
                      {"epoch", job.progress.empty() ? 0 : job.progress.back().epoch},
                      {"epochs", job.request.train.epochs},
                      {"progress", progress},
                      {"warnings", job.warnings}};
  j["before"] = job.before ? *job.before : nlohmann::json(nullptr);
  j["after"] = job.after ? *job.after : nlohmann::json(nullptr);
  if (job.state == JobState::Done) {
    j["result_model"] = job.result_model;
    j["checkpoint_hash"] = job.checkpoint_hash;
  }
  if (job.state == JobState::Failed) j["error"] = job.error;
  return j;
}

std::string checkpoint_hash(const Model& model) { return hex64(fnv1a(checkpoint_bytes(model))); }

// ---- workbench -----------------------------------------------------------------

Workbench::Workbench(ServiceConfig cfg) : cfg_(std::move(cfg)) {
  if (!std::filesystem::is_directory(cfg_.data_root))
    throw NotFoundError("data root " + cfg_.data_root.string() + " is not a directory");
  for (const char* sub : {"datasets", "models", "masks"}) std::filesystem::create_directories(cfg_.data_root / sub);
  if (cfg_.workers < 1) throw ConfigError("workers must be >= 1");
  for (std::size_t i = 0; i < cfg_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
}

Workbench::~Workbench() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  changed_.notify_all();
  for (auto& t : workers_) t.join();
}

std::filesystem::path Workbench::dataset_path(const std::string& id) const {
  check_id("dataset", id);
  return cfg_.data_root / "datasets" / (id + ".csv");
}

std::filesystem::path Workbench::model_path(const std::string& id) const {
  check_id("model", id);
  return cfg_.data_root / "models" / (id + ".ckpt");
}

std::filesystem::path Workbench::mask_path(const std::string& id) const {
  check_id("mask file", id);
  return cfg_.data_root / "masks" / (id + ".json");
}

ClassificationDataset Workbench::load_dataset(const std::string& id) const {
  const auto path = dataset_path(id);
  if (!std::filesystem::exists(path)) throw NotFoundError("unknown dataset '" + id + "'");
  auto ds = load_classification_csv(path);
  const auto seed = ds.header.decoy ? ds.header.decoy->seed : cfg_.split_seed;
  return split(ds, seed);
}

std::unique_ptr<Model> Workbench::load_model(const std::string& id) const {
  const auto path = model_path(id);
  if (!std::filesystem::exists(path)) throw NotFoundError("unknown model '" + id + "'");
  return load_checkpoint(path);
}

nlohmann::json Workbench::list_datasets() const {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(cfg_.data_root / "datasets"))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  nlohmann::json out = nlohmann::json::array();
  for (const auto& f : files) {
    const std::string id = f.stem().string();
    try {
      const auto ds = load_dataset(id);
      out.push_back({{"id", id},
                     {"samples", ds.size()},
                     {"length", ds.length()},
                     {"classes", ds.num_classes()},
                     {"splits",
                      {{"train", ds.indices(Split::Train).size()},
                       {"val", ds.indices(Split::Val).size()},
                       {"test", ds.indices(Split::Test).size()}}},
                     {"header", header_json(ds.header)}});
    } catch (const Error& e) {
      out.push_back({{"id", id}, {"error", e.what()}});
    }
  }
  return out;
}

nlohmann::json Workbench::sample(const std::string& dataset, const std::string& sample) const {
  const auto ds = load_dataset(dataset);
  const auto i = resolve_sample(ds, sample);
  return {{"dataset", dataset},
          {"index", i},
          {"sample_id", ds.sample_ids[i]},
          {"label", ds.labels[i]},
          {"class_value", ds.class_values.at(ds.labels[i])},
          {"split", to_string(ds.splits[i])},
          {"values", ds.series[i]}};
}

nlohmann::json Workbench::explain(const std::string& model, const std::string& dataset, const std::string& sample,
                                  const std::string& domain, std::optional<std::size_t> steps) const {
  const auto m = load_model(model);
  const auto ds = load_dataset(dataset);
  return export_attribution(*m, ds, resolve_sample(ds, sample), domain, steps.value_or(cfg_.explain_steps));
}

nlohmann::json Workbench::post_masks(const std::string& body) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("mask file is not JSON: ") + e.what(), {"$: not valid JSON"});
  }
  const auto canonical = mask_file_json(parse_mask_file(doc)).dump();
  const std::string id = "m" + hex64(fnv1a(canonical));
  std::lock_guard lock(mu_);
  write_text(mask_path(id), canonical);
  return {{"id", id}, {"entries", doc.size()}};
}

std::string Workbench::get_masks(const std::string& id) const {
  const auto path = mask_path(id);
  if (!std::filesystem::exists(path)) throw NotFoundError("unknown mask file '" + id + "'");
  std::lock_guard lock(mu_);
  return read_text(path);
}

std::string Workbench::submit(const RevisionRequest& req) {
  // Fail fast on unknown references; the worker re-loads them.
  if (!std::filesystem::exists(model_path(req.model))) throw NotFoundError("unknown model '" + req.model + "'");
  if (!std::filesystem::exists(dataset_path(req.dataset))) throw NotFoundError("unknown dataset '" + req.dataset + "'");
  if (!req.masks.empty() && !std::filesystem::exists(mask_path(req.masks)))
    throw NotFoundError("unknown mask file '" + req.masks + "'");
  req.train.validate();
  std::string id;
  {
    std::lock_guard lock(mu_);
    id = "job" + std::to_string(next_job_++);
    RevisionJob job;
    job.id = id;
    job.request = req;
    jobs_.emplace(id, std::move(job));
    queue_.push_back(id);
  }
  changed_.notify_all();
  return id;
}

RevisionJob Workbench::snapshot(const std::string& id) const {
  std::lock_guard lock(mu_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) throw NotFoundError("unknown job '" + id + "'");
  return it->second;
}

nlohmann::json Workbench::job(const std::string& id) const { return job_json(snapshot(id)); }

nlohmann::json Workbench::wait_job(const std::string& id, double timeout_ms) const {
  std::unique_lock lock(mu_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) throw NotFoundError("unknown job '" + id + "'");
  const auto state = it->second.state;
  const auto epochs = it->second.progress.size();
  changed_.wait_for(lock, std::chrono::duration<double, std::milli>(timeout_ms), [&] {
    const auto& j = jobs_.at(id);
    return terminal(j.state) || j.state != state || j.progress.size() != epochs;
  });
  return job_json(jobs_.at(id));
}

nlohmann::json Workbench::job_explain(const std::string& id, const std::string& sample, const std::string& domain) const {
  const auto job = snapshot(id);
  if (job.state != JobState::Done)
    throw ContractViolation("job '" + id + "' is " + to_string(job.state) + "; explanations need a finished job");
  return explain(job.result_model, job.request.dataset, sample, domain);
}

void Workbench::worker_loop() {
  for (;;) {
    std::string id;
    {
      std::unique_lock lock(mu_);
      changed_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      id = queue_.front();
      queue_.pop_front();
      jobs_.at(id).state = JobState::Running;
    }
    changed_.notify_all();
    try {
      run_job(id);
    } catch (const std::exception& e) {
      std::lock_guard lock(mu_);
      auto& job = jobs_.at(id);
      job.state = JobState::Failed;
      job.error = e.what();
    }
    changed_.notify_all();
  }
}

void Workbench::run_job(const std::string& id) {
  const auto req = snapshot(id).request;
  const auto ds = load_dataset(req.dataset);
  auto model = load_model(req.model);
  if (model->task() != TaskKind::Classification) throw ConfigError("revision jobs need a classification model");

  std::vector<std::string> warnings;
  FeedbackSet full;
  if (!req.masks.empty()) {
    full = materialize(parse_mask_file(nlohmann::json::parse(get_masks(req.masks))), ds.sample_ids, ds.length());
    std::size_t outside = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) outside += ds.splits[i] != Split::Train && full.annotated(i) ? 1 : 0;
    if (outside > 0)
      warnings.push_back(std::to_string(outside) + " annotated samples outside the training split were ignored");
  }
  const auto rows = ds.indices(Split::Train);
  ensure_train_only(ds, rows);
  const auto data = training_set(ds, Split::Train);
  const auto fb = select_feedback(full, ds, Split::Train);
  const auto before = metrics(*model, ds);
  {
    std::lock_guard lock(mu_);
    auto& job = jobs_.at(id);
    job.before = before;
    job.warnings = warnings;
  }
  auto cfg = req.train;
  cfg.loss.task = TaskKind::Classification;
  auto any = [](const auto& masks) {
    return std::any_of(masks.begin(), masks.end(), [](const auto& m) { return !m.empty(); });
  };
  const bool active = (cfg.loss.lambda_sp > 0.0 && any(fb.time)) || (cfg.loss.lambda_fr > 0.0 && any(fb.freq));
  if (active) {
    train(*model, data, &fb, cfg, [&](EpochLog& e, const Model&) {
      {
        std::lock_guard lock(mu_);
        jobs_.at(id).progress.push_back(e);
      }
      changed_.notify_all();
      return true;
    });
  } else {
    std::lock_guard lock(mu_);
    jobs_.at(id).warnings.push_back("no feedback in an enabled domain; the model is left unchanged");
  }
  const auto after = metrics(*model, ds);
  const std::string result = id;
  save_checkpoint(*model, model_path(result));
  const auto hash = checkpoint_hash(*model);
  std::lock_guard lock(mu_);
  auto& job = jobs_.at(id);
  job.after = after;
  job.result_model = result;
  job.checkpoint_hash = hash;
  job.state = JobState::Done;
}

// ---- http ----------------------------------------------------------------------

namespace {

void reply(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), kJson);
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const NotFoundError& e) {
      reply(res, 404, {{"error", "not_found"}, {"message", e.what()}});
    } catch (const ValidationError& e) {
      reply(res, 400, {{"error", "validation"}, {"message", e.what()}, {"fields", e.fields()}});
    } catch (const ContractViolation& e) {
      reply(res, 409, {{"error", "conflict"}, {"message", e.what()}});
    } catch (const nlohmann::json::exception& e) {
      reply(res, 400, {{"error", "validation"}, {"message", e.what()}, {"fields", {"$: malformed JSON"}}});
    } catch (const Error& e) {
      reply(res, 400, {{"error", "bad_request"}, {"message", e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", "internal"}, {"message", e.what()}});
    }
  };
}

std::optional<std::size_t> steps_param(const httplib::Request& req) {
  if (!req.has_param("steps")) return std::nullopt;
  const auto s = req.get_param_value("steps");
  std::size_t n = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
  if (ec != std::errc() || p != s.data() + s.size() || n == 0)
    throw ValidationError("invalid steps '" + s + "'", {"steps: must be a positive integer"});
  return n;
}

}  // namespace

HttpServer::HttpServer(Workbench& bench) : bench_(bench), server_(std::make_unique<httplib::Server>()) {
  auto& s = *server_;
  s.Get("/datasets", guarded([this](const httplib::Request&, httplib::Response& res) {
          reply(res, 200, bench_.list_datasets());
        }));
  s.Get(R"(/datasets/([^/]+)/samples/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
          reply(res, 200, bench_.sample(req.matches[1], req.matches[2]));
        }));
  s.Get(R"(/explain/([^/]+)/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
          const std::string domain = req.has_param("domain") ? req.get_param_value("domain") : "time";
          std::string dataset = req.has_param("dataset") ? req.get_param_value("dataset") : "";
          if (dataset.empty()) {
            const auto all = bench_.list_datasets();
            if (all.size() != 1)
              throw ValidationError("dataset query parameter required", {"dataset: required when several datasets exist"});
            dataset = all[0]["id"].get<std::string>();
          }
          reply(res, 200, bench_.explain(req.matches[1], dataset, req.matches[2], domain, steps_param(req)));
        }));
  s.Post("/masks", guarded([this](const httplib::Request& req, httplib::Response& res) {
           reply(res, 201, bench_.post_masks(req.body));
         }));
  s.Get(R"(/masks/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
          res.status = 200;
          res.set_content(bench_.get_masks(req.matches[1]), kJson);
        }));
  s.Post("/revise", guarded([this](const httplib::Request& req, httplib::Response& res) {
           const auto id = bench_.submit(RevisionRequest::from_json(nlohmann::json::parse(req.body)));
           reply(res, 202, {{"id", id}});
         }));
  s.Get(R"(/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
          if (req.has_param("wait")) {
            const double ms = std::stod(req.get_param_value("wait")) * 1000.0;
            reply(res, 200, bench_.wait_job(req.matches[1], std::clamp(ms, 0.0, 60000.0)));
          } else {
            reply(res, 200, bench_.job(req.matches[1]));
          }
        }));
  s.Get(R"(/jobs/([^/]+)/explain/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
          const std::string domain = req.has_param("domain") ? req.get_param_value("domain") : "time";
          reply(res, 200, bench_.job_explain(req.matches[1], req.matches[2], domain));
        }));
  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) reply(res, res.status, {{"error", res.status == 404 ? "not_found" : "error"}});
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind() {
  const auto& cfg = bench_.config();
  if (cfg.port == 0) {
    const int port = server_->bind_to_any_port(cfg.host);
    if (port <= 0) throw ConfigError("could not bind to " + cfg.host);
    return port;
  }
  if (!server_->bind_to_port(cfg.host, cfg.port))
    throw ConfigError("could not bind to " + cfg.host + ":" + std::to_string(cfg.port));
  return cfg.port;
}

void HttpServer::listen() { server_->listen_after_bind(); }

void HttpServer::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

}  // namespace tsxil
