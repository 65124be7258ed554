#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tsxil/trainer.hpp"

namespace httplib {
class Server;
}

namespace tsxil {

// Data root layout:
//   datasets/<id>.csv (+ <id>.csv.header.json)   classification datasets
//   models/<id>.ckpt                              checkpoints
//   masks/<id>.json                               accepted mask files
struct ServiceConfig {
  std::filesystem::path data_root;
  std::string host = "127.0.0.1";
  int port = 8080;
  // Parallel job slots; 1 runs jobs sequentially.
  std::size_t workers = 1;
  // Split seed for datasets without decoy provenance.
  std::uint64_t split_seed = 0;
  // Default integrated-gradients resolution for /explain.
  std::size_t explain_steps = 32;
};

// Reads TSXIL_DATA_ROOT (required) and TSXIL_PORT (optional).
ServiceConfig service_config_from_env();

enum class JobState { Queued, Running, Done, Failed };
std::string to_string(JobState s);

struct RevisionRequest {
  std::string model;
  std::string dataset;
  // Id of a mask file accepted by post_masks; empty means no feedback.
  std::string masks;
  TrainConfig train;

  static RevisionRequest from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct RevisionJob {
  std::string id;
  RevisionRequest request;
  JobState state = JobState::Queued;
  std::vector<EpochLog> progress;
  std::optional<nlohmann::json> before;
  std::optional<nlohmann::json> after;
  std::string result_model;
  std::string checkpoint_hash;
  std::string error;
  std::vector<std::string> warnings;
};

nlohmann::json job_json(const RevisionJob& job);

// FNV-1a 64 of the checkpoint serialization, as 16 hex digits.
std::string checkpoint_hash(const Model& model);

// Service logic without the transport. Every method is safe to call from
// concurrent request handlers; only the job workers mutate a running job.
class Workbench {
 public:
  explicit Workbench(ServiceConfig cfg);
  ~Workbench();
  Workbench(const Workbench&) = delete;
  Workbench& operator=(const Workbench&) = delete;

  const ServiceConfig& config() const { return cfg_; }

  nlohmann::json list_datasets() const;
  nlohmann::json sample(const std::string& dataset, const std::string& sample) const;
  // Attribution export of `sample` under a stored model. domain: "time" or "freq".
  nlohmann::json explain(const std::string& model, const std::string& dataset, const std::string& sample,
                         const std::string& domain, std::optional<std::size_t> steps = {}) const;

  // Validates, stores and returns {"id": ...}. Ids are content addressed.
  nlohmann::json post_masks(const std::string& body);
  std::string get_masks(const std::string& id) const;

  std::string submit(const RevisionRequest& req);
  nlohmann::json job(const std::string& id) const;
  // Blocks until the job leaves `seen` state or `timeout_ms` elapses.
  nlohmann::json wait_job(const std::string& id, double timeout_ms) const;
  nlohmann::json job_explain(const std::string& id, const std::string& sample, const std::string& domain) const;

  ClassificationDataset load_dataset(const std::string& id) const;
  std::unique_ptr<Model> load_model(const std::string& id) const;

 private:
  void worker_loop();
  void run_job(const std::string& id);
  std::filesystem::path dataset_path(const std::string& id) const;
  std::filesystem::path model_path(const std::string& id) const;
  std::filesystem::path mask_path(const std::string& id) const;
  RevisionJob snapshot(const std::string& id) const;

  ServiceConfig cfg_;
  mutable std::mutex mu_;
  mutable std::condition_variable changed_;
  std::map<std::string, RevisionJob> jobs_;
  std::deque<std::string> queue_;
  std::size_t next_job_ = 1;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

// HTTP transport over a Workbench.
class HttpServer {
 public:
  explicit HttpServer(Workbench& bench);
  ~HttpServer();

  // Binds to the configured host; port 0 picks a free port. Returns the port.
  int bind();
  // Blocks serving requests until stop().
  void listen();
  void stop();

 private:
  Workbench& bench_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace tsxil
