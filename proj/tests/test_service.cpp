#include <doctest.h>

#include <httplib.h>

#include <cmath>
#include <thread>

#include "tsxil/error.hpp"
#include "tsxil/service.hpp"

using namespace tsxil;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kLength = 64;
constexpr std::size_t kSegment = 16;

// Decoyed toy set with a trained base model under a fresh data root.
struct Fixture {
  fs::path root;
  ClassificationDataset data;

  explicit Fixture(const std::string& name) {
    root = fs::temp_directory_path() / ("tsxil_service_" + name);
    fs::remove_all(root);
    fs::create_directories(root / "datasets");
    fs::create_directories(root / "models");
    ToyClassificationConfig toy;
    toy.samples = 200;
    toy.length = kLength;
    toy.min_position = kSegment;
    toy.signal = 1.0;
    toy.bump_width = 8;
    DecoyConfig d;
    d.segment = kSegment;
    d.amplitude = 3.0;
    d.seed = 2;
    const auto decoyed = inject_cls_spatial(split(make_toy_classification(toy, 2), 2), d);
    data = decoyed.data;
    const auto csv = root / "datasets" / "toy.csv";
    write_text(csv, classification_csv(data));
    write_text(header_path(csv), header_json(data.header).dump());

    FcnConfig fc;
    fc.channels = {16, 16};
    fc.kernels = {7, 5};
    FcnClassifier model(fc, 1);
    train(model, training_set(data, Split::Train), nullptr, base_config(0.0));
    save_checkpoint(model, root / "models" / "base.ckpt");
  }
  ~Fixture() { fs::remove_all(root); }

  static TrainConfig base_config(double lambda) {
    TrainConfig c;
    c.epochs = 20;
    c.batch_size = 16;
    c.learning_rate = 0.02;
    c.optimizer = OptimizerKind::Adam;
    c.ig.steps = 4;
    c.loss.lambda_sp = lambda;
    return c;
  }

  ServiceConfig config() const {
    ServiceConfig c;
    c.data_root = root;
    c.port = 0;
    return c;
  }
};

double mass_in_segment(const nlohmann::json& attribution) {
  const auto v = attribution["values"].get<std::vector<double>>();
  double in = 0, all = 0;
  for (std::size_t t = 0; t < v.size(); ++t) {
    all += std::abs(v[t]);
    if (t < kSegment) in += std::abs(v[t]);
  }
  return all > 0 ? in / all : 0.0;
}

nlohmann::json wait_done(Workbench& wb, const std::string& id) {
  for (int i = 0; i < 600; ++i) {
    const auto j = wb.wait_job(id, 1000);
    if (j["state"] == "done" || j["state"] == "failed") return j;
  }
  FAIL("job did not finish");
  return {};
}

}  // namespace

TEST_CASE("http endpoints, mask round trip and error mapping") {
  Fixture fx("http");
  Workbench wb(fx.config());
  HttpServer server(wb);
  const int port = server.bind();
  std::thread th([&] { server.listen(); });
  httplib::Client cli("127.0.0.1", port);

  const auto datasets = cli.Get("/datasets");
  REQUIRE(datasets);
  CHECK(datasets->status == 200);
  const auto list = nlohmann::json::parse(datasets->body);
  REQUIRE(list.size() == 1);
  CHECK(list[0]["id"] == "toy");
  CHECK(list[0]["splits"]["test"] == 60);

  const auto s = cli.Get("/datasets/toy/samples/3");
  REQUIRE(s);
  CHECK(s->status == 200);
  CHECK(nlohmann::json::parse(s->body)["values"].size() == kLength);
  CHECK(cli.Get("/datasets/nope/samples/0")->status == 404);
  CHECK(cli.Get("/datasets/toy/samples/999")->status == 404);
  CHECK(cli.Get("/explain/nope/0")->status == 404);
  CHECK(cli.Get("/jobs/job77")->status == 404);
  CHECK(cli.Get("/masks/m0")->status == 404);

  // Explain, mark the top-|e| position as an interval, post it, read it back.
  const auto ex = cli.Get("/explain/base/3?domain=time&dataset=toy");
  REQUIRE(ex);
  REQUIRE(ex->status == 200);
  const auto attr = nlohmann::json::parse(ex->body);
  const auto values = attr["values"].get<std::vector<double>>();
  std::size_t top = 0;
  for (std::size_t t = 0; t < values.size(); ++t)
    if (std::abs(values[t]) > std::abs(values[top])) top = t;
  const nlohmann::json mask = nlohmann::json::array(
      {{{"sample_id", attr["sample_id"]}, {"domain", "time"}, {"intervals", {{top, top + 1}}}}});
  const auto posted = cli.Post("/masks", mask.dump(), "application/json");
  REQUIRE(posted);
  CHECK(posted->status == 201);
  const auto id = nlohmann::json::parse(posted->body)["id"].get<std::string>();
  const auto back = cli.Get("/masks/" + id);
  REQUIRE(back);
  CHECK(back->status == 200);
  CHECK(back->body == mask.dump());
  // Reposting the served bytes is idempotent.
  CHECK(nlohmann::json::parse(cli.Post("/masks", back->body, "application/json")->body)["id"] == id);

  const auto freq = cli.Get("/explain/base/3?domain=freq&dataset=toy");
  REQUIRE(freq);
  CHECK(nlohmann::json::parse(freq->body)["domain"] == "freq");
  CHECK(cli.Get("/explain/base/3?domain=phase&dataset=toy")->status == 400);

  const auto bad = cli.Post("/masks", R"([{"domain":"time","intervals":[[4,2]]},{"sample_id":"1","domain":"x"}])",
                            "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  const auto err = nlohmann::json::parse(bad->body);
  CHECK(err["error"] == "validation");
  CHECK(err["fields"].size() == 3);
  CHECK(cli.Post("/masks", "{not json", "application/json")->status == 400);

  const auto rev_bad = cli.Post("/revise", R"({"model": 3})", "application/json");
  REQUIRE(rev_bad);
  CHECK(rev_bad->status == 400);
  CHECK(nlohmann::json::parse(rev_bad->body)["fields"].size() == 2);
  CHECK(cli.Post("/revise", R"({"model":"base","dataset":"toy","masks":"m123"})", "application/json")->status == 404);

  server.stop();
  th.join();
}

TEST_CASE("revision with no active feedback leaves the model unchanged") {
  Fixture fx("noop");
  Workbench wb(fx.config());
  RevisionRequest req;
  req.model = "base";
  req.dataset = "toy";
  req.train = Fixture::base_config(0.0);
  const auto job = wait_done(wb, wb.submit(req));
  REQUIRE(job["state"] == "done");
  CHECK(job["after"] == job["before"]);
  CHECK(job["warnings"].size() == 1);
  CHECK(job["checkpoint_hash"] == checkpoint_hash(*wb.load_model("base")));
}

TEST_CASE("revision loop moves attribution out of the marked decoy") {
  Fixture fx("loop");
  Workbench wb(fx.config());
  const auto mask = nlohmann::json::array(
      {{{"broadcast", true}, {"domain", "time"}, {"intervals", {{0, kSegment}}}}});
  const auto mask_id = wb.post_masks(mask.dump())["id"].get<std::string>();

  RevisionRequest req;
  req.model = "base";
  req.dataset = "toy";
  req.masks = mask_id;
  req.train = Fixture::base_config(30.0);
  req.train.epochs = 40;
  const auto first = wb.submit(req);
  const auto second = wb.submit(req);
  CHECK(wb.job(second)["state"] == "queued");
  const auto job = wait_done(wb, first);
  REQUIRE(job["state"] == "done");
  CHECK(job["progress"].size() == 40);
  // Broadcast masks also cover val and test samples; those are never trained on.
  CHECK(job["warnings"].size() == 1);
  const auto job2 = wait_done(wb, second);
  CHECK(job2["checkpoint_hash"] == job["checkpoint_hash"]);

  double before = 0, after = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < fx.data.size(); ++i) {
    if (fx.data.splits[i] != Split::Train) continue;
    const auto& sid = fx.data.sample_ids[i];
    before += mass_in_segment(wb.explain("base", "toy", sid, "time"));
    after += mass_in_segment(wb.job_explain(first, sid, "time"));
    ++n;
  }
  before /= double(n);
  after /= double(n);
  MESSAGE("mass in mask before " << before << ", after " << after);
  CHECK(after <= 0.2 * before);
  CHECK(job["after"]["test"]["balanced_accuracy"].get<double>() >
        job["before"]["test"]["balanced_accuracy"].get<double>());
}

TEST_CASE("job explanations need a finished job") {
  Fixture fx("pending");
  ServiceConfig cfg = fx.config();
  Workbench wb(cfg);
  CHECK_THROWS_AS(wb.job_explain("job1", "0", "time"), NotFoundError);
  CHECK_THROWS_AS(wb.load_dataset("../etc"), NotFoundError);
  CHECK(to_string(JobState::Running) == "running");
}
