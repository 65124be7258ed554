#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "tsxil/datasets.hpp"
#include "tsxil/feedback.hpp"

using namespace tsxil;
namespace fs = std::filesystem;

namespace {

struct Output {
  int status;
  std::string text;
};

Output run(const std::string& args) {
  const std::string cmd = std::string(TSXIL_BIN) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::string text;
  std::array<char, 4096> buf{};
  while (const auto n = std::fread(buf.data(), 1, buf.size(), p)) text.append(buf.data(), n);
  const int raw = pclose(p);
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, text};
}

nlohmann::json run_json(const std::string& args) {
  const auto out = run("--json " + args);
  INFO(out.text);
  REQUIRE(out.status == 0);
  return nlohmann::json::parse(out.text);
}

struct Workdir {
  fs::path dir;
  Workdir() {
    dir = fs::temp_directory_path() / "tsxil_cli";
    fs::remove_all(dir);
    fs::create_directories(dir);
    ToyClassificationConfig toy;
    toy.samples = 60;
    toy.length = 32;
    toy.min_position = 8;
    write_text(dir / "toy.csv", classification_csv(make_toy_classification(toy, 1)));
  }
  ~Workdir() { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

const std::string kTrainFlags = " --epochs 3 --batch-size 8 --lr 0.01 --channels 4,4 --kernels 5,3 --ig-steps 2";

}  // namespace

TEST_CASE("decoy writes data, header and masks") {
  Workdir w;
  const auto r = run_json("decoy --kind cls_spatial --A 2 --m 8 --seed 3 " + w.path("toy.csv") + " " + w.path("out"));
  CHECK(r["samples"] == 60);
  CHECK(fs::exists(w.path("out/toy.csv")));
  CHECK(fs::exists(w.path("out/toy.csv.header.json")));
  const auto masks = parse_mask_file(nlohmann::json::parse(read_text(w.path("out/toy.masks.json"))));
  CHECK(masks.size() == r["annotated"].get<std::size_t>());
  CHECK(masks.size() > 0);
  const auto header = nlohmann::json::parse(read_text(w.path("out/toy.csv.header.json")));
  CHECK(header.dump().find("cls_spatial") != std::string::npos);

  SUBCASE("a decoyed file is not decoyed twice") {
    const auto again = run("decoy --kind cls_spatial --m 8 " + w.path("out/toy.csv") + " " + w.path("out2"));
    CHECK(again.status == 1);
  }
}

TEST_CASE("train with zero weights matches plain training") {
  Workdir w;
  run_json("decoy --kind cls_spatial --A 2 --m 8 " + w.path("toy.csv") + " " + w.path("out"));
  const auto data = " --data " + w.path("out/toy.csv");
  const auto plain = run_json("train" + data + " --out " + w.path("a.ckpt") + kTrainFlags);
  const auto zero = run_json("train" + data + " --out " + w.path("b.ckpt") + kTrainFlags + " --lambda1 0 --masks " +
                             w.path("out/toy.masks.json"));
  CHECK(plain["hash"] == zero["hash"]);
  const auto rr = run_json("train" + data + " --out " + w.path("c.ckpt") + kTrainFlags + " --lambda1 1 --masks " +
                           w.path("out/toy.masks.json") + " --log " + w.path("log.jsonl"));
  CHECK(rr["hash"] != plain["hash"]);
  std::ifstream log(w.path("log.jsonl"));
  std::size_t lines = 0;
  for (std::string line; std::getline(log, line); ++lines) CHECK(nlohmann::json::parse(line)["rr_sp"].get<double>() >= 0);
  CHECK(lines == 3);

  const auto ev = run_json("evaluate --model " + w.path("a.ckpt") + data + " --split test");
  CHECK(ev["balanced_accuracy"] == plain["test"]["balanced_accuracy"]);
  const auto ex = run_json("explain --model " + w.path("a.ckpt") + data + " --sample 0 --steps 4");
  CHECK(ex["values"].size() == 32);
  CHECK(run_json("explain --model " + w.path("a.ckpt") + data + " --sample 0 --domain freq")["domain"] == "freq");
}

TEST_CASE("ablate runs one row per feedback fraction") {
  Workdir w;
  const nlohmann::json spec = {
      {"name", "cli"},
      {"task", "classification"},
      {"toy", {{"samples", 60}, {"length", 32}, {"min_position", 8}}},
      {"decoys", {{{"kind", "cls_spatial"}, {"A", 2.0}, {"m", 8}}}},
      {"model", {{"family", "fcn"}, {"channels", {4}}, {"kernels", {5}}, {"num_classes", 2}}},
      {"train", {{"epochs", 2}, {"batch_size", 16}, {"ig_steps", 2}}},
      {"lambda_sp", 1.0},
      {"seeds", {0}}};
  write_text(w.path("spec.json"), spec.dump());
  const auto t = run_json("ablate --spec " + w.path("spec.json") + " --fractions 0,0.05,0.25,1.0");
  REQUIRE(t["rows"].size() == 4);
  CHECK(t["rows"][0]["label"] == "p=0");
  const auto q = run_json("ablate --spec " + w.path("spec.json") + " --noise 0.1 --seeds 0,1");
  REQUIRE(q["rows"].size() == 1);
  CHECK(q["rows"][0]["runs"].size() == 2);
}

TEST_CASE("errors exit nonzero with a message") {
  Workdir w;
  const auto missing = run("train --data " + w.path("nope.csv") + " --out " + w.path("x.ckpt"));
  CHECK(missing.status == 1);
  CHECK(missing.text.find("error") != std::string::npos);
  CHECK(run("decoy --kind sideways " + w.path("toy.csv") + " " + w.path("o")).status != 0);
  CHECK(run("").status != 0);
}
