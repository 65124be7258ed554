#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "tsxil/datasets.hpp"
#include "tsxil/error.hpp"

using namespace tsxil;

TEST_CASE("classification csv parsing") {
  const auto ds = parse_classification_csv("1,0.5,1.5,2\n-1,3,4,5\n\n1,6,7,8\n", "tiny");
  CHECK(ds.size() == 3);
  CHECK(ds.length() == 3);
  CHECK(ds.class_values == std::vector<double>{-1, 1});
  CHECK(ds.labels == std::vector<std::size_t>{1, 0, 1});
  CHECK(ds.series[1] == std::vector<double>{3, 4, 5});
  CHECK(ds.num_classes() == 2);
  CHECK(classification_csv(ds) == "1,0.5,1.5,2\n-1,3,4,5\n1,6,7,8\n");
}

TEST_CASE("csv errors") {
  CHECK_THROWS_AS(parse_classification_csv(""), DataError);
  CHECK_THROWS_AS(parse_classification_csv("\n\n"), DataError);
  try {
    parse_classification_csv("0,1,2\n1,3\n");
    FAIL("expected unequal length");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("unequal length") != std::string::npos);
  }
  try {
    parse_classification_csv("0,1,2\n1,3,abc\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.row() == 2);
    CHECK(e.col() == 3);
  }
  CHECK_THROWS_AS(parse_series_csv("1\n2,3\n"), DataError);
}

TEST_CASE("series csv round trip") {
  const auto s = parse_series_csv("1\n2.5\n-3\n");
  CHECK(s.values == std::vector<double>{1, 2.5, -3});
  CHECK(series_csv(s.values) == "1\n2.5\n-3\n");
}

TEST_CASE("split sizes") {
  auto check = [](std::size_t d, std::size_t train, std::size_t val, std::size_t test) {
    const auto s = split_sizes(d);
    CHECK(s.train == train);
    CHECK(s.val == val);
    CHECK(s.test == test);
  };
  check(100, 56, 14, 30);
  check(10, 5, 2, 3);
  check(400, 224, 56, 120);
  check(15, 8, 2, 5);  // 4.5 rounds up; 0.2 * 10 = 2
}

TEST_CASE("split assigns disjoint, seeded tags") {
  ClassificationDataset ds;
  ds.header.length = 1;
  for (std::size_t i = 0; i < 50; ++i) {
    ds.series.push_back({double(i)});
    ds.labels.push_back(i % 2);
    ds.splits.push_back(Split::Train);
    ds.sample_ids.push_back(std::to_string(i));
  }
  const auto a = split(ds, 3), b = split(ds, 3), c = split(ds, 4);
  CHECK(a.splits == b.splits);
  CHECK(a.splits != c.splits);
  CHECK(a.indices(Split::Train).size() == 28);
  CHECK(a.indices(Split::Val).size() == 7);
  CHECK(a.indices(Split::Test).size() == 15);
  CHECK(a.subset(Split::Test).size() == 15);
  ds.series.resize(9);
  ds.labels.resize(9);
  ds.splits.resize(9);
  ds.sample_ids.resize(9);
  CHECK_THROWS_AS(split(ds, 1), DataError);
}

TEST_CASE("standardization uses training statistics only") {
  ClassificationDataset ds;
  ds.header.length = 2;
  ds.series = {{1, 3}, {1, 3}, {100, 200}};
  ds.labels = {0, 1, 0};
  ds.splits = {Split::Train, Split::Train, Split::Test};
  ds.sample_ids = {"0", "1", "2"};
  const auto s = standardize(ds);
  CHECK(s.header.standardization.mean == 2.0);
  CHECK(s.header.standardization.stddev == 1.0);
  CHECK(s.series[0] == std::vector<double>{-1, 1});
  CHECK(s.series[2] == std::vector<double>{98, 198});

  ds.series = {{2, 2}, {2, 2}, {5, 5}};
  const auto flat = standardize(ds);
  CHECK(flat.series[2] == std::vector<double>{0, 0});
  CHECK(flat.header.warnings.size() == 1);
}

TEST_CASE("forecast windows") {
  std::vector<double> series(24);
  for (std::size_t i = 0; i < 24; ++i) series[i] = double(i);
  const auto w = make_windows(series, 9, 3, 6);
  CHECK(w.starts == std::vector<std::size_t>{0, 6, 12});
  CHECK(w.input(1) == std::vector<double>{6, 7, 8, 9, 10, 11, 12, 13, 14});
  CHECK(w.target(2) == std::vector<double>{21, 22, 23});
  // Default stride is T / 2.
  CHECK(make_windows(series, 8, 2).stride == 4);
  CHECK_THROWS_AS(make_windows(std::vector<double>(5), 4, 2), DataError);
}

TEST_CASE("temporal split keeps order") {
  std::vector<double> series(100);
  for (std::size_t i = 0; i < 100; ++i) series[i] = double(i);
  const auto s = temporal_split(series);
  CHECK(s.train.size() == 56);
  CHECK(s.val.size() == 14);
  CHECK(s.test.size() == 30);
  CHECK(s.val.front() == 56);
  CHECK(s.test.front() == 70);
}

TEST_CASE("header json round trip and side file") {
  DatasetHeader h;
  h.name = "x";
  h.length = 64;
  h.classes = 2;
  h.decoy = DecoyProvenance{"cls_spatial", {{"m", 16}}, 5};
  h.standardization = {true, 0.5, 2.0};
  const auto back = header_from_json(header_json(h));
  CHECK(header_json(back) == header_json(h));

  const auto dir = std::filesystem::temp_directory_path() / "tsxil_ds_test";
  std::filesystem::create_directories(dir);
  write_text(dir / "d.csv", "0,1,2\n1,3,4\n");
  write_text(header_path(dir / "d.csv"), header_json(h).dump());
  const auto ds = load_classification_csv(dir / "d.csv");
  REQUIRE(ds.header.decoy.has_value());
  CHECK(ds.header.decoy->kind == "cls_spatial");
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_classification_csv(dir / "missing.csv"), NotFoundError);
}

TEST_CASE("synthetic generators are seeded") {
  ToyClassificationConfig cfg;
  cfg.samples = 20;
  const auto a = make_toy_classification(cfg, 1), b = make_toy_classification(cfg, 1);
  CHECK(a.series == b.series);
  CHECK(a.size() == 20);
  CHECK(std::set<std::size_t>(a.labels.begin(), a.labels.end()).size() == 2);
  const auto s = make_seasonal_series(SeasonalSeriesConfig{}, 3);
  CHECK(s.values.size() == 2000);
  CHECK(s.values == make_seasonal_series(SeasonalSeriesConfig{}, 3).values);
}
