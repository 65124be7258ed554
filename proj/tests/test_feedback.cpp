#include <doctest.h>

#include "tsxil/error.hpp"
#include "tsxil/feedback.hpp"

using namespace tsxil;

namespace {

FeedbackSet block_masks(std::size_t d, std::size_t t, std::size_t s, std::size_t e) {
  FeedbackSet fs;
  for (std::size_t i = 0; i < d; ++i) fs.time.push_back(mask_from_intervals({{s, e}}, t, "s" + std::to_string(i)));
  return fs;
}

FeedbackSet tone_masks(std::size_t d, std::size_t t, std::size_t f) {
  FeedbackSet fs;
  for (std::size_t i = 0; i < d; ++i) fs.freq.push_back(mask_from_bins({f, t - f}, {f, t - f}, t, "s" + std::to_string(i)));
  return fs;
}

}  // namespace

TEST_CASE("mask_from_intervals") {
  CHECK(mask_from_intervals({{3, 5}}, 8).bits == std::vector<std::uint8_t>{0, 0, 0, 1, 1, 0, 0, 0});
  CHECK(mask_from_intervals({}, 4).bits == std::vector<std::uint8_t>(4, 0));
  CHECK(mask_from_intervals({{0, 8}}, 8).bits == std::vector<std::uint8_t>(8, 1));
  // Overlap is allowed.
  CHECK(mask_from_intervals({{1, 4}, {2, 6}}, 8).popcount() == 5);
  CHECK_THROWS_AS(mask_from_intervals({{5, 9}}, 8), DataError);
  CHECK_THROWS_AS(mask_from_intervals({{3, 3}}, 8), DataError);
  CHECK(mask_from_intervals({{1, 3}, {5, 6}}, 8).intervals() == std::vector<Interval>{{1, 3}, {5, 6}});
}

TEST_CASE("mask_from_bins keeps re and im independent") {
  const auto m = mask_from_bins({1}, {2, 3}, 6);
  CHECK(m.re_bins() == std::vector<std::size_t>{1});
  CHECK(m.im_bins() == std::vector<std::size_t>{2, 3});
  CHECK_THROWS_AS(mask_from_bins({6}, {}, 6), DataError);
}

TEST_CASE("subset_feedback") {
  const auto fs = block_masks(1000, 16, 2, 6);
  CHECK(subset_feedback(fs, 0.0, 1).annotated_count() == 0);
  CHECK(subset_feedback(fs, 1.0, 1) == fs);
  CHECK(subset_feedback(fs, 0.05, 1).annotated_count() == 50);
  CHECK(subset_feedback(fs, 0.05, 1) == subset_feedback(fs, 0.05, 1));
  CHECK_FALSE(subset_feedback(fs, 0.05, 1) == subset_feedback(fs, 0.05, 2));
  CHECK_THROWS_AS(subset_feedback(fs, 1.5, 1), ConfigError);
  // Kept masks are unchanged, the others are cleared.
  const auto sub = subset_feedback(fs, 0.3, 9);
  for (std::size_t i = 0; i < 1000; ++i) {
    if (sub.annotated(i)) CHECK(sub.time[i] == fs.time[i]);
    else CHECK(sub.time[i].empty());
  }
}

TEST_CASE("noisy_feedback on time masks") {
  const auto fs = block_masks(40, 32, 4, 10);
  CHECK(noisy_feedback(fs, 0.0, 3) == fs);
  const auto noisy = noisy_feedback(fs, 1.0, 3);
  for (std::size_t i = 0; i < 40; ++i) {
    CHECK(noisy.time[i].popcount() == fs.time[i].popcount());
    for (std::size_t t = 0; t < 32; ++t) CHECK_FALSE((noisy.time[i].bits[t] && fs.time[i].bits[t]));
  }
  const auto half = noisy_feedback(fs, 0.25, 3);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < 40; ++i) changed += half.time[i] == fs.time[i] ? 0 : 1;
  CHECK(changed == 10);
  CHECK(noisy_feedback(fs, 0.25, 3) == half);
}

TEST_CASE("noisy_feedback relocates frequency bins jointly") {
  const auto fs = tone_masks(10, 16, 3);
  const auto noisy = noisy_feedback(fs, 1.0, 5);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& m = noisy.freq[i];
    CHECK(m.re_bins().size() == 2);
    CHECK(m.re_bins() == m.im_bins());
    for (auto b : m.re_bins()) CHECK((b != 3 && b != 13));
  }
}

TEST_CASE("mask file round trip") {
  const auto doc = nlohmann::json::parse(R"([
    {"sample_id": "a", "domain": "time", "intervals": [[0, 3], [5, 7]]},
    {"sample_id": "b", "domain": "freq", "re_bins": [1, 15], "im_bins": [1]},
    {"domain": "time", "intervals": [[10, 12]], "broadcast": true}
  ])");
  const auto entries = parse_mask_file(doc);
  REQUIRE(entries.size() == 3);
  CHECK(mask_file_json(entries).dump() == doc.dump());

  const auto fs = materialize(entries, {"a", "b", "c"}, 16);
  CHECK(fs.time[0].intervals() == std::vector<Interval>{{0, 3}, {5, 7}, {10, 12}});
  CHECK(fs.time[2].intervals() == std::vector<Interval>{{10, 12}});
  CHECK(fs.freq[1].re_bins() == std::vector<std::size_t>{1, 15});
  CHECK(fs.freq[0].empty());

  // Per-sample entries survive a second trip unchanged.
  const auto again = materialize(parse_mask_file(mask_file_json(to_entries(fs))), {"a", "b", "c"}, 16);
  CHECK(again == fs);
}

TEST_CASE("malformed mask files list every offending field") {
  const auto doc = nlohmann::json::parse(R"([
    {"sample_id": "a", "domain": "time", "intervals": [[3, 1]]},
    {"sample_id": 4, "domain": "space"},
    {"sample_id": "c", "domain": "freq", "re_bins": [-1]}
  ])");
  try {
    parse_mask_file(doc);
    FAIL("expected a validation error");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[0].intervals") != std::string::npos);
    CHECK(msg.find("[1].sample_id") != std::string::npos);
    CHECK(msg.find("[1].domain") != std::string::npos);
    CHECK(msg.find("[2].re_bins") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_mask_file(nlohmann::json::object()), DataError);
}

TEST_CASE("materialize rejects unknown ids and out-of-range marks") {
  const auto entries = parse_mask_file(nlohmann::json::parse(R"([{"sample_id": "zz", "domain": "time", "intervals": [[0, 1]]}])"));
  CHECK_THROWS_AS(materialize(entries, {"a"}, 8), NotFoundError);
  const auto wide = parse_mask_file(nlohmann::json::parse(R"([{"sample_id": "a", "domain": "time", "intervals": [[0, 9]]}])"));
  CHECK_THROWS_AS(materialize(wide, {"a"}, 8), DataError);
}
