#include "tsxil/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "tsxil/error.hpp"
#include "tsxil/random.hpp"

namespace tsxil {

std::string to_string(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "train";
}

// ---- header ------------------------------------------------------------------

nlohmann::json header_json(const DatasetHeader& h) {
  nlohmann::json j = {{"name", h.name},
                      {"T", h.length},
                      {"standardization",
                       {{"fitted", h.standardization.fitted},
                        {"mean", h.standardization.mean},
                        {"std", h.standardization.stddev}}}};
  if (h.horizon) j["W"] = *h.horizon;
  if (h.classes) j["K"] = *h.classes;
  if (h.decoy) j["decoy"] = {{"kind", h.decoy->kind}, {"params", h.decoy->params}, {"seed", h.decoy->seed}};
  else j["decoy"] = nullptr;
  if (!h.warnings.empty()) j["warnings"] = h.warnings;
  return j;
}

DatasetHeader header_from_json(const nlohmann::json& j) {
  DatasetHeader h;
  h.name = j.value("name", "");
  h.length = j.value("T", std::size_t{0});
  if (j.contains("W") && !j["W"].is_null()) h.horizon = j["W"].get<std::size_t>();
  if (j.contains("K") && !j["K"].is_null()) h.classes = j["K"].get<std::size_t>();
  if (j.contains("decoy") && j["decoy"].is_object()) {
    const auto& d = j["decoy"];
    h.decoy = DecoyProvenance{d.value("kind", ""), d.value("params", nlohmann::json::object()),
                              d.value("seed", std::uint64_t{0})};
  }
  if (j.contains("standardization")) {
    const auto& s = j["standardization"];
    h.standardization = {s.value("fitted", false), s.value("mean", 0.0), s.value("std", 1.0)};
  }
  if (j.contains("warnings")) h.warnings = j["warnings"].get<std::vector<std::string>>();
  return h;
}

// ---- CSV ---------------------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double parse_cell(std::string_view cell, std::size_t row, std::size_t col) {
  cell = trim(cell);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (cell.empty() || ec != std::errc{} || ptr != cell.data() + cell.size()) {
    throw ParseError("non-numeric cell '" + std::string(cell) + "'", row, col);
  }
  if (!std::isfinite(v)) throw ParseError("non-finite cell '" + std::string(cell) + "'", row, col);
  return v;
}

// Rows of numeric cells; blank lines are skipped. Row/col numbers are 1-based.
std::vector<std::vector<double>> parse_rows(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string_view line(text.data() + pos, nl - pos);
    ++line_no;
    pos = nl + 1;
    if (trim(line).empty()) {
      if (nl == text.size()) break;
      continue;
    }
    std::vector<double> row;
    std::size_t col = 0, start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      const auto cell = line.substr(start, comma == std::string_view::npos ? line.npos : comma - start);
      row.push_back(parse_cell(cell, line_no, ++col));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(row));
    if (nl == text.size()) break;
  }
  return rows;
}

}  // namespace

ClassificationDataset parse_classification_csv(const std::string& text, std::string name) {
  const auto rows = parse_rows(text);
  if (rows.empty()) throw DataError("empty dataset");
  const std::size_t width = rows.front().size();
  if (width < 2) throw DataError("classification rows need a label and at least one value");
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != width) {
      throw DataError("unequal length: row " + std::to_string(r + 1) + " has " + std::to_string(rows[r].size() - 1) +
                      " values, expected " + std::to_string(width - 1));
    }
  }
  std::map<double, std::size_t> class_index;
  for (const auto& r : rows) class_index.emplace(r[0], 0);
  ClassificationDataset ds;
  for (auto& [v, idx] : class_index) {
    idx = ds.class_values.size();
    ds.class_values.push_back(v);
  }
  ds.header.name = std::move(name);
  ds.header.length = width - 1;
  ds.header.classes = std::max<std::size_t>(2, ds.class_values.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    ds.labels.push_back(class_index.at(rows[r][0]));
    ds.series.emplace_back(rows[r].begin() + 1, rows[r].end());
    ds.splits.push_back(Split::Train);
    ds.sample_ids.push_back(std::to_string(r));
  }
  return ds;
}

SeriesData parse_series_csv(const std::string& text, std::string name) {
  const auto rows = parse_rows(text);
  if (rows.empty()) throw DataError("empty dataset");
  SeriesData s;
  s.header.name = std::move(name);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != 1) {
      throw DataError("unequal length: forecasting rows hold one value, row " + std::to_string(r + 1) + " has " +
                      std::to_string(rows[r].size()));
    }
    s.values.push_back(rows[r][0]);
  }
  s.header.length = s.values.size();
  return s;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw NotFoundError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
}

std::filesystem::path header_path(const std::filesystem::path& csv) {
  auto p = csv;
  p += ".header.json";
  return p;
}

namespace {
std::optional<DatasetHeader> sidecar_header(const std::filesystem::path& path) {
  const auto hp = header_path(path);
  if (!std::filesystem::exists(hp)) return std::nullopt;
  return header_from_json(nlohmann::json::parse(read_text(hp)));
}
}  // namespace

ClassificationDataset load_classification_csv(const std::filesystem::path& path) {
  auto ds = parse_classification_csv(read_text(path), path.stem().string());
  if (auto h = sidecar_header(path)) {
    ds.header.decoy = h->decoy;
    if (!h->name.empty()) ds.header.name = h->name;
    if (h->classes) ds.header.classes = std::max(*h->classes, ds.class_values.size());
  }
  return ds;
}

SeriesData load_series_csv(const std::filesystem::path& path) {
  auto s = parse_series_csv(read_text(path), path.stem().string());
  if (auto h = sidecar_header(path)) {
    s.header.decoy = h->decoy;
    s.header.horizon = h->horizon;
    if (!h->name.empty()) s.header.name = h->name;
  }
  return s;
}

namespace {
std::string fmt(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}
}  // namespace

std::string classification_csv(const ClassificationDataset& ds) {
  std::string out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::size_t label = ds.labels[i];
    out += fmt(label < ds.class_values.size() ? ds.class_values[label] : static_cast<double>(label));
    for (double v : ds.series[i]) {
      out += ',';
      out += fmt(v);
    }
    out += '\n';
  }
  return out;
}

std::string series_csv(const std::vector<double>& values) {
  std::string out;
  for (double v : values) {
    out += fmt(v);
    out += '\n';
  }
  return out;
}

// ---- protocol ----------------------------------------------------------------

std::vector<std::size_t> ClassificationDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == s) out.push_back(i);
  return out;
}

ClassificationDataset ClassificationDataset::subset(Split s) const {
  ClassificationDataset out;
  out.header = header;
  out.class_values = class_values;
  for (auto i : indices(s)) {
    out.series.push_back(series[i]);
    out.labels.push_back(labels[i]);
    out.splits.push_back(splits[i]);
    out.sample_ids.push_back(sample_ids[i]);
  }
  return out;
}

SplitSizes split_sizes(std::size_t d) {
  SplitSizes s;
  s.test = (3 * d + 5) / 10;
  const std::size_t rest = d - s.test;
  s.val = (2 * rest + 9) / 10;
  s.train = rest - s.val;
  return s;
}

ClassificationDataset split(const ClassificationDataset& ds, std::uint64_t seed) {
  if (ds.size() < 10) throw DataError("split needs at least 10 samples, got " + std::to_string(ds.size()));
  const auto sizes = split_sizes(ds.size());
  const auto order = permutation(ds.size(), seed);
  ClassificationDataset out = ds;
  for (std::size_t r = 0; r < order.size(); ++r) {
    out.splits[order[r]] = r < sizes.test ? Split::Test : (r < sizes.test + sizes.val ? Split::Val : Split::Train);
  }
  return out;
}

Standardization fit_standardization(const std::vector<double>& values) {
  if (values.empty()) throw DataError("cannot standardize an empty training split");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return {true, mean, std::sqrt(var)};
}

std::vector<double> apply_standardization(const std::vector<double>& values, const Standardization& s) {
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = s.stddev > 0.0 ? (values[i] - s.mean) / s.stddev : 0.0;
  return out;
}

ClassificationDataset standardize(const ClassificationDataset& ds) {
  std::vector<double> train_values;
  for (auto i : ds.indices(Split::Train)) train_values.insert(train_values.end(), ds.series[i].begin(), ds.series[i].end());
  const auto stats = fit_standardization(train_values);
  ClassificationDataset out = ds;
  out.header.standardization = stats;
  if (!(stats.stddev > 0.0)) out.header.warnings.push_back("standardize: zero variance, values mapped to 0");
  for (auto& s : out.series) s = apply_standardization(s, stats);
  return out;
}

// ---- forecasting windows -------------------------------------------------------

std::vector<double> ForecastWindows::input(std::size_t i) const {
  const auto p = static_cast<std::ptrdiff_t>(starts.at(i));
  return {series.begin() + p, series.begin() + p + static_cast<std::ptrdiff_t>(lookback)};
}

std::vector<double> ForecastWindows::target(std::size_t i) const {
  const auto p = static_cast<std::ptrdiff_t>(starts.at(i) + lookback);
  return {series.begin() + p, series.begin() + p + static_cast<std::ptrdiff_t>(horizon)};
}

std::vector<std::vector<double>> ForecastWindows::inputs() const {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < size(); ++i) out.push_back(input(i));
  return out;
}

std::vector<std::vector<double>> ForecastWindows::targets() const {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < size(); ++i) out.push_back(target(i));
  return out;
}

ForecastWindows make_windows(std::vector<double> series, std::size_t lookback, std::size_t horizon,
                             std::size_t stride) {
  if (lookback == 0 || horizon == 0) throw ConfigError("lookback and horizon must be positive");
  if (stride == 0) stride = std::max<std::size_t>(1, lookback / 2);
  if (series.size() < lookback + horizon) {
    throw DataError("series of length " + std::to_string(series.size()) + " is shorter than lookback + horizon = " +
                    std::to_string(lookback + horizon));
  }
  ForecastWindows w;
  w.lookback = lookback;
  w.horizon = horizon;
  w.stride = stride;
  for (std::size_t p = 0; p + lookback + horizon <= series.size(); p += stride) w.starts.push_back(p);
  w.series = std::move(series);
  return w;
}

SeriesSplits temporal_split(const std::vector<double>& series) {
  const auto sizes = split_sizes(series.size());
  const auto b = series.begin();
  const auto train_end = static_cast<std::ptrdiff_t>(sizes.train);
  const auto val_end = static_cast<std::ptrdiff_t>(sizes.train + sizes.val);
  return {{b, b + train_end}, {b + train_end, b + val_end}, {b + val_end, series.end()}};
}

// ---- synthetic tasks -----------------------------------------------------------

ClassificationDataset make_toy_classification(const ToyClassificationConfig& cfg, std::uint64_t seed) {
  if (cfg.length < cfg.min_position + cfg.bump_width + 1) throw ConfigError("toy task: series too short for bump");
  Rng rng(seed);
  ClassificationDataset ds;
  ds.header.name = "toy";
  ds.header.length = cfg.length;
  ds.header.classes = 2;
  ds.class_values = {0.0, 1.0};
  for (std::size_t i = 0; i < cfg.samples; ++i) {
    const std::size_t label = i % 2;
    std::vector<double> x(cfg.length);
    for (auto& v : x) v = cfg.noise * rng.normal();
    const std::size_t span = cfg.length - cfg.bump_width - cfg.min_position;
    const std::size_t pos = cfg.min_position + rng.below(span + 1);
    const double sign = label == 1 ? 1.0 : -1.0;
    for (std::size_t k = 0; k < cfg.bump_width; ++k) {
      // Half-period sine bump.
      const double shape = std::sin(std::numbers::pi * (static_cast<double>(k) + 0.5) / static_cast<double>(cfg.bump_width));
      x[pos + k] += sign * cfg.signal * shape;
    }
    ds.series.push_back(std::move(x));
    ds.labels.push_back(label);
    ds.splits.push_back(Split::Train);
    ds.sample_ids.push_back(std::to_string(i));
  }
  return ds;
}

SeriesData make_seasonal_series(const SeasonalSeriesConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  SeriesData s;
  s.header.name = "seasonal";
  s.values.resize(cfg.length);
  const double phase = 2.0 * std::numbers::pi * rng.uniform();
  for (std::size_t t = 0; t < cfg.length; ++t) {
    const double tt = static_cast<double>(t);
    double v = std::sin(2.0 * std::numbers::pi * tt / cfg.period + phase);
    if (cfg.second_period > 0.0) v += cfg.second_amplitude * std::sin(2.0 * std::numbers::pi * tt / cfg.second_period);
    s.values[t] = v + cfg.noise * rng.normal();
  }
  s.header.length = cfg.length;
  return s;
}

}  // namespace tsxil
