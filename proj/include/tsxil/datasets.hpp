#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace tsxil {

enum class Split : std::uint8_t { Train, Val, Test };

std::string to_string(Split s);

struct DecoyProvenance {
  std::string kind;
  nlohmann::json params;
  std::uint64_t seed = 0;
};

struct Standardization {
  bool fitted = false;
  double mean = 0.0;
  double stddev = 1.0;
};

struct DatasetHeader {
  std::string name;
  std::size_t length = 0;                // T
  std::optional<std::size_t> horizon;    // W, forecasting only
  std::optional<std::size_t> classes;    // K, classification only
  std::optional<DecoyProvenance> decoy;  // set once a shortcut has been injected
  Standardization standardization;
  std::vector<std::string> warnings;
};

nlohmann::json header_json(const DatasetHeader& h);
DatasetHeader header_from_json(const nlohmann::json& j);

// Labeled, equal-length univariate series. Labels are stored as class indices
// 0..K-1; `class_values` keeps the raw label spelled in the source file.
struct ClassificationDataset {
  DatasetHeader header;
  std::vector<std::vector<double>> series;
  std::vector<std::size_t> labels;
  std::vector<double> class_values;
  std::vector<Split> splits;
  std::vector<std::string> sample_ids;

  std::size_t size() const { return series.size(); }
  std::size_t length() const { return header.length; }
  std::size_t num_classes() const { return header.classes.value_or(class_values.size()); }
  std::vector<std::size_t> indices(Split s) const;
  // Samples of one split as a standalone dataset (split tags preserved).
  ClassificationDataset subset(Split s) const;
};

struct SeriesData {
  DatasetHeader header;
  std::vector<double> values;
};

// ---- CSV ---------------------------------------------------------------------

enum class CsvSchema { Classification, Forecasting };

// Classification: one sample per row, first column the label, the remaining T
// columns the values. Forecasting: one value per row.
ClassificationDataset parse_classification_csv(const std::string& text, std::string name = "dataset");
SeriesData parse_series_csv(const std::string& text, std::string name = "series");
ClassificationDataset load_classification_csv(const std::filesystem::path& path);
SeriesData load_series_csv(const std::filesystem::path& path);

std::string classification_csv(const ClassificationDataset& ds);
std::string series_csv(const std::vector<double>& values);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// "<csv>.header.json" next to a data file.
std::filesystem::path header_path(const std::filesystem::path& csv);

// ---- protocol ----------------------------------------------------------------

struct SplitSizes {
  std::size_t train = 0, val = 0, test = 0;
};

// 70/30 train/test, then 20% of the training part as validation.
// test = round(0.3 D) (half up), val = ceil(0.2 (D - test)), train = rest.
SplitSizes split_sizes(std::size_t d);

// Shuffled (seeded) assignment of split tags. Requires D >= 10.
ClassificationDataset split(const ClassificationDataset& ds, std::uint64_t seed);

// (x - mean) / std with statistics from the training split only, applied to
// every split. A zero std maps everything to 0 and records a warning.
ClassificationDataset standardize(const ClassificationDataset& ds);

Standardization fit_standardization(const std::vector<double>& values);
std::vector<double> apply_standardization(const std::vector<double>& values, const Standardization& s);

// ---- forecasting windows -------------------------------------------------------

struct ForecastWindows {
  std::vector<double> series;
  std::size_t lookback = 0;
  std::size_t horizon = 0;
  std::size_t stride = 1;
  std::vector<std::size_t> starts;

  std::size_t size() const { return starts.size(); }
  std::vector<double> input(std::size_t i) const;
  std::vector<double> target(std::size_t i) const;
  std::vector<std::vector<double>> inputs() const;
  std::vector<std::vector<double>> targets() const;
};

// starts = 0, stride, 2 stride, ... while start + T + W <= len.
// stride 0 means the default floor(T / 2).
ForecastWindows make_windows(std::vector<double> series, std::size_t lookback, std::size_t horizon,
                             std::size_t stride = 0);

// Temporal split of a single series: train prefix, validation, test suffix,
// with the same 70/30 and 20% sizes as split_sizes(len).
struct SeriesSplits {
  std::vector<double> train, val, test;
};
SeriesSplits temporal_split(const std::vector<double>& series);

// ---- synthetic tasks -----------------------------------------------------------

struct ToyClassificationConfig {
  std::size_t samples = 400;
  std::size_t length = 64;
  double noise = 1.0;
  // Amplitude of the class-bearing bump.
  double signal = 1.0;
  std::size_t bump_width = 6;
  // Bumps are placed inside [min_position, length - bump_width).
  std::size_t min_position = 16;
};

// Two classes; class 1 carries a localized positive bump at a random
// position, class 0 a negative one, on top of white noise.
ClassificationDataset make_toy_classification(const ToyClassificationConfig& cfg, std::uint64_t seed);

struct SeasonalSeriesConfig {
  std::size_t length = 2000;
  double period = 24.0;
  double second_period = 0.0;
  double second_amplitude = 0.0;
  double noise = 0.1;
};

SeriesData make_seasonal_series(const SeasonalSeriesConfig& cfg, std::uint64_t seed);

}  // namespace tsxil
