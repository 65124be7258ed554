#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsxil/datasets.hpp"
#include "tsxil/feedback.hpp"

namespace tsxil {

enum class DecoyKind { ClsSpatial, ClsFrequency, FcBackcopy, FcDirac };

std::string to_string(DecoyKind k);
DecoyKind decoy_kind_from_string(const std::string& s);

struct DecoyConfig {
  DecoyKind kind = DecoyKind::ClsSpatial;
  double amplitude = 1.0;
  // cls_spatial segment length and position.
  std::size_t segment = 16;
  std::size_t offset = 0;
  // cls_frequency: class j gets DFT bin base_bin + j.
  std::size_t base_bin = 3;
  // fc_dirac impulse spacing.
  std::size_t spacing = 4;
  std::size_t num_classes = 2;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json params_json() const;
};

nlohmann::json decoy_config_json(const DecoyConfig& cfg);
DecoyConfig decoy_config_from_json(const nlohmann::json& j);

// s_n = A sin(2 pi (2 + j) n / m), n = 0..m-1.
std::vector<double> class_sine_segment(std::size_t j, std::size_t m, double amplitude);

// A sin(2 pi f t / T), t = 0..T-1.
std::vector<double> class_tone(std::size_t f, std::size_t length, double amplitude);

struct ClassificationDecoy {
  ClassificationDataset data;
  FeedbackSet feedback;  // one mask per sample; non-training samples get empty masks
};

// Only samples tagged Split::Train are modified; validation and test samples
// stay bit-identical. Inputs that already carry a decoy tag are rejected.
ClassificationDecoy inject_cls_spatial(const ClassificationDataset& ds, const DecoyConfig& cfg);
ClassificationDecoy inject_cls_frequency(const ClassificationDataset& ds, const DecoyConfig& cfg);
// Both shortcuts at once on clean data; the feedback set holds both domains.
ClassificationDecoy inject_cls_dual(const ClassificationDataset& ds, const DecoyConfig& spatial,
                                    const DecoyConfig& frequency);

// Windowed forecasting data. Inputs come from the (possibly modified) series,
// targets always from the unmodified one.
struct WindowSet {
  std::size_t lookback = 0;
  std::size_t horizon = 0;
  std::size_t stride = 0;
  std::vector<std::size_t> starts;
  std::vector<std::vector<double>> inputs;
  std::vector<std::vector<double>> targets;

  std::size_t size() const { return starts.size(); }
};

WindowSet window_set(const ForecastWindows& w);

struct ForecastDecoy {
  SeriesData series;  // modified series with provenance in the header
  WindowSet windows;
  FeedbackSet feedback;  // one mask per window, length T
};

// Windows start at 0, stride, 2 stride, ...; at every second start p the
// series positions [p, p+W) are overwritten by the original [p+T, p+T+W).
// Windows starting at an overwrite position get feedback on lookback [0, W),
// all others none.
ForecastDecoy inject_fc_backcopy(const SeriesData& series, std::size_t lookback, std::size_t horizon,
                                 std::size_t stride);

// series[n k] += A for n >= 1. Each window's frequency mask marks the bins
// carrying the window's impulse train: multiples of T/k when k divides T,
// otherwise the bins holding at least half the train's peak magnitude.
ForecastDecoy inject_fc_dirac(const SeriesData& series, std::size_t lookback, std::size_t horizon,
                              std::size_t stride, const DecoyConfig& cfg);

// Mask JSON side file for a decoy's feedback.
nlohmann::json feedback_file_json(const FeedbackSet& fs);

}  // namespace tsxil
