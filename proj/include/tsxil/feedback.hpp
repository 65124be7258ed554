#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace tsxil {

using Interval = std::pair<std::size_t, std::size_t>;  // [start, end)

// a(x) in {0,1}^T; all zeros means "no feedback for this sample".
struct TimeMask {
  std::string sample_id;
  std::vector<std::uint8_t> bits;

  std::size_t size() const { return bits.size(); }
  std::size_t popcount() const;
  bool empty() const { return popcount() == 0; }
  std::vector<Interval> intervals() const;
  bool operator==(const TimeMask&) const = default;
};

// Real and imaginary parts of the spectrum are marked independently.
struct FrequencyMask {
  std::string sample_id;
  std::vector<std::uint8_t> re_bits;
  std::vector<std::uint8_t> im_bits;

  std::size_t size() const { return re_bits.size(); }
  bool empty() const;
  std::vector<std::size_t> re_bins() const;
  std::vector<std::size_t> im_bins() const;
  bool operator==(const FrequencyMask&) const = default;
};

// Per-sample annotations for a dataset. Either domain may be absent (empty
// vector); when present it has one mask per sample, in sample order.
struct FeedbackSet {
  std::vector<TimeMask> time;
  std::vector<FrequencyMask> freq;
  double coverage = 1.0;
  double noise = 0.0;
  std::uint64_t seed = 0;

  std::size_t size() const { return std::max(time.size(), freq.size()); }
  bool has_time() const { return !time.empty(); }
  bool has_freq() const { return !freq.empty(); }
  // Number of samples with a non-empty mask in either domain.
  std::size_t annotated_count() const;
  bool annotated(std::size_t i) const;
  bool operator==(const FeedbackSet& o) const { return time == o.time && freq == o.freq; }
};

TimeMask mask_from_intervals(const std::vector<Interval>& intervals, std::size_t length, std::string sample_id = {});
FrequencyMask mask_from_bins(const std::vector<std::size_t>& re_bins, const std::vector<std::size_t>& im_bins,
                             std::size_t length, std::string sample_id = {});

// Keep exactly round(p * D) masks, chosen uniformly under `seed`; clear the rest.
FeedbackSet subset_feedback(const FeedbackSet& fs, double p, std::uint64_t seed);

// For round(q * D) samples chosen under `seed`, move every marked position to
// a uniformly chosen unmarked one (same count, disjoint from the original).
// Frequency masks are relocated jointly: re and im draw from one shuffled
// list of bins that are unmarked in both parts.
FeedbackSet noisy_feedback(const FeedbackSet& fs, double q, std::uint64_t seed);

// ---- mask file -------------------------------------------------------------
//
// JSON array of
//   {"sample_id": "...", "domain": "time", "intervals": [[s, e], ...]}
//   {"sample_id": "...", "domain": "freq", "re_bins": [...], "im_bins": [...]}
// either of which may carry "broadcast": true to apply to every sample.

struct MaskFileEntry {
  std::string sample_id;
  std::string domain;
  std::vector<Interval> intervals;
  std::vector<std::size_t> re_bins;
  std::vector<std::size_t> im_bins;
  bool broadcast = false;
  // Key presence, kept so accepted files re-serialize unchanged.
  bool has_re_bins = true;
  bool has_im_bins = true;
};

// Structural validation. Throws DataError whose message lists every
// offending field as "[index].field: reason".
std::vector<MaskFileEntry> parse_mask_file(const nlohmann::json& doc);
nlohmann::json mask_file_json(const std::vector<MaskFileEntry>& entries);

// Expand entries (including broadcast ones) to a per-sample FeedbackSet for
// the given sample ids and series length. Range errors are reported here.
FeedbackSet materialize(const std::vector<MaskFileEntry>& entries, const std::vector<std::string>& sample_ids,
                        std::size_t length);

// One entry per annotated sample per domain.
std::vector<MaskFileEntry> to_entries(const FeedbackSet& fs);

}  // namespace tsxil
