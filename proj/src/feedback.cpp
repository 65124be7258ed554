#include "tsxil/feedback.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tsxil/error.hpp"
#include "tsxil/random.hpp"

namespace tsxil {

namespace {

std::size_t count_of(double fraction, std::size_t d, const char* what) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw ConfigError(std::string(what) + " fraction must lie in [0, 1]");
  }
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(d)));
}

std::vector<std::size_t> set_bits(const std::vector<std::uint8_t>& bits) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) out.push_back(i);
  return out;
}

}  // namespace

std::size_t TimeMask::popcount() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }

std::vector<Interval> TimeMask::intervals() const {
  std::vector<Interval> out;
  std::size_t i = 0;
  while (i < bits.size()) {
    if (!bits[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < bits.size() && bits[j]) ++j;
    out.emplace_back(i, j);
    i = j;
  }
  return out;
}

bool FrequencyMask::empty() const {
  return std::none_of(re_bits.begin(), re_bits.end(), [](auto b) { return b != 0; }) &&
         std::none_of(im_bits.begin(), im_bits.end(), [](auto b) { return b != 0; });
}

std::vector<std::size_t> FrequencyMask::re_bins() const { return set_bits(re_bits); }
std::vector<std::size_t> FrequencyMask::im_bins() const { return set_bits(im_bits); }

bool FeedbackSet::annotated(std::size_t i) const {
  return (i < time.size() && !time[i].empty()) || (i < freq.size() && !freq[i].empty());
}

std::size_t FeedbackSet::annotated_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < size(); ++i) n += annotated(i) ? 1 : 0;
  return n;
}

TimeMask mask_from_intervals(const std::vector<Interval>& intervals, std::size_t length, std::string sample_id) {
  TimeMask m{std::move(sample_id), std::vector<std::uint8_t>(length, 0)};
  for (const auto& [s, e] : intervals) {
    if (!(s < e && e <= length)) {
      throw DataError("interval [" + std::to_string(s) + ", " + std::to_string(e) + ") out of range for length " +
                      std::to_string(length));
    }
    std::fill(m.bits.begin() + static_cast<std::ptrdiff_t>(s), m.bits.begin() + static_cast<std::ptrdiff_t>(e), 1);
  }
  return m;
}

FrequencyMask mask_from_bins(const std::vector<std::size_t>& re_bins, const std::vector<std::size_t>& im_bins,
                             std::size_t length, std::string sample_id) {
  FrequencyMask m{std::move(sample_id), std::vector<std::uint8_t>(length, 0), std::vector<std::uint8_t>(length, 0)};
  for (auto b : re_bins) {
    if (b >= length) throw DataError("re bin " + std::to_string(b) + " out of range for length " + std::to_string(length));
    m.re_bits[b] = 1;
  }
  for (auto b : im_bins) {
    if (b >= length) throw DataError("im bin " + std::to_string(b) + " out of range for length " + std::to_string(length));
    m.im_bits[b] = 1;
  }
  return m;
}

FeedbackSet subset_feedback(const FeedbackSet& fs, double p, std::uint64_t seed) {
  const std::size_t d = fs.size();
  const std::size_t keep = count_of(p, d, "coverage");
  const auto order = permutation(d, seed);
  std::vector<std::uint8_t> kept(d, 0);
  for (std::size_t i = 0; i < keep; ++i) kept[order[i]] = 1;

  FeedbackSet out = fs;
  out.coverage = p;
  out.seed = seed;
  for (std::size_t i = 0; i < d; ++i) {
    if (kept[i]) continue;
    if (i < out.time.size()) std::fill(out.time[i].bits.begin(), out.time[i].bits.end(), 0);
    if (i < out.freq.size()) {
      std::fill(out.freq[i].re_bits.begin(), out.freq[i].re_bits.end(), 0);
      std::fill(out.freq[i].im_bits.begin(), out.freq[i].im_bits.end(), 0);
    }
  }
  return out;
}

FeedbackSet noisy_feedback(const FeedbackSet& fs, double q, std::uint64_t seed) {
  const std::size_t d = fs.size();
  const std::size_t corrupt = count_of(q, d, "noise");
  FeedbackSet out = fs;
  out.noise = q;
  out.seed = seed;
  if (corrupt == 0) return out;

  Rng rng(seed);
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);

  for (std::size_t c = 0; c < corrupt; ++c) {
    const std::size_t i = order[c];
    if (i < out.time.size()) {
      auto& bits = out.time[i].bits;
      const std::size_t marked = out.time[i].popcount();
      std::vector<std::size_t> free;
      for (std::size_t t = 0; t < bits.size(); ++t)
        if (!bits[t]) free.push_back(t);
      rng.shuffle(free);
      std::fill(bits.begin(), bits.end(), 0);
      // If the mask covers more than half the series the relocated mask is
      // capped at the number of free positions.
      for (std::size_t j = 0; j < std::min(marked, free.size()); ++j) bits[free[j]] = 1;
    }
    if (i < out.freq.size()) {
      auto& fm = out.freq[i];
      const auto re_n = fm.re_bins().size();
      const auto im_n = fm.im_bins().size();
      std::vector<std::size_t> free;
      for (std::size_t k = 0; k < fm.size(); ++k)
        if (!fm.re_bits[k] && !fm.im_bits[k]) free.push_back(k);
      rng.shuffle(free);
      std::fill(fm.re_bits.begin(), fm.re_bits.end(), 0);
      std::fill(fm.im_bits.begin(), fm.im_bits.end(), 0);
      for (std::size_t j = 0; j < std::min(re_n, free.size()); ++j) fm.re_bits[free[j]] = 1;
      for (std::size_t j = 0; j < std::min(im_n, free.size()); ++j) fm.im_bits[free[j]] = 1;
    }
  }
  return out;
}

// ---- mask file -------------------------------------------------------------

std::vector<MaskFileEntry> parse_mask_file(const nlohmann::json& doc) {
  std::vector<std::string> problems;
  std::vector<MaskFileEntry> entries;
  if (!doc.is_array()) throw ValidationError("mask file: top level must be an array", {"$: must be an array"});

  auto index_list = [&](const nlohmann::json& e, const std::string& where, const char* key,
                        std::vector<std::size_t>& out) {
    if (!e.contains(key)) return;
    const auto& v = e[key];
    if (!v.is_array()) {
      problems.push_back(where + "." + key + ": must be an array of non-negative integers");
      return;
    }
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (!v[j].is_number_unsigned()) {
        problems.push_back(where + "." + key + "[" + std::to_string(j) + "]: must be a non-negative integer");
        continue;
      }
      out.push_back(v[j].get<std::size_t>());
    }
  };

  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& e = doc[i];
    const std::string where = "[" + std::to_string(i) + "]";
    if (!e.is_object()) {
      problems.push_back(where + ": must be an object");
      continue;
    }
    MaskFileEntry m;
    if (e.contains("broadcast")) {
      if (!e["broadcast"].is_boolean()) problems.push_back(where + ".broadcast: must be a boolean");
      else m.broadcast = e["broadcast"].get<bool>();
    }
    if (e.contains("sample_id")) {
      if (e["sample_id"].is_string()) m.sample_id = e["sample_id"].get<std::string>();
      else problems.push_back(where + ".sample_id: must be a string");
    } else if (!m.broadcast) {
      problems.push_back(where + ".sample_id: required unless broadcast is true");
    }
    if (!e.contains("domain") || !e["domain"].is_string()) {
      problems.push_back(where + ".domain: must be \"time\" or \"freq\"");
      continue;
    }
    m.domain = e["domain"].get<std::string>();
    if (m.domain == "time") {
      if (!e.contains("intervals") || !e["intervals"].is_array()) {
        problems.push_back(where + ".intervals: required array of [start, end) pairs");
      } else {
        const auto& iv = e["intervals"];
        for (std::size_t j = 0; j < iv.size(); ++j) {
          const std::string w = where + ".intervals[" + std::to_string(j) + "]";
          if (!iv[j].is_array() || iv[j].size() != 2 || !iv[j][0].is_number_unsigned() ||
              !iv[j][1].is_number_unsigned()) {
            problems.push_back(w + ": must be a pair of non-negative integers");
            continue;
          }
          const auto s = iv[j][0].get<std::size_t>(), en = iv[j][1].get<std::size_t>();
          if (s >= en) problems.push_back(w + ": start must be < end");
          m.intervals.emplace_back(s, en);
        }
      }
    } else if (m.domain == "freq") {
      if (!e.contains("re_bins") && !e.contains("im_bins")) {
        problems.push_back(where + ".re_bins: freq entries need re_bins and/or im_bins");
      }
      m.has_re_bins = e.contains("re_bins");
      m.has_im_bins = e.contains("im_bins");
      index_list(e, where, "re_bins", m.re_bins);
      index_list(e, where, "im_bins", m.im_bins);
    } else {
      problems.push_back(where + ".domain: must be \"time\" or \"freq\"");
    }
    entries.push_back(std::move(m));
  }
  if (!problems.empty()) {
    std::string msg = "invalid mask file:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ValidationError(msg, problems);
  }
  return entries;
}

nlohmann::json mask_file_json(const std::vector<MaskFileEntry>& entries) {
  auto doc = nlohmann::json::array();
  for (const auto& m : entries) {
    nlohmann::json e = {{"domain", m.domain}};
    if (!m.sample_id.empty() || !m.broadcast) e["sample_id"] = m.sample_id;
    if (m.broadcast) e["broadcast"] = true;
    if (m.domain == "time") {
      auto iv = nlohmann::json::array();
      for (const auto& [s, en] : m.intervals) iv.push_back({s, en});
      e["intervals"] = iv;
    } else {
      if (m.has_re_bins) e["re_bins"] = m.re_bins;
      if (m.has_im_bins) e["im_bins"] = m.im_bins;
    }
    doc.push_back(std::move(e));
  }
  return doc;
}

FeedbackSet materialize(const std::vector<MaskFileEntry>& entries, const std::vector<std::string>& sample_ids,
                        std::size_t length) {
  FeedbackSet fs;
  const bool any_time = std::any_of(entries.begin(), entries.end(), [](auto& e) { return e.domain == "time"; });
  const bool any_freq = std::any_of(entries.begin(), entries.end(), [](auto& e) { return e.domain == "freq"; });
  if (any_time) {
    for (const auto& id : sample_ids) fs.time.push_back({id, std::vector<std::uint8_t>(length, 0)});
  }
  if (any_freq) {
    for (const auto& id : sample_ids) {
      fs.freq.push_back({id, std::vector<std::uint8_t>(length, 0), std::vector<std::uint8_t>(length, 0)});
    }
  }
  auto apply = [&](const MaskFileEntry& e, std::size_t i) {
    if (e.domain == "time") {
      const auto m = mask_from_intervals(e.intervals, length);
      for (std::size_t t = 0; t < length; ++t) fs.time[i].bits[t] |= m.bits[t];
    } else {
      const auto m = mask_from_bins(e.re_bins, e.im_bins, length);
      for (std::size_t k = 0; k < length; ++k) {
        fs.freq[i].re_bits[k] |= m.re_bits[k];
        fs.freq[i].im_bits[k] |= m.im_bits[k];
      }
    }
  };
  for (const auto& e : entries) {
    if (e.broadcast) {
      for (std::size_t i = 0; i < sample_ids.size(); ++i) apply(e, i);
      continue;
    }
    auto it = std::find(sample_ids.begin(), sample_ids.end(), e.sample_id);
    if (it == sample_ids.end()) throw NotFoundError("mask refers to unknown sample '" + e.sample_id + "'");
    apply(e, static_cast<std::size_t>(it - sample_ids.begin()));
  }
  return fs;
}

std::vector<MaskFileEntry> to_entries(const FeedbackSet& fs) {
  std::vector<MaskFileEntry> out;
  for (const auto& m : fs.time) {
    if (m.empty()) continue;
    MaskFileEntry e;
    e.sample_id = m.sample_id;
    e.domain = "time";
    e.intervals = m.intervals();
    out.push_back(std::move(e));
  }
  for (const auto& m : fs.freq) {
    if (m.empty()) continue;
    MaskFileEntry e;
    e.sample_id = m.sample_id;
    e.domain = "freq";
    e.re_bins = m.re_bins();
    e.im_bins = m.im_bins();
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace tsxil
