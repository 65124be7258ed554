#include "tsxil/decoys.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tsxil/error.hpp"
#include "tsxil/fourier.hpp"

namespace tsxil {

std::string to_string(DecoyKind k) {
  switch (k) {
    case DecoyKind::ClsSpatial:
      return "cls_spatial";
    case DecoyKind::ClsFrequency:
      return "cls_frequency";
    case DecoyKind::FcBackcopy:
      return "fc_backcopy";
    case DecoyKind::FcDirac:
      return "fc_dirac";
  }
  return "cls_spatial";
}

DecoyKind decoy_kind_from_string(const std::string& s) {
  if (s == "cls_spatial") return DecoyKind::ClsSpatial;
  if (s == "cls_frequency") return DecoyKind::ClsFrequency;
  if (s == "fc_backcopy") return DecoyKind::FcBackcopy;
  if (s == "fc_dirac") return DecoyKind::FcDirac;
  throw ConfigError("unknown decoy kind '" + s + "'");
}

void DecoyConfig::validate() const {
  if (!(amplitude >= 0.0) || !std::isfinite(amplitude)) throw ConfigError("decoy amplitude must be finite and >= 0");
  if (kind == DecoyKind::ClsSpatial && segment == 0) throw ConfigError("decoy segment length must be >= 1");
  if (kind == DecoyKind::FcDirac && spacing == 0) throw ConfigError("impulse spacing k must be >= 1");
  if ((kind == DecoyKind::ClsSpatial || kind == DecoyKind::ClsFrequency) && num_classes == 0) {
    throw ConfigError("decoy class count must be >= 1");
  }
}

nlohmann::json DecoyConfig::params_json() const {
  nlohmann::json j = {{"A", amplitude}};
  switch (kind) {
    case DecoyKind::ClsSpatial:
      j["m"] = segment;
      j["offset"] = offset;
      j["K"] = num_classes;
      break;
    case DecoyKind::ClsFrequency:
      j["base_bin"] = base_bin;
      j["K"] = num_classes;
      break;
    case DecoyKind::FcBackcopy:
      break;
    case DecoyKind::FcDirac:
      j["k"] = spacing;
      break;
  }
  return j;
}

nlohmann::json decoy_config_json(const DecoyConfig& cfg) {
  return {{"kind", to_string(cfg.kind)}, {"A", cfg.amplitude},     {"m", cfg.segment},
          {"offset", cfg.offset},        {"base_bin", cfg.base_bin}, {"k", cfg.spacing},
          {"K", cfg.num_classes},        {"seed", cfg.seed}};
}

DecoyConfig decoy_config_from_json(const nlohmann::json& j) {
  DecoyConfig c;
  c.kind = decoy_kind_from_string(j.value("kind", std::string("cls_spatial")));
  c.amplitude = j.value("A", c.amplitude);
  c.segment = j.value("m", c.segment);
  c.offset = j.value("offset", c.offset);
  c.base_bin = j.value("base_bin", c.base_bin);
  c.spacing = j.value("k", c.spacing);
  c.num_classes = j.value("K", c.num_classes);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::vector<double> class_sine_segment(std::size_t j, std::size_t m, double amplitude) {
  std::vector<double> s(m);
  for (std::size_t n = 0; n < m; ++n) {
    // Reduce (2+j)n mod m first so whole-period points come out exactly 0.
    const double phase = static_cast<double>(((2 + j) * n) % m) / static_cast<double>(m);
    s[n] = amplitude * std::sin(2.0 * std::numbers::pi * phase);
  }
  return s;
}

std::vector<double> class_tone(std::size_t f, std::size_t length, double amplitude) {
  std::vector<double> s(length);
  for (std::size_t t = 0; t < length; ++t) {
    const double phase = static_cast<double>((f * t) % length) / static_cast<double>(length);
    s[t] = amplitude * std::sin(2.0 * std::numbers::pi * phase);
  }
  return s;
}

namespace {

void reject_decoyed(const DatasetHeader& h) {
  if (h.decoy) throw DataError("dataset '" + h.name + "' already carries a " + h.decoy->kind + " decoy");
}

void check_labels(const ClassificationDataset& ds, const DecoyConfig& cfg) {
  for (auto l : ds.labels) {
    if (l >= cfg.num_classes) {
      throw ConfigError("label index " + std::to_string(l) + " exceeds decoy class count " +
                        std::to_string(cfg.num_classes));
    }
  }
}

void apply_spatial(ClassificationDataset& ds, FeedbackSet& fs, const DecoyConfig& cfg) {
  const std::size_t t = ds.length();
  if (cfg.segment > t || cfg.offset + cfg.segment > t) {
    throw ConfigError("decoy segment [" + std::to_string(cfg.offset) + ", " + std::to_string(cfg.offset + cfg.segment) +
                      ") exceeds series length " + std::to_string(t));
  }
  check_labels(ds, cfg);
  std::vector<std::vector<double>> segments;
  for (std::size_t j = 0; j < cfg.num_classes; ++j) segments.push_back(class_sine_segment(j, cfg.segment, cfg.amplitude));
  fs.time.clear();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    TimeMask m{ds.sample_ids[i], std::vector<std::uint8_t>(t, 0)};
    if (ds.splits[i] == Split::Train) {
      std::copy(segments[ds.labels[i]].begin(), segments[ds.labels[i]].end(),
                ds.series[i].begin() + static_cast<std::ptrdiff_t>(cfg.offset));
      std::fill_n(m.bits.begin() + static_cast<std::ptrdiff_t>(cfg.offset), cfg.segment, 1);
    }
    fs.time.push_back(std::move(m));
  }
}

void apply_frequency(ClassificationDataset& ds, FeedbackSet& fs, const DecoyConfig& cfg) {
  const std::size_t t = ds.length();
  check_labels(ds, cfg);
  const std::size_t top = cfg.base_bin + cfg.num_classes - 1;
  if (2 * top >= t) {
    throw ConfigError("decoy bin " + std::to_string(top) + " >= T/2 = " + std::to_string(t / 2.0) + " would alias");
  }
  if (cfg.base_bin == 0) throw ConfigError("decoy base bin must be >= 1");
  std::vector<std::vector<double>> tones;
  for (std::size_t j = 0; j < cfg.num_classes; ++j) tones.push_back(class_tone(cfg.base_bin + j, t, cfg.amplitude));
  fs.freq.clear();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    FrequencyMask m{ds.sample_ids[i], std::vector<std::uint8_t>(t, 0), std::vector<std::uint8_t>(t, 0)};
    if (ds.splits[i] == Split::Train) {
      const std::size_t f = cfg.base_bin + ds.labels[i];
      const auto& tone = tones[ds.labels[i]];
      for (std::size_t k = 0; k < t; ++k) ds.series[i][k] += tone[k];
      for (auto b : {f, t - f}) m.re_bits[b] = m.im_bits[b] = 1;
    }
    fs.freq.push_back(std::move(m));
  }
}

DecoyProvenance provenance(const DecoyConfig& cfg) {
  return {to_string(cfg.kind), cfg.params_json(), cfg.seed};
}

}  // namespace

ClassificationDecoy inject_cls_spatial(const ClassificationDataset& ds, const DecoyConfig& cfg) {
  cfg.validate();
  reject_decoyed(ds.header);
  ClassificationDecoy out{ds, {}};
  apply_spatial(out.data, out.feedback, cfg);
  out.data.header.decoy = provenance(cfg);
  out.feedback.seed = cfg.seed;
  return out;
}

ClassificationDecoy inject_cls_frequency(const ClassificationDataset& ds, const DecoyConfig& cfg) {
  cfg.validate();
  reject_decoyed(ds.header);
  ClassificationDecoy out{ds, {}};
  apply_frequency(out.data, out.feedback, cfg);
  out.data.header.decoy = provenance(cfg);
  out.feedback.seed = cfg.seed;
  return out;
}

ClassificationDecoy inject_cls_dual(const ClassificationDataset& ds, const DecoyConfig& spatial,
                                    const DecoyConfig& frequency) {
  spatial.validate();
  frequency.validate();
  reject_decoyed(ds.header);
  ClassificationDecoy out{ds, {}};
  apply_spatial(out.data, out.feedback, spatial);
  apply_frequency(out.data, out.feedback, frequency);
  out.data.header.decoy = DecoyProvenance{
      "cls_spatial+cls_frequency",
      {{"cls_spatial", spatial.params_json()}, {"cls_frequency", frequency.params_json()}},
      spatial.seed};
  out.feedback.seed = spatial.seed;
  return out;
}

WindowSet window_set(const ForecastWindows& w) {
  return {w.lookback, w.horizon, w.stride, w.starts, w.inputs(), w.targets()};
}

namespace {

std::string window_id(std::size_t start) { return "w" + std::to_string(start); }

WindowSet windows_over(const std::vector<double>& inputs_from, const std::vector<double>& targets_from,
                       const ForecastWindows& layout) {
  WindowSet ws{layout.lookback, layout.horizon, layout.stride, layout.starts, {}, {}};
  for (auto p : layout.starts) {
    const auto b = static_cast<std::ptrdiff_t>(p);
    const auto t = static_cast<std::ptrdiff_t>(layout.lookback);
    const auto w = static_cast<std::ptrdiff_t>(layout.horizon);
    ws.inputs.emplace_back(inputs_from.begin() + b, inputs_from.begin() + b + t);
    ws.targets.emplace_back(targets_from.begin() + b + t, targets_from.begin() + b + t + w);
  }
  return ws;
}

}  // namespace

ForecastDecoy inject_fc_backcopy(const SeriesData& series, std::size_t lookback, std::size_t horizon,
                                 std::size_t stride) {
  reject_decoyed(series.header);
  const auto layout = make_windows(series.values, lookback, horizon, stride);
  if (layout.size() < 2) throw DataError("back-copy needs at least 2 windows, series allows " + std::to_string(layout.size()));
  if (horizon > lookback) throw ConfigError("back-copy horizon must not exceed the lookback");
  const auto& original = series.values;
  ForecastDecoy out;
  out.series = series;
  auto& modified = out.series.values;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const std::size_t p = layout.starts[i];
    TimeMask m{window_id(p), std::vector<std::uint8_t>(lookback, 0)};
    if (i % 2 == 0) {
      for (std::size_t k = 0; k < horizon; ++k) modified[p + k] = original[p + lookback + k];
      std::fill_n(m.bits.begin(), horizon, 1);
    }
    out.feedback.time.push_back(std::move(m));
  }
  out.windows = windows_over(modified, original, layout);
  out.series.header.decoy =
      DecoyProvenance{"fc_backcopy", {{"T", lookback}, {"W", horizon}, {"stride", layout.stride}}, 0};
  out.series.header.horizon = horizon;
  return out;
}

ForecastDecoy inject_fc_dirac(const SeriesData& series, std::size_t lookback, std::size_t horizon,
                              std::size_t stride, const DecoyConfig& cfg) {
  cfg.validate();
  reject_decoyed(series.header);
  const auto layout = make_windows(series.values, lookback, horizon, stride);
  const std::size_t k = cfg.spacing;
  ForecastDecoy out;
  out.series = series;
  auto& modified = out.series.values;
  for (std::size_t i = k; i < modified.size(); i += k) modified[i] += cfg.amplitude;

  for (auto p : layout.starts) {
    FrequencyMask m{window_id(p), std::vector<std::uint8_t>(lookback, 0), std::vector<std::uint8_t>(lookback, 0)};
    if (cfg.amplitude > 0.0) {
      if (lookback % k == 0) {
        for (std::size_t b = 0; b < lookback; b += lookback / k) m.re_bits[b] = m.im_bits[b] = 1;
      } else {
        std::vector<double> train(lookback, 0.0);
        for (std::size_t t = 0; t < lookback; ++t) {
          const std::size_t idx = p + t;
          if (idx >= k && idx % k == 0) train[t] = 1.0;
        }
        const auto spec = dft(std::span<const double>(train));
        std::vector<double> mag(lookback);
        for (std::size_t b = 0; b < lookback; ++b) mag[b] = std::hypot(spec.re[b], spec.im[b]);
        const double peak = *std::max_element(mag.begin(), mag.end());
        for (std::size_t b = 0; b < lookback; ++b)
          if (peak > 0.0 && mag[b] >= 0.5 * peak) m.re_bits[b] = m.im_bits[b] = 1;
      }
    }
    out.feedback.freq.push_back(std::move(m));
  }
  out.windows = windows_over(modified, modified, layout);
  out.series.header.decoy = DecoyProvenance{"fc_dirac", cfg.params_json(), cfg.seed};
  out.series.header.horizon = horizon;
  out.feedback.seed = cfg.seed;
  return out;
}

nlohmann::json feedback_file_json(const FeedbackSet& fs) { return mask_file_json(to_entries(fs)); }

}  // namespace tsxil
