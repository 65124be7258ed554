#include "tsxil/attribution.hpp"

#include <algorithm>
#include <cmath>

#include "tsxil/error.hpp"

namespace tsxil {

void IgConfig::validate(std::size_t length) const {
  if (steps == 0) throw ConfigError("integrated gradients: steps must be >= 1");
  if (!baseline.empty() && baseline.size() != length) {
    throw ConfigError("integrated gradients: baseline length " + std::to_string(baseline.size()) +
                      " != series length " + std::to_string(length));
  }
}

std::string AttributionTarget::describe() const {
  return class_index ? "class:" + std::to_string(*class_index) : std::string("forecast-averaged");
}

ad::Tensor integrated_gradients(const Model& model, const ad::Tensor& x, std::span<const std::size_t> targets,
                                const IgConfig& cfg, bool create_graph) {
  if (x.rank() != 2) throw ShapeError("integrated_gradients expects [N, T], got " + ad::shape_str(x.shape()));
  const std::size_t n = x.dim(0), t = x.dim(1), m = cfg.steps;
  cfg.validate(t);
  const bool classification = model.task() == TaskKind::Classification;
  if (classification && targets.size() != n) {
    throw ContractViolation("integrated_gradients: need one target class per row");
  }
  if (!classification && !targets.empty()) {
    throw ContractViolation("integrated_gradients: forecasting attributions take no class targets");
  }
  const std::size_t k = model.output_size();
  for (auto c : targets)
    if (c >= k) throw ContractViolation("target class " + std::to_string(c) + " out of range");

  auto xv = x.values();
  std::vector<double> diff(n * t);
  std::vector<double> path(m * n * t);
  for (std::size_t i = 0; i < n * t; ++i) {
    const double b = cfg.baseline.empty() ? 0.0 : cfg.baseline[i % t];
    diff[i] = xv[i] - b;
  }
  for (std::size_t s = 0; s < m; ++s) {
    const double alpha = (static_cast<double>(s) + 0.5) / static_cast<double>(m);
    double* dst = path.data() + s * n * t;
    for (std::size_t i = 0; i < n * t; ++i) {
      const double b = cfg.baseline.empty() ? 0.0 : cfg.baseline[i % t];
      dst[i] = b + alpha * diff[i];
    }
  }
  ad::Tensor path_x = ad::Tensor::from(std::move(path), {m * n, t}, true);

  // Output weights selecting the explained scalar per path row.
  std::vector<double> select(m * n * k, 0.0);
  for (std::size_t s = 0; s < m; ++s) {
    for (std::size_t r = 0; r < n; ++r) {
      double* row = select.data() + (s * n + r) * k;
      if (classification) {
        if (cfg.centered) std::fill(row, row + k, -1.0 / static_cast<double>(k));
        row[targets[r]] += 1.0;
      } else {
        std::fill(row, row + k, 1.0 / static_cast<double>(k));
      }
    }
  }
  ad::GradModeGuard recording(true);
  const ad::Tensor out = model.forward(path_x);
  const ad::Tensor objective = ad::sum(ad::mul(out, ad::Tensor::from(std::move(select), {m * n, k})));
  const ad::Tensor g = ad::grad(objective, path_x, {.create_graph = create_graph});
  for (double v : g.values()) {
    if (!std::isfinite(v)) throw NumericalError("integrated gradients: non-finite input gradient");
  }
  const ad::Tensor avg =
      ad::scale(ad::reshape(ad::sum_to(ad::reshape(g, {m, n, t}), {1, n, t}), {n, t}), 1.0 / static_cast<double>(m));
  for (auto& d : diff) d = std::abs(d);
  // Without create_graph the result is a plain constant.
  ad::GradModeGuard tail(create_graph);
  return ad::mul(avg, ad::Tensor::from(std::move(diff), {n, t}));
}

namespace {
Attribution single(const Model& model, std::span<const double> x, std::vector<std::size_t> targets,
                   AttributionTarget target, const IgConfig& cfg) {
  const auto xt = ad::Tensor::from({x.begin(), x.end()}, {1, x.size()});
  const auto e = integrated_gradients(model, xt, targets, cfg, false);
  return {{e.values().begin(), e.values().end()}, target};
}
}  // namespace

Attribution integrated_gradients(const Model& model, std::span<const double> x, std::size_t target_class,
                                 const IgConfig& cfg) {
  if (model.task() != TaskKind::Classification) {
    throw ContractViolation("integrated_gradients with a class target needs a classifier");
  }
  return single(model, x, {target_class}, AttributionTarget::label(target_class), cfg);
}

Attribution forecast_attribution(const Model& model, std::span<const double> x, const IgConfig& cfg) {
  if (model.task() != TaskKind::Forecasting) throw ContractViolation("forecast_attribution needs a forecaster");
  return single(model, x, {}, AttributionTarget::forecast_averaged(), cfg);
}

Attribution explain(const Model& model, std::span<const double> x, const IgConfig& cfg) {
  if (model.task() == TaskKind::Forecasting) return forecast_attribution(model, x, cfg);
  const auto logits = classify(model, x);
  const auto top = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  return integrated_gradients(model, x, top, cfg);
}

FrequencyAttribution frequency_attribution(const Attribution& attr) { return {dft(std::span(attr.values))}; }

ComplexTensor frequency_attribution(const ad::Tensor& attributions) { return dft(attributions); }

nlohmann::json attribution_json(const std::string& sample_id, const Attribution& attr) {
  return {{"sample_id", sample_id}, {"domain", "time"}, {"target", attr.target.describe()}, {"values", attr.values}};
}

nlohmann::json attribution_json(const std::string& sample_id, const FrequencyAttribution& attr) {
  return {{"sample_id", sample_id}, {"domain", "freq"}, {"re", attr.spectrum.re}, {"im", attr.spectrum.im}};
}

}  // namespace tsxil
