#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsxil/fourier.hpp"
#include "tsxil/models.hpp"
#include "tsxil/tensor.hpp"

namespace tsxil {

struct IgConfig {
  // Riemann resolution of the path integral (midpoint rule).
  std::size_t steps = 32;
  // Empty means the all-zeros baseline.
  std::vector<double> baseline;
  // Classification: explain l_target - mean_k l_k instead of the raw logit.
  bool centered = false;

  void validate(std::size_t length) const;
};

// Which scalar output an attribution explains.
struct AttributionTarget {
  // Set for classification; unset means "average over the forecast horizon".
  std::optional<std::size_t> class_index;

  static AttributionTarget label(std::size_t k) { return {k}; }
  static AttributionTarget forecast_averaged() { return {}; }
  std::string describe() const;
};

struct Attribution {
  std::vector<double> values;
  AttributionTarget target;
};

struct FrequencyAttribution {
  ComplexVector spectrum;
};

// Batched, differentiable form used by the training loop.
//
//   e(x) = |x - b| * (1/M) sum_s d f_target / d x~ |_{x~ = b + a_s (x - b)},  a_s = (s - 1/2) / M
//
// x is [N, T] data (no grad). For classification `targets` holds one class per
// row; for forecasting it must be empty and the target is the mean of the W
// outputs, which by linearity of the gradient equals the mean of the W
// per-step attributions. With create_graph the result stays differentiable in
// the model parameters.
ad::Tensor integrated_gradients(const Model& model, const ad::Tensor& x, std::span<const std::size_t> targets,
                                const IgConfig& cfg, bool create_graph);

Attribution integrated_gradients(const Model& model, std::span<const double> x, std::size_t target_class,
                                 const IgConfig& cfg);

// Mean of the per-horizon-step attributions of a forecaster.
Attribution forecast_attribution(const Model& model, std::span<const double> x, const IgConfig& cfg);

// Attribution of the argmax class (classification) or the horizon average
// (forecasting); the display path.
Attribution explain(const Model& model, std::span<const double> x, const IgConfig& cfg);

FrequencyAttribution frequency_attribution(const Attribution& attr);
ComplexTensor frequency_attribution(const ad::Tensor& attributions);

// {sample_id, domain: "time", values} / {sample_id, domain: "freq", re, im}
nlohmann::json attribution_json(const std::string& sample_id, const Attribution& attr);
nlohmann::json attribution_json(const std::string& sample_id, const FrequencyAttribution& attr);

}  // namespace tsxil
