#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

#include "tsxil/attribution.hpp"
#include "tsxil/feedback.hpp"
#include "tsxil/fourier.hpp"
#include "tsxil/models.hpp"
#include "tsxil/tensor.hpp"

namespace tsxil {

struct LossConfig {
  TaskKind task = TaskKind::Classification;
  // Weight of the time-domain right-reason term.
  double lambda_sp = 0.0;
  // Weight of the frequency-domain right-reason term.
  double lambda_fr = 0.0;
  // Divide each right-reason term by the series length. Off by default.
  bool normalize_by_length = false;

  void validate() const;
};

struct LossReport {
  double ra = 0.0;
  double rr_sp = 0.0;
  double rr_fr = 0.0;
  double total = 0.0;
};

nlohmann::json loss_row_json(std::size_t epoch, const LossReport& r);

// Mean cross-entropy of logits [N, K] against integer labels.
ad::Tensor cross_entropy(const ad::Tensor& logits, std::span<const std::size_t> labels);
// Mean squared error over every element.
ad::Tensor mse(const ad::Tensor& predictions, const ad::Tensor& targets);

// Cross-entropy for classification (targets are labels), MSE for forecasting.
ad::Tensor right_answer_loss(const ad::Tensor& predictions, std::span<const std::size_t> labels);
ad::Tensor right_answer_loss(const ad::Tensor& predictions, const ad::Tensor& targets);

// (1/D) sum_x sum_t (e_t(x) a_t(x))^2.
//
// `attributions` and `masks` are [N, T]. `denominator` is D; pass the full
// batch size when only the annotated rows are given (unannotated rows add
// exactly zero), or 0 to use N.
ad::Tensor rr_spatial(const ad::Tensor& attributions, const ad::Tensor& masks, std::size_t denominator = 0,
                      bool normalize_by_length = false);

// (1/D) sum_x [sum_k (Re e^_k a^re_k)^2 + sum_k (Im e^_k a^im_k)^2]
ad::Tensor rr_frequency(const ComplexTensor& spectra, const ad::Tensor& re_masks, const ad::Tensor& im_masks,
                        std::size_t denominator = 0, bool normalize_by_length = false);

// Value-level forms over per-sample containers.
double rr_spatial(const std::vector<Attribution>& attrs, const std::vector<TimeMask>& masks);
double rr_frequency(const std::vector<FrequencyAttribution>& attrs, const std::vector<FrequencyMask>& masks);

LossReport combined_loss(double ra, double rr_sp, double rr_fr, const LossConfig& cfg);

// total = ra + lambda_sp * rr_sp + lambda_fr * rr_fr on tensors. Undefined
// right-reason tensors are skipped.
ad::Tensor combined_loss(const ad::Tensor& ra, const ad::Tensor& rr_sp, const ad::Tensor& rr_fr,
                         const LossConfig& cfg);

ad::Tensor mask_tensor(const std::vector<TimeMask>& masks, std::span<const std::size_t> rows);
std::pair<ad::Tensor, ad::Tensor> mask_tensors(const std::vector<FrequencyMask>& masks,
                                               std::span<const std::size_t> rows);

}  // namespace tsxil
