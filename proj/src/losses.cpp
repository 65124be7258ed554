#include "tsxil/losses.hpp"

#include "tsxil/error.hpp"

namespace tsxil {

void LossConfig::validate() const {
  if (!(lambda_sp >= 0.0) || !(lambda_fr >= 0.0)) throw ConfigError("loss weights must be non-negative");
}

nlohmann::json loss_row_json(std::size_t epoch, const LossReport& r) {
  return {{"epoch", epoch}, {"ra", r.ra}, {"rr_sp", r.rr_sp}, {"rr_fr", r.rr_fr}, {"total", r.total}};
}

ad::Tensor cross_entropy(const ad::Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy: logits " + ad::shape_str(logits.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<double> onehot(n * k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) throw ShapeError("cross_entropy: label " + std::to_string(labels[i]) + " >= K");
    onehot[i * k + labels[i]] = 1.0;
  }
  const auto picked = ad::mul(ad::log_softmax(logits), ad::Tensor::from(std::move(onehot), {n, k}));
  return ad::scale(ad::sum(picked), -1.0 / static_cast<double>(n));
}

ad::Tensor mse(const ad::Tensor& predictions, const ad::Tensor& targets) {
  if (predictions.shape() != targets.shape()) {
    throw ShapeError("mse: " + ad::shape_str(predictions.shape()) + " vs " + ad::shape_str(targets.shape()));
  }
  return ad::mean(ad::square(ad::sub(predictions, targets)));
}

ad::Tensor right_answer_loss(const ad::Tensor& predictions, std::span<const std::size_t> labels) {
  return cross_entropy(predictions, labels);
}

ad::Tensor right_answer_loss(const ad::Tensor& predictions, const ad::Tensor& targets) {
  return mse(predictions, targets);
}

namespace {
double rr_scale(std::size_t rows, std::size_t denominator, std::size_t length, bool normalize) {
  const double d = static_cast<double>(denominator ? denominator : rows);
  return 1.0 / (normalize ? d * static_cast<double>(length) : d);
}
}  // namespace

ad::Tensor rr_spatial(const ad::Tensor& attributions, const ad::Tensor& masks, std::size_t denominator,
                      bool normalize_by_length) {
  if (attributions.shape() != masks.shape() || attributions.rank() != 2) {
    throw ShapeError("rr_spatial: attributions " + ad::shape_str(attributions.shape()) + " vs masks " +
                     ad::shape_str(masks.shape()));
  }
  const double c = rr_scale(attributions.dim(0), denominator, attributions.dim(1), normalize_by_length);
  return ad::scale(ad::sum(ad::square(ad::mul(attributions, masks))), c);
}

ad::Tensor rr_frequency(const ComplexTensor& spectra, const ad::Tensor& re_masks, const ad::Tensor& im_masks,
                        std::size_t denominator, bool normalize_by_length) {
  if (spectra.re.shape() != re_masks.shape() || spectra.im.shape() != im_masks.shape() || spectra.re.rank() != 2) {
    throw ShapeError("rr_frequency: spectrum " + ad::shape_str(spectra.re.shape()) + " vs masks " +
                     ad::shape_str(re_masks.shape()));
  }
  const double c = rr_scale(spectra.re.dim(0), denominator, spectra.re.dim(1), normalize_by_length);
  const auto re_term = ad::sum(ad::square(ad::mul(spectra.re, re_masks)));
  const auto im_term = ad::sum(ad::square(ad::mul(spectra.im, im_masks)));
  return ad::scale(ad::add(re_term, im_term), c);
}

double rr_spatial(const std::vector<Attribution>& attrs, const std::vector<TimeMask>& masks) {
  if (attrs.size() != masks.size()) throw ShapeError("rr_spatial: attribution/mask count mismatch");
  if (attrs.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    const auto& e = attrs[i].values;
    const auto& a = masks[i].bits;
    if (e.size() != a.size()) throw ShapeError("rr_spatial: attribution/mask length mismatch");
    for (std::size_t t = 0; t < e.size(); ++t) {
      const double v = e[t] * a[t];
      total += v * v;
    }
  }
  return total / static_cast<double>(attrs.size());
}

double rr_frequency(const std::vector<FrequencyAttribution>& attrs, const std::vector<FrequencyMask>& masks) {
  if (attrs.size() != masks.size()) throw ShapeError("rr_frequency: attribution/mask count mismatch");
  if (attrs.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    const auto& s = attrs[i].spectrum;
    const auto& m = masks[i];
    if (s.size() != m.size()) throw ShapeError("rr_frequency: spectrum/mask length mismatch");
    for (std::size_t k = 0; k < s.size(); ++k) {
      const double r = s.re[k] * m.re_bits[k];
      const double im = s.im[k] * m.im_bits[k];
      total += r * r + im * im;
    }
  }
  return total / static_cast<double>(attrs.size());
}

LossReport combined_loss(double ra, double rr_sp, double rr_fr, const LossConfig& cfg) {
  cfg.validate();
  return {ra, rr_sp, rr_fr, ra + cfg.lambda_sp * rr_sp + cfg.lambda_fr * rr_fr};
}

ad::Tensor combined_loss(const ad::Tensor& ra, const ad::Tensor& rr_sp, const ad::Tensor& rr_fr,
                         const LossConfig& cfg) {
  cfg.validate();
  ad::Tensor total = ra;
  if (rr_sp.defined()) total = ad::add(total, ad::scale(rr_sp, cfg.lambda_sp));
  if (rr_fr.defined()) total = ad::add(total, ad::scale(rr_fr, cfg.lambda_fr));
  return total;
}

ad::Tensor mask_tensor(const std::vector<TimeMask>& masks, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ShapeError("mask_tensor: no rows");
  const std::size_t t = masks.at(rows[0]).size();
  std::vector<double> v;
  v.reserve(rows.size() * t);
  for (auto r : rows) {
    const auto& m = masks.at(r);
    if (m.size() != t) throw ShapeError("mask_tensor: masks differ in length");
    v.insert(v.end(), m.bits.begin(), m.bits.end());
  }
  return ad::Tensor::from(std::move(v), {rows.size(), t});
}

std::pair<ad::Tensor, ad::Tensor> mask_tensors(const std::vector<FrequencyMask>& masks,
                                               std::span<const std::size_t> rows) {
  if (rows.empty()) throw ShapeError("mask_tensors: no rows");
  const std::size_t t = masks.at(rows[0]).size();
  std::vector<double> re, im;
  for (auto r : rows) {
    const auto& m = masks.at(r);
    if (m.size() != t) throw ShapeError("mask_tensors: masks differ in length");
    re.insert(re.end(), m.re_bits.begin(), m.re_bits.end());
    im.insert(im.end(), m.im_bits.begin(), m.im_bits.end());
  }
  return {ad::Tensor::from(std::move(re), {rows.size(), t}), ad::Tensor::from(std::move(im), {rows.size(), t})};
}

}  // namespace tsxil
