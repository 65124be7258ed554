#include "tsxil/fourier.hpp"

#include <cmath>
#include <map>
#include <numbers>

#include "tsxil/error.hpp"

namespace tsxil {

namespace {

struct Basis {
  ad::Tensor cos;   // [T, T], cos(2 pi k n / T)
  ad::Tensor nsin;  // [T, T], -sin(2 pi k n / T)
};

// Both matrices are symmetric in (k, n), so they serve as analysis and
// synthesis bases without a transpose.
const Basis& basis(std::size_t t) {
  thread_local std::map<std::size_t, Basis> cache;
  auto it = cache.find(t);
  if (it != cache.end()) return it->second;
  std::vector<double> c(t * t), s(t * t);
  for (std::size_t k = 0; k < t; ++k) {
    for (std::size_t n = 0; n < t; ++n) {
      // Reduce k*n mod T first so exact angles (0, pi/2, pi, ...) stay exact.
      const double angle = 2.0 * std::numbers::pi * static_cast<double>((k * n) % t) / static_cast<double>(t);
      c[k * t + n] = std::cos(angle);
      s[k * t + n] = -std::sin(angle);
    }
  }
  Basis b{ad::Tensor::from(std::move(c), {t, t}), ad::Tensor::from(std::move(s), {t, t})};
  return cache.emplace(t, std::move(b)).first->second;
}

ad::Tensor as_rows(const ad::Tensor& x) {
  if (x.rank() == 1) return ad::reshape(x, {1, x.dim(0)});
  if (x.rank() == 2) return x;
  throw ShapeError("dft expects [T] or [N, T], got " + ad::shape_str(x.shape()));
}

}  // namespace

ComplexTensor dft(const ad::Tensor& signal) {
  const ad::Tensor rows = as_rows(signal);
  const std::size_t t = rows.dim(1);
  if (t == 0) throw ShapeError("dft of an empty signal");
  const Basis& b = basis(t);
  ComplexTensor out{ad::matmul(rows, b.cos), ad::matmul(rows, b.nsin)};
  if (signal.rank() == 1) {
    out.re = ad::reshape(out.re, {t});
    out.im = ad::reshape(out.im, {t});
  }
  return out;
}

ad::Tensor idft(const ComplexTensor& spectrum) {
  if (spectrum.re.shape() != spectrum.im.shape()) {
    throw ShapeError("idft: re " + ad::shape_str(spectrum.re.shape()) + " vs im " +
                     ad::shape_str(spectrum.im.shape()));
  }
  const ad::Tensor re = as_rows(spectrum.re);
  const ad::Tensor im = as_rows(spectrum.im);
  const std::size_t t = re.dim(1);
  if (t == 0) throw ShapeError("idft of an empty spectrum");
  const Basis& b = basis(t);
  // x[n] = 1/T sum_k (re_k cos - im_k sin); nsin already carries the minus.
  ad::Tensor x = ad::scale(ad::add(ad::matmul(re, b.cos), ad::matmul(im, b.nsin)), 1.0 / static_cast<double>(t));
  if (spectrum.re.rank() == 1) x = ad::reshape(x, {t});
  return x;
}

ComplexVector dft(std::span<const double> signal) {
  ad::NoGradGuard guard;
  const auto spec = dft(ad::Tensor::from({signal.begin(), signal.end()}, {signal.size()}));
  return {{spec.re.values().begin(), spec.re.values().end()}, {spec.im.values().begin(), spec.im.values().end()}};
}

std::vector<double> idft(const ComplexVector& spectrum) {
  if (spectrum.re.size() != spectrum.im.size()) throw ShapeError("idft: re/im length mismatch");
  ad::NoGradGuard guard;
  const std::size_t t = spectrum.re.size();
  const auto x = idft(ComplexTensor{ad::Tensor::from(spectrum.re, {t}), ad::Tensor::from(spectrum.im, {t})});
  return {x.values().begin(), x.values().end()};
}

}  // namespace tsxil
