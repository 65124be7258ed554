#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tsxil/tensor.hpp"

namespace tsxil {

// Full-length complex spectrum kept as two real tensors of equal shape.
struct ComplexTensor {
  ad::Tensor re;
  ad::Tensor im;
};

struct ComplexVector {
  std::vector<double> re;
  std::vector<double> im;

  std::size_t size() const { return re.size(); }
};

// Plain O(T^2) DFT along the last axis of a [T] or [N, T] tensor:
//   X[k] = sum_n x[n] exp(-2 pi i k n / T)
// Implemented as products with constant cosine/sine bases, so it is
// differentiable to any order.
ComplexTensor dft(const ad::Tensor& signal);

// Inverse of dft; the imaginary residue of the result is dropped.
ad::Tensor idft(const ComplexTensor& spectrum);

ComplexVector dft(std::span<const double> signal);
std::vector<double> idft(const ComplexVector& spectrum);

}  // namespace tsxil
