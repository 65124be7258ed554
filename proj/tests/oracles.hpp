#pragma once

// Independent reference computations for the tests. Nothing here touches the
// autodiff engine, so agreement is a real cross-check.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <vector>

namespace oracle {

using Fn = std::function<double(const std::vector<double>&)>;

// Central differences of a scalar function.
inline std::vector<double> central_diff(const Fn& f, std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Central differences of a vector-valued function, contracted with `dir`:
// returns d/dh f(x + h dir) at h = 0.
inline std::vector<double> directional_diff(const std::function<std::vector<double>(const std::vector<double>&)>& f,
                                            const std::vector<double>& x, const std::vector<double>& dir,
                                            double h = 1e-5) {
  auto xp = x, xm = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] += h * dir[i];
    xm[i] -= h * dir[i];
  }
  const auto up = f(xp), down = f(xm);
  std::vector<double> out(up.size());
  for (std::size_t i = 0; i < up.size(); ++i) out[i] = (up[i] - down[i]) / (2.0 * h);
  return out;
}

// max|a - b| / max(max|a|, max|b|, floor)
inline double rel_err(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-8) {
  double diff = 0.0, scale = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return diff / scale;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

// Textbook DFT in long double with complex exponentials.
inline std::vector<std::complex<long double>> naive_dft(const std::vector<double>& x) {
  const std::size_t t = x.size();
  std::vector<std::complex<long double>> out(t);
  for (std::size_t k = 0; k < t; ++k) {
    std::complex<long double> acc = 0;
    for (std::size_t n = 0; n < t; ++n) {
      const long double ang = -2.0L * std::numbers::pi_v<long double> * static_cast<long double>(k * n % t) /
                              static_cast<long double>(t);
      acc += static_cast<long double>(x[n]) * std::polar(1.0L, ang);
    }
    out[k] = acc;
  }
  return out;
}

}  // namespace oracle
