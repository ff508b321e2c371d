#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "cada/module.hpp"
#include "cada/verify.hpp"
#include "doctest.h"

namespace cada::test {

using TensorD = Tensor<double>;

inline TensorD random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(s);
  fill_uniform(t, rng, lo, hi);
  return t;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const TensorD& a, const TensorD& b) {
  REQUIRE(a.shape() == b.shape());
  return max_abs_diff(a.data(), b.data());
}

inline double weighted_sum(const TensorD& t, const TensorD& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * w[i];
  return s;
}

/// Scale-relative error of `analytic` against central differences of
/// sum(w * f(x)) with respect to x.
inline double fd_error(TensorD& x, const TensorD& w, const std::function<TensorD()>& f,
                       std::span<const double> analytic) {
  const auto num = verify::numeric_gradient(x, [&] { return weighted_sum(f(), w); });
  return verify::scale_relative_error(analytic, num);
}

}  // namespace cada::test
