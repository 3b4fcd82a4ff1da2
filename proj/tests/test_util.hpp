#pragma once

#include <anerf/rng.hpp>
#include <anerf/tensor.hpp>

namespace anerf::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<real> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<real>(rng.uniform(lo, hi));
  return Tensor::from(std::move(shape), std::move(v));
}

inline double max_abs_diff(std::span<const real> a, std::span<const real> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<double>(std::abs(a[i] - b[i])));
  return m;
}

}  // namespace anerf::testing
