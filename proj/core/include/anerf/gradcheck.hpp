#pragma once

#include <functional>
#include <vector>

#include "anerf/tensor.hpp"

namespace anerf {

struct GradCheckOptions {
  real step = 1e-5;
  real tolerance = 1e-4;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor),
  /// so vanishing gradients are compared on an absolute scale.
  real floor = 1e-2;
  /// Checks every k-th element when an input is larger than this (0 = all).
  std::int64_t max_elements_per_input = 0;
};

struct GradCheckReport {
  std::vector<real> max_rel_error;  // one entry per input
  real worst = 0;
  bool passed = false;
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares reverse-mode gradients of `fn` against central differences.
/// Inputs are treated as leaves; their values are restored afterwards.
GradCheckReport grad_check(const ScalarFn& fn, std::vector<Tensor> inputs, const GradCheckOptions& options = {});

}  // namespace anerf
