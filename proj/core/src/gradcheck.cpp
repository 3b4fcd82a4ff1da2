#include "anerf/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace anerf {

GradCheckReport grad_check(const ScalarFn& fn, std::vector<Tensor> inputs, const GradCheckOptions& options) {
  for (auto& t : inputs) {
    if (!t.is_leaf()) throw ContractError("grad_check: inputs must be leaves");
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor loss = fn(inputs);
  loss.backward();
  std::vector<std::vector<real>> analytic;
  for (const auto& t : inputs) {
    const Tensor g = t.grad();
    analytic.emplace_back(g.values().begin(), g.values().end());
  }

  GradCheckReport report;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].mutable_values();
    const auto n = static_cast<std::int64_t>(values.size());
    std::int64_t stride = 1;
    if (options.max_elements_per_input > 0 && n > options.max_elements_per_input) {
      stride = (n + options.max_elements_per_input - 1) / options.max_elements_per_input;
    }
    real worst = 0;
    for (std::int64_t i = 0; i < n; i += stride) {
      const real original = values[i];
      values[i] = original + options.step;
      const real plus = fn(inputs).item();
      values[i] = original - options.step;
      const real minus = fn(inputs).item();
      values[i] = original;
      const real numeric = (plus - minus) / (2 * options.step);
      const real a = analytic[k][i];
      const real denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    report.max_rel_error.push_back(worst);
    report.worst = std::max(report.worst, worst);
  }
  for (auto& t : inputs) t.zero_grad();
  report.passed = report.worst <= options.tolerance;
  return report;
}

}  // namespace anerf
