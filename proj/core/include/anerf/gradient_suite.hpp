#pragma once

#include <functional>
#include <string>
#include <vector>

#include "anerf/gradcheck.hpp"
#include "anerf/model.hpp"

namespace anerf {

/// Names of every primitive that records a graph node.
const std::vector<std::string>& registered_ops();

struct OpGradientCase {
  std::string name;
  std::string op;  // node name of the output
  std::function<std::vector<Tensor>(Rng&)> make_inputs;
  std::function<Tensor(const std::vector<Tensor>&)> apply;
};

/// Finite-difference cases covering every registered op, with inputs kept
/// away from kinks and poles.
std::vector<OpGradientCase> op_gradient_cases();

struct SuiteEntry {
  std::string name;
  real worst = 0;
  bool passed = false;
};

/// Runs every case on `seeds` random draws; each output is reduced with fixed
/// random weights so all elements carry distinct gradients.
std::vector<SuiteEntry> run_op_gradient_suite(int seeds = 3, real tolerance = 1e-4);

/// Two-bone toy model: K = 1, 8^3 volumes, a few channels and narrow MLPs.
ModelConfig toy_model_config();

/// Pixel-loss gradient of the whole pipeline (encoder, diffusion, skinning
/// volume, deformation, rendering) on the toy model against central differences.
GradCheckReport pipeline_gradient_check(real tolerance = 1e-3, std::uint64_t seed = 0);

}  // namespace anerf
