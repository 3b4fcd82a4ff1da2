#pragma once

#include <vector>

#include "anerf/kinematics.hpp"
#include "anerf/ops.hpp"

namespace anerf {

/// Learnable grid of skinning-weight logits [D,H,W,B+1] over the category-level
/// canonical space. The last channel is background.
class SkinningVolume {
 public:
  SkinningVolume() = default;
  /// Logits initialized to log(prior), with the prior floored at 1e-8.
  SkinningVolume(const GridSpec& grid, const Tensor& prior);
  /// All-zero logits (uniform weights).
  static SkinningVolume uniform(const GridSpec& grid, int bones);

  const GridSpec& grid() const { return grid_; }
  const Tensor& logits() const { return logits_; }
  Tensor& logits() { return logits_; }
  int bones() const { return static_cast<int>(logits_.dim(3)) - 1; }

 private:
  GridSpec grid_{};
  Tensor logits_;
};

struct WarpOptions {
  real eps = 1e-6;        // guard in the observation-weight normalization
  real tau_empty = 1e-3;  // bone mass below this marks a point off-body
};

/// Trilinear interpolation of a [D,H,W,C] volume; outside points get `fill`.
SampleResult trilinear(const Tensor& volume, const GridBox& box, const Tensor& points,
                       const std::vector<real>& fill = {});

/// Skinning weights [P,B+1] at canonical points [P,3]: softmax of the
/// interpolated logits; points outside the volume are pure background.
Tensor weights_at(const SkinningVolume& volume, const Tensor& points);

struct ForwardWarpResult {
  Tensor points;                      // [P,3] observation space
  std::vector<std::uint8_t> on_body;  // bone mass >= tau_empty
};

/// Linear blend skinning C -> O using the bone channels of `weights`
/// renormalized to sum to one. Off-body points are returned unwarped.
ForwardWarpResult forward_warp(const Tensor& canonical, const Tensor& weights, const BoneTransforms& transforms,
                               const WarpOptions& options = {});

struct BackwardWarpResult {
  Tensor points;               // [P,3] canonical space
  Tensor bone_mass;            // [P] sum of candidate weights
  Tensor observation_weights;  // [P,B]
};

/// Inverse skinning O -> C: candidate weight of bone b is channel b of the
/// volume sampled at T_b^-1 x_o; normalized by their sum plus eps.
BackwardWarpResult backward_warp(const Tensor& observed, const SkinningVolume& volume,
                                 const BoneTransforms& transforms, const WarpOptions& options = {});

/// Row-vector form of the bone transforms: x T_b^T = x M[:,3b:3b+3] + t[3b:3b+3].
struct StackedTransforms {
  Tensor matrix;  // [3, 3B]
  Tensor offset;  // [3B]
};
StackedTransforms stack_transforms(const BoneTransforms& transforms, bool inverse);

}  // namespace anerf
