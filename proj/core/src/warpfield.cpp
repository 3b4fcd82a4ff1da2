#include "anerf/warpfield.hpp"

#include <algorithm>
#include <cmath>

namespace anerf {

SkinningVolume::SkinningVolume(const GridSpec& grid, const Tensor& prior) : grid_(grid) {
  const auto& r = grid.resolution;
  if (prior.ndim() != 4 || prior.dim(0) != r[0] || prior.dim(1) != r[1] || prior.dim(2) != r[2]) {
    throw DimensionError("skinning prior shape " + shape_str(prior.shape()) + " does not match the grid");
  }
  std::vector<real> v(prior.values().begin(), prior.values().end());
  for (auto& x : v) x = std::log(std::max(x, real(1e-8)));
  logits_ = Tensor::from(prior.shape(), std::move(v), true);
}

SkinningVolume SkinningVolume::uniform(const GridSpec& grid, int bones) {
  SkinningVolume s;
  s.grid_ = grid;
  s.logits_ = Tensor::zeros({grid.resolution[0], grid.resolution[1], grid.resolution[2], bones + 1}, true);
  return s;
}

SampleResult trilinear(const Tensor& volume, const GridBox& box, const Tensor& points,
                       const std::vector<real>& fill) {
  return grid_sample_3d(volume, points, box, fill);
}

Tensor weights_at(const SkinningVolume& volume, const Tensor& points) {
  const auto channels = volume.logits().dim(3);
  auto sampled = trilinear(volume.logits(), volume.grid().box, points);
  Tensor w = softmax(sampled.values, 1);
  if (std::all_of(sampled.inside.begin(), sampled.inside.end(), [](auto f) { return f != 0; })) return w;
  std::vector<real> background(static_cast<std::size_t>(points.dim(0) * channels), real(0));
  for (std::int64_t i = 0; i < points.dim(0); ++i) background[i * channels + channels - 1] = 1;
  return select_rows(sampled.inside, w, Tensor::from({points.dim(0), channels}, std::move(background)));
}

StackedTransforms stack_transforms(const BoneTransforms& transforms, bool inverse) {
  const auto b = static_cast<std::int64_t>(transforms.size());
  std::vector<real> m(static_cast<std::size_t>(9 * b)), t(static_cast<std::size_t>(3 * b));
  for (std::int64_t k = 0; k < b; ++k) {
    const Mat4 tr = inverse ? rigid_inverse(transforms[k]) : transforms[k];
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) m[i * 3 * b + 3 * k + j] = static_cast<real>(tr(j, i));
      t[3 * k + i] = static_cast<real>(tr(i, 3));
    }
  }
  return {Tensor::from({3, 3 * b}, std::move(m)), Tensor::from({3 * b}, std::move(t))};
}

ForwardWarpResult forward_warp(const Tensor& canonical, const Tensor& weights, const BoneTransforms& transforms,
                               const WarpOptions& options) {
  const auto p = canonical.dim(0);
  const auto b = static_cast<std::int64_t>(transforms.size());
  if (weights.ndim() != 2 || weights.dim(0) != p || weights.dim(1) != b + 1) {
    throw DimensionError("forward_warp: weights " + shape_str(weights.shape()) + " for " + std::to_string(b) +
                         " bones");
  }
  Tensor bone_w = slice(weights, 1, 0, b);
  Tensor mass = sum(bone_w, 1, true);
  ForwardWarpResult out;
  out.on_body.resize(static_cast<std::size_t>(p));
  const auto mv = mass.values();
  for (std::int64_t i = 0; i < p; ++i) out.on_body[i] = mv[i] >= options.tau_empty ? 1 : 0;
  Tensor denom = select_rows(out.on_body, mass, Tensor::full({p, 1}, real(1)));
  Tensor w = div(bone_w, denom);
  const auto st = stack_transforms(transforms, false);
  Tensor moved = reshape(matmul(canonical, st.matrix) + st.offset, {p, b, 3});
  Tensor blended = sum(mul(reshape(w, {p, b, 1}), moved), 1);
  out.points = select_rows(out.on_body, blended, canonical);
  return out;
}

BackwardWarpResult backward_warp(const Tensor& observed, const SkinningVolume& volume,
                                 const BoneTransforms& transforms, const WarpOptions& options) {
  const auto p = observed.dim(0);
  const auto b = static_cast<std::int64_t>(transforms.size());
  if (volume.bones() != b) throw DimensionError("backward_warp: volume and transforms disagree on bone count");
  const auto st = stack_transforms(transforms, true);
  // Candidate canonical positions, one per bone: [P,B,3].
  Tensor candidates = reshape(matmul(observed, st.matrix) + st.offset, {p, b, 3});
  Tensor w_all = reshape(weights_at(volume, reshape(candidates, {p * b, 3})), {p, b, b + 1});
  std::vector<real> diag(static_cast<std::size_t>(b * (b + 1)), real(0));
  for (std::int64_t k = 0; k < b; ++k) diag[k * (b + 1) + k] = 1;
  Tensor candidate_w = sum(mul(w_all, Tensor::from({1, b, b + 1}, std::move(diag))), 2);  // [P,B]
  BackwardWarpResult out;
  Tensor mass = sum(candidate_w, 1, true);
  out.bone_mass = reshape(mass, {p});
  out.observation_weights = div(candidate_w, add_scalar(mass, options.eps));
  out.points = sum(mul(reshape(out.observation_weights, {p, b, 1}), candidates), 1);
  return out;
}

}  // namespace anerf
