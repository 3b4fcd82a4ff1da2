#pragma once

#include <optional>
#include <vector>

#include "anerf/model.hpp"

namespace anerf {

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();  // unit length
  double t_near = 0;
  double t_far = 0;
  bool hits_box = false;  // false: background-only
};

/// Entry and exit parameters of origin + t * direction through `box`, clipped to t >= 0.
std::optional<std::pair<double, double>> slab_intersect(const Vec3& origin, const Vec3& direction,
                                                        const GridBox& box);

/// Rays through continuous pixel coordinates (u, v), bounded by `box`.
std::vector<Ray> generate_rays(const Camera& camera, const std::vector<std::array<double, 2>>& pixels,
                               const GridBox& box);
/// Rays through the centres of pixels (row, col), row-major.
std::vector<Ray> pixel_rays(const Camera& camera, const std::vector<std::array<int, 2>>& pixels, const GridBox& box);
std::vector<Ray> image_rays(const Camera& camera, const GridBox& box);

/// N depths in [t_near, t_far], one per equal bin: uniform within the bin when
/// `jitter` is given, the bin centre otherwise.
std::vector<double> stratified_sample(const Ray& ray, int n, Rng* jitter);

struct CompositeResult {
  Tensor color;     // [R,3]
  Tensor alpha;     // [R] = 1 - residual transmittance
  Tensor weights;   // [R,N] T_i * alpha_i
  Tensor residual;  // [R] T_{N+1}
};

/// Standard quadrature: alpha_i = 1 - exp(-sigma_i delta_i), T_i = prod_{j<i}(1 - alpha_j),
/// C = sum T_i alpha_i c_i + T_{N+1} * background. sigma [R,N], color [R,N,3], deltas [R,N].
CompositeResult composite(const Tensor& sigma, const Tensor& color, const Tensor& deltas, const Vec3& background);

/// Segment lengths t_{i+1} - t_i, with t_far - t_N for the last sample.
std::vector<double> segment_lengths(const std::vector<double>& depths, double t_far);

struct RenderSettings {
  int samples = 64;
  Vec3 background = Vec3::Ones();
};

struct RenderResult {
  Tensor color;  // [R,3]
  Tensor alpha;  // [R]
};

/// Renders rays through the full pipeline. Rays that miss their box return the
/// background exactly. `jitter` enables stratified jitter.
RenderResult render_rays(const SceneModel& model, const Conditioning& cond, const std::vector<Ray>& rays,
                         const BoneTransforms& target, const Pose& target_pose, const RenderSettings& settings,
                         Rng* jitter = nullptr);

}  // namespace anerf
