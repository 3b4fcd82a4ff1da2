#include "anerf/render.hpp"

#include <Eigen/LU>
#include <cmath>
#include <limits>

namespace anerf {

std::optional<std::pair<double, double>> slab_intersect(const Vec3& origin, const Vec3& direction,
                                                        const GridBox& box) {
  double t0 = 0, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (direction[a] == 0) {
      if (origin[a] < box.lo[a] || origin[a] > box.hi[a]) return std::nullopt;
      continue;
    }
    double ta = (box.lo[a] - origin[a]) / direction[a];
    double tb = (box.hi[a] - origin[a]) / direction[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t0 < t1)) return std::nullopt;
  return std::make_pair(t0, t1);
}

std::vector<Ray> generate_rays(const Camera& camera, const std::vector<std::array<double, 2>>& pixels,
                               const GridBox& box) {
  const Mat3 k_inv = camera.intrinsics.inverse();
  const Mat3 rt = camera.rotation.transpose();
  const Vec3 origin = camera.center();
  std::vector<Ray> rays;
  rays.reserve(pixels.size());
  for (const auto& px : pixels) {
    Ray r;
    r.origin = origin;
    r.direction = (rt * (k_inv * Vec3(px[0], px[1], 1))).normalized();
    if (auto hit = slab_intersect(r.origin, r.direction, box)) {
      r.t_near = hit->first;
      r.t_far = hit->second;
      r.hits_box = true;
    }
    rays.push_back(r);
  }
  return rays;
}

std::vector<Ray> pixel_rays(const Camera& camera, const std::vector<std::array<int, 2>>& pixels, const GridBox& box) {
  std::vector<std::array<double, 2>> uv;
  uv.reserve(pixels.size());
  for (const auto& p : pixels) uv.push_back({p[1] + 0.5, p[0] + 0.5});
  return generate_rays(camera, uv, box);
}

std::vector<Ray> image_rays(const Camera& camera, const GridBox& box) {
  std::vector<std::array<int, 2>> px;
  px.reserve(static_cast<std::size_t>(camera.width) * camera.height);
  for (int i = 0; i < camera.height; ++i)
    for (int j = 0; j < camera.width; ++j) px.push_back({i, j});
  return pixel_rays(camera, px, box);
}

std::vector<double> stratified_sample(const Ray& ray, int n, Rng* jitter) {
  if (n < 1) throw ContractError("stratified_sample needs at least one sample");
  const double bin = (ray.t_far - ray.t_near) / n;
  std::vector<double> t(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) t[i] = ray.t_near + bin * (i + (jitter ? jitter->uniform() : 0.5));
  return t;
}

std::vector<double> segment_lengths(const std::vector<double>& depths, double t_far) {
  std::vector<double> d(depths.size());
  for (std::size_t i = 0; i + 1 < depths.size(); ++i) d[i] = depths[i + 1] - depths[i];
  if (!depths.empty()) d.back() = t_far - depths.back();
  return d;
}

CompositeResult composite(const Tensor& sigma, const Tensor& color, const Tensor& deltas, const Vec3& background) {
  if (sigma.ndim() != 2 || color.ndim() != 3 || color.dim(0) != sigma.dim(0) || color.dim(1) != sigma.dim(1) ||
      color.dim(2) != 3 || deltas.shape() != sigma.shape()) {
    throw DimensionError("composite: sigma " + shape_str(sigma.shape()) + ", color " + shape_str(color.shape()) +
                         ", deltas " + shape_str(deltas.shape()));
  }
  const auto r = sigma.dim(0), n = sigma.dim(1);
  Tensor optical = sigma * deltas;
  Tensor alpha = neg(exp(neg(optical))) + real(1);
  Tensor trans = exp(neg(cumsum(optical, 1, true)));
  CompositeResult out;
  out.weights = trans * alpha;
  out.residual = exp(neg(sum(optical, 1)));
  Tensor bg = Tensor::from({1, 3}, {static_cast<real>(background.x()), static_cast<real>(background.y()),
                                    static_cast<real>(background.z())});
  out.color = sum(reshape(out.weights, {r, n, 1}) * color, 1) + reshape(out.residual, {r, 1}) * bg;
  out.alpha = neg(out.residual) + real(1);
  return out;
}

RenderResult render_rays(const SceneModel& model, const Conditioning& cond, const std::vector<Ray>& rays,
                         const BoneTransforms& target, const Pose& target_pose, const RenderSettings& settings,
                         Rng* jitter) {
  const auto total = static_cast<std::int64_t>(rays.size());
  const int n = settings.samples;
  Index hit;
  std::vector<real> points, dirs, deltas;
  for (std::int64_t i = 0; i < total; ++i) {
    const auto& ray = rays[i];
    if (!ray.hits_box) continue;
    hit.push_back(i);
    const auto t = stratified_sample(ray, n, jitter);
    const auto d = segment_lengths(t, ray.t_far);
    for (int s = 0; s < n; ++s) {
      const Vec3 x = ray.origin + t[s] * ray.direction;
      points.insert(points.end(), {x.x(), x.y(), x.z()});
      dirs.insert(dirs.end(), {ray.direction.x(), ray.direction.y(), ray.direction.z()});
      deltas.push_back(static_cast<real>(d[s]));
    }
  }
  std::vector<real> bg_rows(static_cast<std::size_t>(total * 3), real(0));
  for (std::int64_t i = 0; i < total; ++i) {
    if (rays[i].hits_box) continue;
    for (int c = 0; c < 3; ++c) bg_rows[i * 3 + c] = static_cast<real>(settings.background[c]);
  }
  RenderResult out;
  const Tensor background = Tensor::from({total, 3}, std::move(bg_rows));
  if (hit.empty()) {
    out.color = background;
    out.alpha = Tensor::zeros({total});
    return out;
  }
  const auto h = static_cast<std::int64_t>(hit.size());
  const Tensor x = Tensor::from({h * n, 3}, std::move(points));
  const Tensor v = Tensor::from({h * n, 3}, std::move(dirs));
  const auto q = query_pipeline(model, cond, x, target, target_pose, v);
  const auto c = composite(reshape(q.sigma, {h, n}), reshape(q.color, {h, n, 3}),
                           Tensor::from({h, n}, std::move(deltas)), settings.background);
  if (h == total) {
    out.color = c.color;
    out.alpha = c.alpha;
  } else {
    out.color = index_add(c.color, hit, total) + background;
    out.alpha = reshape(index_add(reshape(c.alpha, {h, 1}), hit, total), {total});
  }
  return out;
}

}  // namespace anerf
