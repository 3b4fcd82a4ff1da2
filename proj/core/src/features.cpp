#include "anerf/features.hpp"

#include <cmath>

namespace anerf {

PixelFeatures pixel_aligned(const Tensor& features, const Camera& camera, const Tensor& points) {
  if (features.ndim() != 3) throw DimensionError("pixel_aligned: features must be [H,W,C], got " +
                                                 shape_str(features.shape()));
  if (points.ndim() != 2 || points.dim(1) != 3) {
    throw DimensionError("pixel_aligned: points must be [P,3], got " + shape_str(points.shape()));
  }
  const auto p = points.dim(0);
  const auto c = features.dim(2);
  std::vector<real> rt(9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) rt[i * 3 + j] = static_cast<real>(camera.rotation(j, i));
  const auto& tr = camera.translation;
  Tensor cam = matmul(points, Tensor::from({3, 3}, std::move(rt))) +
               Tensor::from({3}, {static_cast<real>(tr.x()), static_cast<real>(tr.y()), static_cast<real>(tr.z())});

  PixelFeatures out;
  out.in_frustum.resize(static_cast<std::size_t>(p));
  std::vector<std::uint8_t> in_front(static_cast<std::size_t>(p));
  const auto cv = cam.values();
  const auto& k = camera.intrinsics;
  for (std::int64_t i = 0; i < p; ++i) {
    const double x = cv[i * 3], y = cv[i * 3 + 1], z = cv[i * 3 + 2];
    in_front[i] = z > 0;
    if (!in_front[i]) continue;
    const double u = k(0, 0) * x / z + k(0, 1) * y / z + k(0, 2);
    const double v = k(1, 1) * y / z + k(1, 2);
    out.in_frustum[i] = u >= 0 && u < camera.width && v >= 0 && v < camera.height;
  }
  Tensor z = select_rows(in_front, slice(cam, 1, 2, 3), Tensor::full({p, 1}, real(1)));
  Tensor xn = slice(cam, 1, 0, 1) / z;
  Tensor yn = slice(cam, 1, 1, 2) / z;
  const real inv = real(1) / kFeatureDownscale;
  Tensor u = xn * static_cast<real>(k(0, 0)) + yn * static_cast<real>(k(0, 1)) + static_cast<real>(k(0, 2));
  Tensor v = yn * static_cast<real>(k(1, 1)) + static_cast<real>(k(1, 2));
  Tensor coords = concat({(u + real(-0.5)) * inv, (v + real(-0.5)) * inv}, 1);
  out.values = select_rows(out.in_frustum, grid_sample_2d(features, coords), Tensor::zeros({p, c}));
  return out;
}

Encoder::Encoder(int channels, int hidden, Rng& rng) : channels_(channels) {
  layers_.emplace_back(3, hidden, 3, 2, ConvParams{2, 1}, rng);
  layers_.emplace_back(hidden, 2 * hidden, 3, 2, ConvParams{2, 1}, rng);
  layers_.emplace_back(2 * hidden, 2 * hidden, 3, 2, ConvParams{1, 1}, rng);
  layers_.emplace_back(2 * hidden, channels, 1, 2, ConvParams{1, 0}, rng);
}

Tensor Encoder::encode(const Tensor& image) const {
  if (image.ndim() != 3 || image.dim(2) != 3) {
    throw DimensionError("encode: image must be [H,W,3], got " + shape_str(image.shape()));
  }
  Tensor x = reshape(permute(image, {2, 0, 1}), {1, 3, image.dim(0), image.dim(1)});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i].forward(x);
    if (i + 1 < layers_.size()) x = relu(x);
  }
  return permute(reshape(x, {x.dim(1), x.dim(2), x.dim(3)}), {1, 2, 0});
}

void Encoder::collect(std::vector<NamedTensor>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(out, prefix + "conv" + std::to_string(i) + ".");
}

Tensor body_vertex_features(const SupportFrame& frame, const Tensor& vertices_obs) {
  return pixel_aligned(frame.features, frame.camera, vertices_obs).values;
}

DiffusionNet::DiffusionNet(int in_channels, int out_channels, Rng& rng) : in_(in_channels), out_(out_channels) {
  layers_.emplace_back(in_channels, out_channels, 1, 3, ConvParams{1, 0}, rng);
  layers_.emplace_back(out_channels, out_channels, 3, 3, ConvParams{1, 1}, rng);
  layers_.emplace_back(out_channels, out_channels, 3, 3, ConvParams{1, 1}, rng);
}

Tensor DiffusionNet::forward(const Tensor& volume) const {
  if (volume.ndim() != 4 || volume.dim(3) != in_) {
    throw DimensionError("diffusion: volume must be [D,H,W," + std::to_string(in_) + "], got " +
                         shape_str(volume.shape()));
  }
  const auto d = volume.dim(0), h = volume.dim(1), w = volume.dim(2);
  Tensor x = reshape(permute(volume, {3, 0, 1, 2}), {1, in_, d, h, w});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i].forward(x);
    if (i + 1 < layers_.size()) x = relu(x);
  }
  return permute(reshape(x, {out_, d, h, w}), {1, 2, 3, 0});
}

void DiffusionNet::collect(std::vector<NamedTensor>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(out, prefix + "conv" + std::to_string(i) + ".");
}

Tensor scatter_mean(const Tensor& vertex_features, const std::vector<Vec3>& canonical_vertices,
                    const GridSpec& grid) {
  const auto v = static_cast<std::int64_t>(canonical_vertices.size());
  if (vertex_features.ndim() != 2 || vertex_features.dim(0) != v) {
    throw DimensionError("scatter_mean: features " + shape_str(vertex_features.shape()) + " for " +
                         std::to_string(v) + " vertices");
  }
  const auto& res = grid.resolution;
  const int n[3] = {res[2], res[1], res[0]};  // nodes along x, y, z
  Index kept, cells;
  std::vector<real> count(static_cast<std::size_t>(grid.node_count()), real(0));
  for (std::int64_t i = 0; i < v; ++i) {
    std::int64_t idx[3];
    bool inside = true;
    for (int a = 0; a < 3; ++a) {
      const double g = (canonical_vertices[i][a] - grid.box.lo[a]) / (grid.box.hi[a] - grid.box.lo[a]) * (n[a] - 1);
      idx[a] = std::llround(g);
      inside = inside && idx[a] >= 0 && idx[a] < n[a];
    }
    if (!inside) continue;
    const std::int64_t cell = (idx[2] * res[1] + idx[1]) * res[2] + idx[0];
    kept.push_back(i);
    cells.push_back(cell);
    count[cell] += 1;
  }
  for (auto& c : count) c = c > 0 ? real(1) / c : real(0);
  const Tensor src = static_cast<std::int64_t>(kept.size()) == v ? vertex_features : index_select(vertex_features, kept);
  Tensor summed = index_add(src, cells, grid.node_count());
  Tensor mean = mul(summed, Tensor::from({grid.node_count(), 1}, std::move(count)));
  return reshape(mean, {res[0], res[1], res[2], vertex_features.dim(1)});
}

Tensor diffuse_to_canonical(const std::vector<Tensor>& vertex_features, const std::vector<Vec3>& canonical_vertices,
                            const GridSpec& grid, const DiffusionNet& net) {
  if (vertex_features.empty()) throw ContractError("diffuse_to_canonical: empty support set");
  Tensor stacked = vertex_features.size() == 1 ? vertex_features[0] : concat(vertex_features, 1);
  return net.forward(scatter_mean(stacked, canonical_vertices, grid));
}

}  // namespace anerf
