#include <gtest/gtest.h>

#include <anerf/features.hpp>
#include <anerf/gradcheck.hpp>
#include <cmath>
#include <nlohmann/json.hpp>

#include "test_util.hpp"

using namespace anerf;
using anerf::testing::max_abs_diff;
using anerf::testing::random_tensor;

namespace {

Camera test_camera() { return look_at({0.3, -0.2, 3.0}, {0, 0, 0}, {0, 1, 0}, 40.0, 32, 24); }

// Scalar pinhole projection straight from the definitions.
std::array<double, 3> project_oracle(const Camera& c, const Vec3& x) {
  double cam[3];
  for (int i = 0; i < 3; ++i) {
    cam[i] = c.translation[i];
    for (int j = 0; j < 3; ++j) cam[i] += c.rotation(i, j) * x[j];
  }
  const double u = c.intrinsics(0, 0) * cam[0] / cam[2] + c.intrinsics(0, 1) * cam[1] / cam[2] + c.intrinsics(0, 2);
  const double v = c.intrinsics(1, 1) * cam[1] / cam[2] + c.intrinsics(1, 2);
  return {u, v, cam[2]};
}

// Bilinear lookup with border clamping, (column, row) in feature cells.
std::vector<double> bilinear_oracle(const Tensor& map, double fx, double fy) {
  const auto h = map.dim(0), w = map.dim(1), c = map.dim(2);
  fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
  fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
  const auto x0 = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(fx)), w - 2);
  const auto y0 = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(fy)), h - 2);
  const double ax = fx - x0, ay = fy - y0;
  std::vector<double> out(static_cast<std::size_t>(c), 0.0);
  const auto v = map.values();
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx) {
      const double wt = (dx ? ax : 1 - ax) * (dy ? ay : 1 - ay);
      for (std::int64_t k = 0; k < c; ++k) out[k] += wt * v[((y0 + dy) * w + x0 + dx) * c + k];
    }
  return out;
}

// Point on the ray through pixel coordinates (u, v) at camera depth z.
Vec3 unproject(const Camera& c, double u, double v, double z) {
  const Vec3 xc = z * (c.intrinsics.inverse() * Vec3(u, v, 1.0));
  return c.rotation.transpose() * (xc - c.translation);
}

Tensor points_tensor(const std::vector<Vec3>& pts) {
  std::vector<real> v;
  for (const auto& p : pts) v.insert(v.end(), {p.x(), p.y(), p.z()});
  return Tensor::from({static_cast<std::int64_t>(pts.size()), 3}, std::move(v));
}

}  // namespace

TEST(Camera, LookAtGeometry) {
  const Camera c = test_camera();
  c.validate();
  EXPECT_LT((c.center() - Vec3(0.3, -0.2, 3.0)).norm(), 1e-12);
  const auto p = project(c, Vec3::Zero());
  EXPECT_NEAR(p.u, 16.0, 1e-12);
  EXPECT_NEAR(p.v, 12.0, 1e-12);
  EXPECT_TRUE(p.in_frame);
  // Image y points down: a point above the target projects to a smaller row.
  EXPECT_LT(project(c, Vec3(0, 0.3, 0)).v, p.v);
}

TEST(Camera, ProjectMatchesScalarOracle) {
  const Camera c = test_camera();
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const Vec3 x(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const auto p = project(c, x);
    const auto o = project_oracle(c, x);
    EXPECT_NEAR(p.u, o[0], 1e-12);
    EXPECT_NEAR(p.v, o[1], 1e-12);
    EXPECT_NEAR(p.depth, o[2], 1e-12);
  }
}

TEST(Camera, BehindIsNotInFrame) {
  const Camera c = test_camera();
  EXPECT_FALSE(project(c, Vec3(0.6, -0.4, 6.0)).in_frame);
}

TEST(Camera, ValidateRejectsNonRotation) {
  Camera c = test_camera();
  c.rotation(0, 0) *= 2;
  EXPECT_THROW(c.validate(), ContractError);
}

TEST(Camera, JsonRoundTrip) {
  const Camera c = test_camera();
  const Camera d = nlohmann::json(c).get<Camera>();
  EXPECT_EQ(c.intrinsics, d.intrinsics);
  EXPECT_EQ(c.rotation, d.rotation);
  EXPECT_EQ(c.translation, d.translation);
  EXPECT_EQ(c.width, d.width);
  EXPECT_EQ(c.height, d.height);
}

TEST(PixelAligned, FeatureNodeIdentity) {
  const Camera c = test_camera();
  Rng rng(1);
  const Tensor map = random_tensor({6, 8, 5}, rng);
  // Feature cell (row 2, col 3) is centred on pixel index (8, 12).
  const Vec3 x = unproject(c, 12.5, 8.5, 2.7);
  const auto f = pixel_aligned(map, c, points_tensor({x}));
  ASSERT_TRUE(f.in_frustum[0]);
  for (int k = 0; k < 5; ++k) EXPECT_NEAR(f.values.at({0, k}), map.at({2, 3, k}), 1e-12);
}

TEST(PixelAligned, MatchesProjectionAndBilinearOracle) {
  const Camera c = test_camera();
  Rng rng(2);
  const Tensor map = random_tensor({6, 8, 4}, rng);
  std::vector<Vec3> pts;
  for (int i = 0; i < 40; ++i) pts.push_back(unproject(c, rng.uniform(0, 32), rng.uniform(0, 24), rng.uniform(1, 5)));
  const auto f = pixel_aligned(map, c, points_tensor(pts));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto o = project_oracle(c, pts[i]);
    const auto expect = bilinear_oracle(map, feature_coord(o[0]), feature_coord(o[1]));
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(f.values.at({static_cast<std::int64_t>(i), k}), expect[k], 1e-12);
  }
}

TEST(PixelAligned, OutsideFrustumIsZero) {
  const Camera c = test_camera();
  Rng rng(4);
  const Tensor map = random_tensor({6, 8, 3}, rng, 0.5, 1.0);
  const std::vector<Vec3> pts = {unproject(c, 10, 10, -2.0), unproject(c, 40, 10, 3.0), unproject(c, 10, -1, 3.0),
                                 unproject(c, 10, 10, 3.0)};
  const auto f = pixel_aligned(map, c, points_tensor(pts));
  EXPECT_FALSE(f.in_frustum[0]);
  EXPECT_FALSE(f.in_frustum[1]);
  EXPECT_FALSE(f.in_frustum[2]);
  EXPECT_TRUE(f.in_frustum[3]);
  for (std::int64_t i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) EXPECT_EQ(f.values.at({i, k}), 0.0);
  EXPECT_GT(f.values.at({3, 0}), 0.0);
}

TEST(PixelAligned, PrincipalPointShiftMatchesShiftedMap) {
  const Camera c = test_camera();
  Camera shifted = c;
  shifted.intrinsics(0, 2) += kFeatureDownscale;
  shifted.width += kFeatureDownscale;
  Rng rng(5);
  const Tensor map = random_tensor({6, 8, 3}, rng);
  const Tensor padded = concat({Tensor::zeros({6, 1, 3}), map}, 1);
  std::vector<Vec3> pts;
  for (int i = 0; i < 30; ++i) pts.push_back(unproject(c, rng.uniform(2, 30), rng.uniform(0, 24), rng.uniform(1, 5)));
  const auto a = pixel_aligned(map, c, points_tensor(pts));
  const auto b = pixel_aligned(padded, shifted, points_tensor(pts));
  EXPECT_LT(max_abs_diff(a.values.values(), b.values.values()), 1e-12);
}

TEST(PixelAligned, GradCheck) {
  const Camera c = test_camera();
  Rng rng(6);
  const Tensor map = random_tensor({6, 8, 3}, rng);
  std::vector<Vec3> pts;
  for (int i = 0; i < 6; ++i) pts.push_back(unproject(c, rng.uniform(3, 29), rng.uniform(3, 21), rng.uniform(1, 5)));
  const Tensor w = random_tensor({6, 3}, rng);
  const auto report = grad_check(
      [&](const std::vector<Tensor>& in) { return sum(pixel_aligned(in[0], c, in[1]).values * w); },
      {map, points_tensor(pts)});
  EXPECT_TRUE(report.passed) << report.worst;
}

TEST(Encoder, OutputShape) {
  Rng rng(0);
  const Encoder e(7, 4, rng);
  Rng img(1);
  EXPECT_EQ(e.encode(random_tensor({32, 32, 3}, img, 0, 1)).shape(), (Shape{8, 8, 7}));
  EXPECT_EQ(e.encode(random_tensor({13, 10, 3}, img, 0, 1)).shape(), (Shape{4, 3, 7}));
  EXPECT_THROW(e.encode(Tensor::zeros({8, 8, 4})), DimensionError);
}

TEST(Encoder, ZeroImageGivesUniformFeatures) {
  Rng rng(0);
  const Encoder e(5, 4, rng);
  const Tensor f = e.encode(Tensor::zeros({32, 32, 3}));
  // Away from the zero padding every cell sees the same neighbourhood.
  for (std::int64_t r = 2; r < 6; ++r)
    for (std::int64_t c = 2; c < 6; ++c)
      for (std::int64_t k = 0; k < 5; ++k) EXPECT_EQ(f.at({r, c, k}), f.at({2, 2, k}));
}

TEST(Encoder, DeterministicInSeed) {
  Rng a(9), b(9), img(2);
  const Encoder ea(6, 4, a), eb(6, 4, b);
  const Tensor x = random_tensor({16, 12, 3}, img, 0, 1);
  const Tensor fa = ea.encode(x), fb = eb.encode(x);
  EXPECT_EQ(max_abs_diff(fa.values(), fb.values()), 0.0);
}

TEST(Encoder, LocalReceptiveField) {
  Rng rng(0), img(3);
  const Encoder e(4, 4, rng);
  Tensor x = random_tensor({32, 32, 3}, img, 0, 1);
  const Tensor before = e.encode(x);
  x.mutable_values()[0] += 0.5;  // pixel (0, 0)
  const Tensor after = e.encode(x);
  EXPECT_NE(before.at({0, 0, 0}), after.at({0, 0, 0}));
  // A cell four or more cells away sees none of pixel (0, 0).
  for (std::int64_t r = 4; r < 8; ++r)
    for (std::int64_t c = 0; c < 8; ++c)
      for (std::int64_t k = 0; k < 4; ++k) EXPECT_EQ(before.at({r, c, k}), after.at({r, c, k}));
}

TEST(Encoder, GradCheck) {
  Rng rng(0), img(4);
  const Encoder e(3, 2, rng);
  const Tensor x = random_tensor({8, 8, 3}, img, 0, 1);
  const Tensor w = random_tensor({2, 2, 3}, img);
  std::vector<NamedTensor> params;
  e.collect(params, "");
  std::vector<Tensor> inputs = {x};
  for (auto& p : params) inputs.push_back(p.value);
  const auto report = grad_check([&](const std::vector<Tensor>& in) { return sum(e.encode(in[0]) * w); }, inputs);
  EXPECT_TRUE(report.passed) << report.worst;
}

TEST(ScatterMean, AveragesIntoNearestNode) {
  const GridSpec grid{GridBox{{0, 0, 0}, {1, 1, 1}}, {2, 3, 3}};
  // Nodes along x and y at 0, 0.5, 1; along z at 0 and 1.
  const std::vector<Vec3> verts = {{0.02, 0.49, 0.1}, {0.1, 0.55, 0.2}, {0.9, 0.9, 0.9}, {1.6, 0, 0}};
  const Tensor f = Tensor::from({4, 2}, {1, 2, 3, 4, 5, 6, 100, 100});
  const Tensor g = scatter_mean(f, verts, grid);
  ASSERT_EQ(g.shape(), (Shape{2, 3, 3, 2}));
  EXPECT_EQ(g.at({0, 1, 0, 0}), 2.0);
  EXPECT_EQ(g.at({0, 1, 0, 1}), 3.0);
  EXPECT_EQ(g.at({1, 2, 2, 0}), 5.0);
  real total = 0;
  for (real v : g.values()) total += v;
  EXPECT_EQ(total, 2 + 3 + 5 + 6);  // the vertex outside the box is dropped
}

TEST(ScatterMean, VertexOrderInvariant) {
  const GridSpec grid{GridBox{{-1, -1, -1}, {1, 1, 1}}, {5, 5, 5}};
  Rng rng(7);
  std::vector<Vec3> verts;
  for (int i = 0; i < 60; ++i) verts.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  const Tensor f = random_tensor({60, 3}, rng);
  Index perm(60);
  for (int i = 0; i < 60; ++i) perm[i] = (i * 37) % 60;
  std::vector<Vec3> pverts;
  for (auto i : perm) pverts.push_back(verts[static_cast<std::size_t>(i)]);
  const Tensor a = scatter_mean(f, verts, grid);
  const Tensor b = scatter_mean(index_select(f, perm), pverts, grid);
  EXPECT_LT(max_abs_diff(a.values(), b.values()), 1e-14);
}

TEST(Diffusion, ShapeAndEmptySupport) {
  Rng rng(0);
  const DiffusionNet net(6, 4, rng);
  const GridSpec grid{GridBox{{-1, -1, -1}, {1, 1, 1}}, {4, 5, 6}};
  const std::vector<Vec3> verts = {{0, 0, 0}, {0.5, 0.5, 0.5}};
  Rng f(1);
  const Tensor v = diffuse_to_canonical({random_tensor({2, 3}, f), random_tensor({2, 3}, f)}, verts, grid, net);
  EXPECT_EQ(v.shape(), (Shape{4, 5, 6, 4}));
  EXPECT_THROW(diffuse_to_canonical({}, verts, grid, net), ContractError);
  EXPECT_THROW(net.forward(Tensor::zeros({4, 4, 4, 5})), DimensionError);
}
