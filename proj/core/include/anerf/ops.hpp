#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "anerf/tensor.hpp"

// Differentiable operations. Every function records a graph node when an input
// requires gradients; shapes follow numpy broadcasting where noted.
namespace anerf {

using Index = std::vector<std::int64_t>;

// Elementwise binary ops with broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// Throws DomainError when any divisor is exactly zero.
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, real s);
Tensor add_scalar(const Tensor& x, real s);
Tensor neg(const Tensor& x);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, real s);
Tensor operator*(real s, const Tensor& a);
Tensor operator+(const Tensor& a, real s);
Tensor operator-(const Tensor& a);

// Elementwise unary ops.
Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
/// Throws DomainError for non-positive inputs.
Tensor log(const Tensor& x);
Tensor sin(const Tensor& x);
Tensor cos(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);

/// [n,k] x [k,m] -> [n,m]
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);
Tensor softmax(const Tensor& x, int axis);
/// Running sum along `axis`; the exclusive form starts at zero.
Tensor cumsum(const Tensor& x, int axis, bool exclusive = false);

Tensor reshape(const Tensor& x, Shape shape);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t end);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor broadcast_to(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);

/// Rows of `x` (axis 0) selected by `rows`.
Tensor index_select(const Tensor& x, const Index& rows);
/// Output with `out_rows` rows where row rows[i] accumulates x[i].
Tensor index_add(const Tensor& x, const Index& rows, std::int64_t out_rows);

struct ConvParams {
  int stride = 1;
  int padding = 0;
};

/// input [N,C,H,W], weight [O,C,kh,kw], bias [O] or undefined -> [N,O,H',W']
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, ConvParams params = {});
/// input [N,C,D,H,W], weight [O,C,kd,kh,kw], bias [O] or undefined -> [N,O,D',H',W']
Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, ConvParams params = {});

/// Axis-aligned box with grid nodes on its corners.
struct GridBox {
  std::array<real, 3> lo{};
  std::array<real, 3> hi{};
};

struct SampleResult {
  Tensor values;
  std::vector<std::uint8_t> inside;
};

/// Trilinear sampling of grid [D,H,W,C] (D along z, H along y, W along x) at
/// points [P,3]. Points outside the box receive `fill` (length C, or zeros if
/// empty) and no gradient. Differentiable w.r.t. grid and points.
SampleResult grid_sample_3d(const Tensor& grid, const Tensor& points, const GridBox& box,
                            const std::vector<real>& fill = {});

/// Bilinear sampling of map [H,W,C] at coords [P,2] given as (column, row) in
/// grid units. Coordinates are clamped to the border; the clamped direction
/// receives no gradient. Differentiable w.r.t. map and coords.
Tensor grid_sample_2d(const Tensor& map, const Tensor& coords);

/// Constant-mask blend: mask*a + (1-mask)*b, mask broadcast over trailing dims of a row.
Tensor select_rows(const std::vector<std::uint8_t>& mask, const Tensor& a, const Tensor& b);

}  // namespace anerf
