#include "anerf/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace anerf {

namespace {

using MatRM = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMapRM = Eigen::Map<const MatRM>;
using detail::TensorImpl;

// Eigen picks vectorized paths from pointer alignment, so products run on
// aligned copies and results do not depend on where a buffer happens to live.
MatRM aligned(const real* p, Eigen::Index rows, Eigen::Index cols) { return CMapRM(p, rows, cols); }

void store(real* dst, const MatRM& m) { std::copy(m.data(), m.data() + m.size(), dst); }

void accumulate(real* dst, const MatRM& m) {
  const real* src = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) dst[i] += src[i];
}

int normalize_axis(int axis, int ndim, const char* op) {
  if (axis < 0) axis += ndim;
  if (axis < 0 || axis >= ndim) {
    throw DimensionError(std::string(op) + ": axis out of range for rank " + std::to_string(ndim));
  }
  return axis;
}

struct Split3 {
  std::int64_t outer = 1, n = 1, inner = 1;
};

Split3 split_at(const Shape& s, int axis) {
  Split3 r;
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  r.n = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

TensorImpl& in(TensorImpl& out, std::size_t k) { return *out.node->inputs[k]; }

// ---------------------------------------------------------------- broadcasting

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t n = std::max(a.size(), b.size());
  Shape out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    const auto db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Maps a flat output index to the flat index of a broadcast input.
struct IndexMap {
  enum Kind { kIdentity, kScalar, kSuffix, kPrefix, kTable } kind = kIdentity;
  std::int64_t period = 1;
  std::vector<std::int64_t> table;

  std::int64_t operator()(std::int64_t i) const {
    switch (kind) {
      case kIdentity: return i;
      case kScalar: return 0;
      case kSuffix: return i % period;
      case kPrefix: return i / period;
      case kTable: return table[static_cast<std::size_t>(i)];
    }
    return 0;
  }
};

IndexMap make_index_map(const Shape& input, const Shape& out) {
  IndexMap m;
  const auto in_n = shape_numel(input);
  const auto out_n = shape_numel(out);
  if (input == out) return m;
  if (in_n == 1) {
    m.kind = IndexMap::kScalar;
    return m;
  }
  Shape padded(out.size() - input.size(), 1);
  padded.insert(padded.end(), input.begin(), input.end());
  const std::size_t r = out.size();
  // Leading ones followed by a suffix equal to the output's tail.
  std::size_t lead = 0;
  while (lead < r && padded[lead] == 1) ++lead;
  if (std::equal(padded.begin() + static_cast<std::ptrdiff_t>(lead), padded.end(),
                 out.begin() + static_cast<std::ptrdiff_t>(lead))) {
    m.kind = IndexMap::kSuffix;
    m.period = in_n;
    return m;
  }
  // A prefix equal to the output's head followed by trailing ones.
  std::size_t tail = r;
  while (tail > 0 && padded[tail - 1] == 1) --tail;
  if (std::equal(padded.begin(), padded.begin() + static_cast<std::ptrdiff_t>(tail), out.begin())) {
    m.kind = IndexMap::kPrefix;
    m.period = out_n / in_n;
    return m;
  }
  m.kind = IndexMap::kTable;
  std::vector<std::int64_t> in_stride(r, 0);
  std::int64_t acc = 1;
  for (std::size_t i = r; i-- > 0;) {
    in_stride[i] = padded[i] == 1 ? 0 : acc;
    acc *= padded[i];
  }
  m.table.resize(static_cast<std::size_t>(out_n));
  std::vector<std::int64_t> counter(r, 0);
  std::int64_t offset = 0;
  for (std::int64_t i = 0; i < out_n; ++i) {
    m.table[static_cast<std::size_t>(i)] = offset;
    for (std::size_t d = r; d-- > 0;) {
      ++counter[d];
      offset += in_stride[d];
      if (counter[d] < out[d]) break;
      offset -= in_stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return m;
}

// Visits (output index, a index, b index) with loops specialised for the
// common identity, scalar and suffix broadcasts.
template <class Body>
void for_each_pair(const IndexMap& ma, const IndexMap& mb, std::int64_t n, Body body) {
  using K = IndexMap::Kind;
  if (ma.kind == K::kIdentity && mb.kind == K::kIdentity) {
    for (std::int64_t i = 0; i < n; ++i) body(i, i, i);
  } else if (ma.kind == K::kIdentity && (mb.kind == K::kSuffix || mb.kind == K::kScalar)) {
    const auto p = mb.kind == K::kScalar ? std::int64_t(1) : mb.period;
    for (std::int64_t i = 0; i < n; i += p)
      for (std::int64_t j = 0; j < p; ++j) body(i + j, i + j, mb.kind == K::kScalar ? 0 : j);
  } else if (mb.kind == K::kIdentity && (ma.kind == K::kSuffix || ma.kind == K::kScalar)) {
    const auto p = ma.kind == K::kScalar ? std::int64_t(1) : ma.period;
    for (std::int64_t i = 0; i < n; i += p)
      for (std::int64_t j = 0; j < p; ++j) body(i + j, ma.kind == K::kScalar ? 0 : j, i + j);
  } else if (ma.kind == K::kIdentity && mb.kind == K::kPrefix) {
    const auto p = mb.period;
    for (std::int64_t i = 0, r = 0; i < n; i += p, ++r)
      for (std::int64_t j = 0; j < p; ++j) body(i + j, i + j, r);
  } else {
    for (std::int64_t i = 0; i < n; ++i) body(i, ma(i), mb(i));
  }
}

template <class F, class DA, class DB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  const auto n = shape_numel(out_shape);
  auto ma = make_index_map(a.shape(), out_shape);
  auto mb = make_index_map(b.shape(), out_shape);
  std::vector<real> out(static_cast<std::size_t>(n));
  const real* x = a.values().data();
  const real* y = b.values().data();
  for_each_pair(ma, mb, n, [&](std::int64_t i, std::int64_t ai, std::int64_t bi) { out[i] = f(x[ai], y[bi]); });
  return Tensor::make_result(name, std::move(out_shape), std::move(out), {a, b},
                             [ma = std::move(ma), mb = std::move(mb), da, db](TensorImpl& o) {
                               auto& ia = in(o, 0);
                               auto& ib = in(o, 1);
                               const real* x = ia.data.data();
                               const real* y = ib.data.data();
                               const real* z = o.data.data();
                               const real* g = o.grad.data();
                               const auto n = static_cast<std::int64_t>(o.data.size());
                               if (ia.requires_grad) {
                                 real* gx = ia.grad_buffer().data();
                                 for_each_pair(ma, mb, n, [&](std::int64_t i, std::int64_t ai, std::int64_t bi) {
                                   gx[ai] += g[i] * da(x[ai], y[bi], z[i]);
                                 });
                               }
                               if (ib.requires_grad) {
                                 real* gy = ib.grad_buffer().data();
                                 for_each_pair(ma, mb, n, [&](std::int64_t i, std::int64_t ai, std::int64_t bi) {
                                   gy[bi] += g[i] * db(x[ai], y[bi], z[i]);
                                 });
                               }
                             });
}

template <class F, class DF>
Tensor unary_op(const char* name, const Tensor& x, F f, DF df) {
  const auto n = x.numel();
  std::vector<real> out(static_cast<std::size_t>(n));
  const real* v = x.values().data();
  for (std::int64_t i = 0; i < n; ++i) out[i] = f(v[i]);
  return Tensor::make_result(name, x.shape(), std::move(out), {x}, [df](TensorImpl& o) {
    auto& ix = in(o, 0);
    real* gx = ix.grad_buffer().data();
    const real* v = ix.data.data();
    const real* z = o.data.data();
    const real* g = o.grad.data();
    const auto n = static_cast<std::int64_t>(o.data.size());
    for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i] * df(v[i], z[i]);
  });
}

real stable_softplus(real x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
real stable_sigmoid(real x) {
  if (x >= 0) return real(1) / (real(1) + std::exp(-x));
  const real e = std::exp(x);
  return e / (real(1) + e);
}

}  // namespace

// ------------------------------------------------------------------ elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](real x, real y) { return x + y; }, [](real, real, real) { return real(1); },
      [](real, real, real) { return real(1); });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](real x, real y) { return x - y; }, [](real, real, real) { return real(1); },
      [](real, real, real) { return real(-1); });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](real x, real y) { return x * y; }, [](real, real y, real) { return y; },
      [](real x, real, real) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (real v : b.values()) {
    if (v == real(0)) {
      throw DomainError("div: division by zero (divisor shape " + shape_str(b.shape()) + ")");
    }
  }
  return binary_op(
      "div", a, b, [](real x, real y) { return x / y; }, [](real, real y, real) { return real(1) / y; },
      [](real, real y, real z) { return -z / y; });
}

Tensor scale(const Tensor& x, real s) {
  return unary_op("scale", x, [s](real v) { return v * s; }, [s](real, real) { return s; });
}

Tensor add_scalar(const Tensor& x, real s) {
  return unary_op("add_scalar", x, [s](real v) { return v + s; }, [](real, real) { return real(1); });
}

Tensor neg(const Tensor& x) { return scale(x, real(-1)); }

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
Tensor operator*(const Tensor& a, real s) { return scale(a, s); }
Tensor operator*(real s, const Tensor& a) { return scale(a, s); }
Tensor operator+(const Tensor& a, real s) { return add_scalar(a, s); }
Tensor operator-(const Tensor& a) { return neg(a); }

Tensor relu(const Tensor& x) {
  return unary_op(
      "relu", x, [](real v) { return v > 0 ? v : real(0); }, [](real v, real) { return v > 0 ? real(1) : real(0); });
}

Tensor softplus(const Tensor& x) {
  return unary_op("softplus", x, stable_softplus, [](real v, real) { return stable_sigmoid(v); });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op("sigmoid", x, stable_sigmoid, [](real, real z) { return z * (real(1) - z); });
}

Tensor tanh(const Tensor& x) {
  return unary_op(
      "tanh", x, [](real v) { return std::tanh(v); }, [](real, real z) { return real(1) - z * z; });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      "exp", x, [](real v) { return std::exp(v); }, [](real, real z) { return z; });
}

Tensor log(const Tensor& x) {
  for (real v : x.values()) {
    if (!(v > real(0))) throw DomainError("log: non-positive input");
  }
  return unary_op(
      "log", x, [](real v) { return std::log(v); }, [](real v, real) { return real(1) / v; });
}

Tensor sin(const Tensor& x) {
  return unary_op(
      "sin", x, [](real v) { return std::sin(v); }, [](real v, real) { return std::cos(v); });
}

Tensor cos(const Tensor& x) {
  return unary_op(
      "cos", x, [](real v) { return std::cos(v); }, [](real v, real) { return -std::sin(v); });
}

Tensor abs(const Tensor& x) {
  return unary_op(
      "abs", x, [](real v) { return std::abs(v); },
      [](real v, real) { return v > 0 ? real(1) : (v < 0 ? real(-1) : real(0)); });
}

Tensor square(const Tensor& x) {
  return unary_op(
      "square", x, [](real v) { return v * v; }, [](real v, real) { return real(2) * v; });
}

// ----------------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const auto n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<real> out(static_cast<std::size_t>(n * m));
  store(out.data(), aligned(a.values().data(), n, k) * aligned(b.values().data(), k, m));
  return Tensor::make_result("matmul", {n, m}, std::move(out), {a, b}, [n, k, m](TensorImpl& o) {
    auto& ia = in(o, 0);
    auto& ib = in(o, 1);
    const MatRM g = aligned(o.grad.data(), n, m);
    if (ia.requires_grad) accumulate(ia.grad_buffer().data(), g * aligned(ib.data.data(), k, m).transpose());
    if (ib.requires_grad) accumulate(ib.grad_buffer().data(), aligned(ia.data.data(), n, k).transpose() * g);
  });
}

// ------------------------------------------------------------------- reductions

Tensor sum(const Tensor& x) {
  real s = 0;
  for (real v : x.values()) s += v;
  return Tensor::make_result("sum", {1}, {s}, {x}, [](TensorImpl& o) {
    auto& ix = in(o, 0);
    const real g = o.grad[0];
    for (auto& gx : ix.grad_buffer()) gx += g;
  });
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
  axis = normalize_axis(axis, x.ndim(), "sum");
  const auto sp = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[static_cast<std::size_t>(axis)] = 1;
  } else {
    out_shape.erase(out_shape.begin() + axis);
    if (out_shape.empty()) out_shape = {1};
  }
  std::vector<real> out(static_cast<std::size_t>(sp.outer * sp.inner), real(0));
  const real* v = x.values().data();
  for (std::int64_t o = 0; o < sp.outer; ++o)
    for (std::int64_t j = 0; j < sp.n; ++j)
      for (std::int64_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += v[(o * sp.n + j) * sp.inner + i];
  return Tensor::make_result("sum_axis", std::move(out_shape), std::move(out), {x}, [sp](TensorImpl& o) {
    real* gx = in(o, 0).grad_buffer().data();
    const real* g = o.grad.data();
    for (std::int64_t a = 0; a < sp.outer; ++a)
      for (std::int64_t j = 0; j < sp.n; ++j)
        for (std::int64_t i = 0; i < sp.inner; ++i) gx[(a * sp.n + j) * sp.inner + i] += g[a * sp.inner + i];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), real(1) / static_cast<real>(x.numel())); }

Tensor mean(const Tensor& x, int axis, bool keepdim) {
  const auto n = x.dim(axis);
  return scale(sum(x, axis, keepdim), real(1) / static_cast<real>(n));
}

Tensor softmax(const Tensor& x, int axis) {
  axis = normalize_axis(axis, x.ndim(), "softmax");
  const auto sp = split_at(x.shape(), axis);
  std::vector<real> out(static_cast<std::size_t>(x.numel()));
  const real* v = x.values().data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t i = 0; i < sp.inner; ++i) {
      const auto base = o * sp.n * sp.inner + i;
      real mx = v[base];
      for (std::int64_t j = 1; j < sp.n; ++j) mx = std::max(mx, v[base + j * sp.inner]);
      real s = 0;
      for (std::int64_t j = 0; j < sp.n; ++j) {
        const real e = std::exp(v[base + j * sp.inner] - mx);
        out[base + j * sp.inner] = e;
        s += e;
      }
      for (std::int64_t j = 0; j < sp.n; ++j) out[base + j * sp.inner] /= s;
    }
  }
  return Tensor::make_result("softmax", x.shape(), std::move(out), {x}, [sp](TensorImpl& o) {
    real* gx = in(o, 0).grad_buffer().data();
    const real* y = o.data.data();
    const real* g = o.grad.data();
    for (std::int64_t a = 0; a < sp.outer; ++a) {
      for (std::int64_t i = 0; i < sp.inner; ++i) {
        const auto base = a * sp.n * sp.inner + i;
        real dot = 0;
        for (std::int64_t j = 0; j < sp.n; ++j) dot += g[base + j * sp.inner] * y[base + j * sp.inner];
        for (std::int64_t j = 0; j < sp.n; ++j) {
          const auto k = base + j * sp.inner;
          gx[k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
}

Tensor cumsum(const Tensor& x, int axis, bool exclusive) {
  axis = normalize_axis(axis, x.ndim(), "cumsum");
  const auto sp = split_at(x.shape(), axis);
  std::vector<real> out(static_cast<std::size_t>(x.numel()));
  const real* v = x.values().data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t i = 0; i < sp.inner; ++i) {
      const auto base = o * sp.n * sp.inner + i;
      real acc = 0;
      for (std::int64_t j = 0; j < sp.n; ++j) {
        const auto k = base + j * sp.inner;
        if (exclusive) {
          out[k] = acc;
          acc += v[k];
        } else {
          acc += v[k];
          out[k] = acc;
        }
      }
    }
  }
  return Tensor::make_result("cumsum", x.shape(), std::move(out), {x}, [sp, exclusive](TensorImpl& o) {
    real* gx = in(o, 0).grad_buffer().data();
    const real* g = o.grad.data();
    for (std::int64_t a = 0; a < sp.outer; ++a) {
      for (std::int64_t i = 0; i < sp.inner; ++i) {
        const auto base = a * sp.n * sp.inner + i;
        real acc = 0;
        for (std::int64_t j = sp.n; j-- > 0;) {
          const auto k = base + j * sp.inner;
          if (exclusive) {
            gx[k] += acc;
            acc += g[k];
          } else {
            acc += g[k];
            gx[k] += acc;
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------- shape changes

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<real> out(x.values().begin(), x.values().end());
  return Tensor::make_result("reshape", std::move(shape), std::move(out), {x}, [](TensorImpl& o) {
    real* gx = in(o, 0).grad_buffer().data();
    for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
  });
}

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t end) {
  axis = normalize_axis(axis, x.ndim(), "slice");
  const auto sp = split_at(x.shape(), axis);
  if (start < 0 || end > sp.n || start >= end) {
    throw DimensionError("slice: range [" + std::to_string(start) + "," + std::to_string(end) +
                         ") invalid for shape " + shape_str(x.shape()));
  }
  const auto len = end - start;
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = len;
  std::vector<real> out(static_cast<std::size_t>(sp.outer * len * sp.inner));
  const real* v = x.values().data();
  for (std::int64_t o = 0; o < sp.outer; ++o)
    std::copy_n(v + (o * sp.n + start) * sp.inner, len * sp.inner, out.data() + o * len * sp.inner);
  return Tensor::make_result("slice", std::move(out_shape), std::move(out), {x}, [sp, start, len](TensorImpl& o) {
    real* gx = in(o, 0).grad_buffer().data();
    const real* g = o.grad.data();
    for (std::int64_t a = 0; a < sp.outer; ++a) {
      real* dst = gx + (a * sp.n + start) * sp.inner;
      const real* src = g + a * len * sp.inner;
      for (std::int64_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
    }
  });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  const int rank = xs.front().ndim();
  axis = normalize_axis(axis, rank, "concat");
  Shape out_shape = xs.front().shape();
  std::int64_t total = 0;
  std::vector<std::int64_t> widths;
  for (const auto& x : xs) {
    Shape s = x.shape();
    if (x.ndim() != rank) throw DimensionError("concat: rank mismatch");
    for (int d = 0; d < rank; ++d) {
      if (d != axis && s[static_cast<std::size_t>(d)] != out_shape[static_cast<std::size_t>(d)]) {
        throw DimensionError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(out_shape));
      }
    }
    widths.push_back(s[static_cast<std::size_t>(axis)]);
    total += widths.back();
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  const auto sp = split_at(out_shape, axis);
  std::vector<real> out(static_cast<std::size_t>(shape_numel(out_shape)));
  std::int64_t off = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const real* v = xs[k].values().data();
    const auto w = widths[k];
    for (std::int64_t o = 0; o < sp.outer; ++o)
      std::copy_n(v + o * w * sp.inner, w * sp.inner, out.data() + (o * total + off) * sp.inner);
    off += w;
  }
  return Tensor::make_result("concat", std::move(out_shape), std::move(out), xs, [sp, widths, total](TensorImpl& o) {
    std::int64_t off = 0;
    const real* g = o.grad.data();
    for (std::size_t k = 0; k < widths.size(); ++k) {
      auto& ik = in(o, k);
      const auto w = widths[k];
      if (ik.requires_grad) {
        real* gx = ik.grad_buffer().data();
        for (std::int64_t a = 0; a < sp.outer; ++a) {
          const real* src = g + (a * total + off) * sp.inner;
          real* dst = gx + a * w * sp.inner;
          for (std::int64_t i = 0; i < w * sp.inner; ++i) dst[i] += src[i];
        }
      }
      off += w;
    }
  });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (broadcast_shape(x.shape(), shape, "broadcast_to") != shape) {
    throw DimensionError("broadcast_to: cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  auto map = make_index_map(x.shape(), shape);
  const auto n = shape_numel(shape);
  std::vector<real> out(static_cast<std::size_t>(n));
  const real* v = x.values().data();
  for (std::int64_t i = 0; i < n; ++i) out[i] = v[map(i)];
  return Tensor::make_result("broadcast_to", shape, std::move(out), {x}, [map = std::move(map)](TensorImpl& o) {
    real* gx = in(o, 0).grad_buffer().data();
    const auto n = static_cast<std::int64_t>(o.grad.size());
    for (std::int64_t i = 0; i < n; ++i) gx[map(i)] += o.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const int r = x.ndim();
  if (static_cast<int>(perm.size()) != r) throw DimensionError("permute: wrong permutation length");
  std::vector<int> seen(perm);
  std::sort(seen.begin(), seen.end());
  for (int i = 0; i < r; ++i) {
    if (seen[i] != i) throw DimensionError("permute: invalid permutation");
  }
  const Shape& s = x.shape();
  std::vector<std::int64_t> stride(r, 1);
  for (int i = r - 2; i >= 0; --i) stride[i] = stride[i + 1] * s[i + 1];
  Shape out_shape(r);
  std::vector<std::int64_t> src_stride(r);
  for (int i = 0; i < r; ++i) {
    out_shape[i] = s[perm[i]];
    src_stride[i] = stride[perm[i]];
  }
  const auto n = x.numel();
  std::vector<std::int64_t> table(static_cast<std::size_t>(n));
  std::vector<std::int64_t> counter(r, 0);
  std::int64_t offset = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    table[i] = offset;
    for (int d = r; d-- > 0;) {
      ++counter[d];
      offset += src_stride[d];
      if (counter[d] < out_shape[d]) break;
      offset -= src_stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  std::vector<real> out(static_cast<std::size_t>(n));
  const real* v = x.values().data();
  for (std::int64_t i = 0; i < n; ++i) out[i] = v[table[i]];
  return Tensor::make_result("permute", std::move(out_shape), std::move(out), {x},
                             [table = std::move(table)](TensorImpl& o) {
                               real* gx = in(o, 0).grad_buffer().data();
                               for (std::size_t i = 0; i < table.size(); ++i) gx[table[i]] += o.grad[i];
                             });
}

Tensor index_select(const Tensor& x, const Index& rows) {
  if (x.ndim() < 1) throw DimensionError("index_select: rank 0");
  const auto n = x.dim(0);
  const auto row = x.numel() / n;
  for (auto r : rows) {
    if (r < 0 || r >= n) throw DimensionError("index_select: row " + std::to_string(r) + " out of range");
  }
  if (rows.empty()) throw DimensionError("index_select: empty selection");
  Shape out_shape = x.shape();
  out_shape[0] = static_cast<std::int64_t>(rows.size());
  std::vector<real> out(rows.size() * static_cast<std::size_t>(row));
  const real* v = x.values().data();
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(v + rows[i] * row, row, out.data() + i * row);
  return Tensor::make_result("index_select", std::move(out_shape), std::move(out), {x}, [rows, row](TensorImpl& o) {
    real* gx = in(o, 0).grad_buffer().data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const real* src = o.grad.data() + i * row;
      real* dst = gx + rows[i] * row;
      for (std::int64_t j = 0; j < row; ++j) dst[j] += src[j];
    }
  });
}

Tensor index_add(const Tensor& x, const Index& rows, std::int64_t out_rows) {
  if (x.ndim() < 1 || x.dim(0) != static_cast<std::int64_t>(rows.size())) {
    throw DimensionError("index_add: one index per input row required");
  }
  const auto row = x.numel() / x.dim(0);
  for (auto r : rows) {
    if (r < 0 || r >= out_rows) throw DimensionError("index_add: row " + std::to_string(r) + " out of range");
  }
  Shape out_shape = x.shape();
  out_shape[0] = out_rows;
  std::vector<real> out(static_cast<std::size_t>(out_rows * row), real(0));
  const real* v = x.values().data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    real* dst = out.data() + rows[i] * row;
    for (std::int64_t j = 0; j < row; ++j) dst[j] += v[i * row + j];
  }
  return Tensor::make_result("index_add", std::move(out_shape), std::move(out), {x}, [rows, row](TensorImpl& o) {
    real* gx = in(o, 0).grad_buffer().data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const real* src = o.grad.data() + rows[i] * row;
      for (std::int64_t j = 0; j < row; ++j) gx[i * row + j] += src[j];
    }
  });
}

// ------------------------------------------------------------------ convolution

namespace {

struct ConvGeometry {
  std::int64_t channels = 0, out_channels = 0;
  std::array<std::int64_t, 3> in{1, 1, 1}, k{1, 1, 1}, out{1, 1, 1}, stride{1, 1, 1}, pad{0, 0, 0};
  std::int64_t in_size() const { return in[0] * in[1] * in[2]; }
  std::int64_t out_size() const { return out[0] * out[1] * out[2]; }
  std::int64_t patch() const { return channels * k[0] * k[1] * k[2]; }
};

// Visits every (column row, output position, input offset) triple of the
// im2col matrix; input offset is -1 for padding.
template <class F>
void for_each_tap(const ConvGeometry& g, F f) {
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < g.channels; ++c)
    for (std::int64_t kd = 0; kd < g.k[0]; ++kd)
      for (std::int64_t kh = 0; kh < g.k[1]; ++kh)
        for (std::int64_t kw = 0; kw < g.k[2]; ++kw, ++row) {
          std::int64_t col = 0;
          for (std::int64_t od = 0; od < g.out[0]; ++od) {
            const auto id = od * g.stride[0] - g.pad[0] + kd;
            for (std::int64_t oh = 0; oh < g.out[1]; ++oh) {
              const auto ih = oh * g.stride[1] - g.pad[1] + kh;
              for (std::int64_t ow = 0; ow < g.out[2]; ++ow, ++col) {
                const auto iw = ow * g.stride[2] - g.pad[2] + kw;
                const bool ok = id >= 0 && id < g.in[0] && ih >= 0 && ih < g.in[1] && iw >= 0 && iw < g.in[2];
                f(row, col, ok ? ((c * g.in[0] + id) * g.in[1] + ih) * g.in[2] + iw : std::int64_t(-1));
              }
            }
          }
        }
}

Tensor conv_nd(const char* name, const Tensor& input, const Tensor& weight, const Tensor& bias, ConvParams p,
               int spatial) {
  const int rank = spatial + 2;
  if (input.ndim() != rank || weight.ndim() != rank || input.dim(1) != weight.dim(1)) {
    throw DimensionError(std::string(name) + ": incompatible input " + shape_str(input.shape()) + " and weight " +
                         shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != weight.dim(0))) {
    throw DimensionError(std::string(name) + ": bias shape " + shape_str(bias.shape()));
  }
  if (p.stride < 1 || p.padding < 0) throw DimensionError(std::string(name) + ": invalid stride/padding");
  ConvGeometry g;
  g.channels = input.dim(1);
  g.out_channels = weight.dim(0);
  const int first = 3 - spatial;
  for (int s = 0; s < spatial; ++s) {
    g.in[first + s] = input.dim(2 + s);
    g.k[first + s] = weight.dim(2 + s);
    g.stride[first + s] = p.stride;
    g.pad[first + s] = p.padding;
    const auto span = g.in[first + s] + 2 * p.padding - g.k[first + s];
    if (span < 0) throw DimensionError(std::string(name) + ": kernel larger than padded input");
    g.out[first + s] = span / p.stride + 1;
  }
  const auto batch = input.dim(0);
  const auto cols = g.out_size();
  const auto patch = g.patch();

  Shape out_shape{batch, g.out_channels};
  for (int s = 0; s < spatial; ++s) out_shape.push_back(g.out[first + s]);

  // Column matrices are kept for the weight gradient.
  auto col_store = std::make_shared<std::vector<real>>(static_cast<std::size_t>(batch * patch * cols));
  std::vector<real> out(static_cast<std::size_t>(batch * g.out_channels * cols));
  const real* x = input.values().data();
  const MatRM w = aligned(weight.values().data(), g.out_channels, patch);
  for (std::int64_t b = 0; b < batch; ++b) {
    real* col = col_store->data() + b * patch * cols;
    const real* xb = x + b * g.channels * g.in_size();
    for_each_tap(g, [&](std::int64_t r, std::int64_t c, std::int64_t src) { col[r * cols + c] = src < 0 ? 0 : xb[src]; });
    real* y = out.data() + b * g.out_channels * cols;
    store(y, w * aligned(col, patch, cols));
    if (bias.defined()) {
      for (std::int64_t o = 0; o < g.out_channels; ++o)
        for (std::int64_t c = 0; c < cols; ++c) y[o * cols + c] += bias.values()[o];
    }
  }
  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result(name, std::move(out_shape), std::move(out), inputs,
                             [g, batch, cols, patch, col_store](TensorImpl& o) {
                               auto& ix = in(o, 0);
                               auto& iw = in(o, 1);
                               const bool has_bias = o.node->inputs.size() > 2;
                               const MatRM w = aligned(iw.data.data(), g.out_channels, patch);
                               MatRM dcol;
                               for (std::int64_t b = 0; b < batch; ++b) {
                                 const real* gyp = o.grad.data() + b * g.out_channels * cols;
                                 const MatRM gy = aligned(gyp, g.out_channels, cols);
                                 const real* col = col_store->data() + b * patch * cols;
                                 if (iw.requires_grad) {
                                   accumulate(iw.grad_buffer().data(), gy * aligned(col, patch, cols).transpose());
                                 }
                                 if (has_bias && in(o, 2).requires_grad) {
                                   real* gb = in(o, 2).grad_buffer().data();
                                   for (std::int64_t c = 0; c < g.out_channels; ++c) {
                                     real acc = 0;
                                     for (std::int64_t j = 0; j < cols; ++j) acc += gyp[c * cols + j];
                                     gb[c] += acc;
                                   }
                                 }
                                 if (ix.requires_grad) {
                                   dcol.noalias() = w.transpose() * gy;
                                   real* gx = ix.grad_buffer().data() + b * g.channels * g.in_size();
                                   for_each_tap(g, [&](std::int64_t r, std::int64_t c, std::int64_t dst) {
                                     if (dst >= 0) gx[dst] += dcol(r, c);
                                   });
                                 }
                               }
                             });
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, ConvParams params) {
  return conv_nd("conv2d", input, weight, bias, params, 2);
}

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, ConvParams params) {
  return conv_nd("conv3d", input, weight, bias, params, 3);
}

// --------------------------------------------------------------------- samplers

SampleResult grid_sample_3d(const Tensor& grid, const Tensor& points, const GridBox& box,
                            const std::vector<real>& fill) {
  if (grid.ndim() != 4 || points.ndim() != 2 || points.dim(1) != 3) {
    throw DimensionError("grid_sample_3d: grid " + shape_str(grid.shape()) + ", points " + shape_str(points.shape()));
  }
  const std::array<std::int64_t, 3> size{grid.dim(2), grid.dim(1), grid.dim(0)};  // x, y, z
  const auto channels = grid.dim(3);
  for (auto s : size) {
    if (s < 2) throw DimensionError("grid_sample_3d: every grid axis needs at least two nodes");
  }
  if (!fill.empty() && static_cast<std::int64_t>(fill.size()) != channels) {
    throw DimensionError("grid_sample_3d: fill length must equal channel count");
  }
  const auto count = points.dim(0);
  std::array<real, 3> to_grid{};
  for (int a = 0; a < 3; ++a) to_grid[a] = static_cast<real>(size[a] - 1) / (box.hi[a] - box.lo[a]);

  // Per point: base corner offset and fractional position; inside flag.
  struct Cell {
    std::array<std::int64_t, 3> i0;
    std::array<real, 3> t;
  };
  auto cells = std::make_shared<std::vector<Cell>>(static_cast<std::size_t>(count));
  SampleResult result;
  result.inside.assign(static_cast<std::size_t>(count), 0);
  std::vector<real> out(static_cast<std::size_t>(count * channels), real(0));
  const real* p = points.values().data();
  const real* gv = grid.values().data();
  const std::int64_t sx = channels, sy = size[0] * channels, sz = size[1] * size[0] * channels;
  for (std::int64_t n = 0; n < count; ++n) {
    bool ok = true;
    Cell cell{};
    for (int a = 0; a < 3; ++a) {
      const real f = (p[n * 3 + a] - box.lo[a]) * to_grid[a];
      if (!(f >= 0 && f <= static_cast<real>(size[a] - 1))) {
        ok = false;
        break;
      }
      auto i0 = static_cast<std::int64_t>(std::floor(f));
      i0 = std::min(i0, size[a] - 2);
      cell.i0[a] = i0;
      cell.t[a] = f - static_cast<real>(i0);
    }
    real* dst = out.data() + n * channels;
    if (!ok) {
      if (!fill.empty()) std::copy(fill.begin(), fill.end(), dst);
      continue;
    }
    result.inside[n] = 1;
    (*cells)[n] = cell;
    const real* base = gv + cell.i0[2] * sz + cell.i0[1] * sy + cell.i0[0] * sx;
    for (int corner = 0; corner < 8; ++corner) {
      const int bx = corner & 1, by = (corner >> 1) & 1, bz = (corner >> 2) & 1;
      const real w = (bx ? cell.t[0] : 1 - cell.t[0]) * (by ? cell.t[1] : 1 - cell.t[1]) *
                     (bz ? cell.t[2] : 1 - cell.t[2]);
      const real* src = base + bz * sz + by * sy + bx * sx;
      for (std::int64_t c = 0; c < channels; ++c) dst[c] += w * src[c];
    }
  }
  result.values = Tensor::make_result(
      "grid_sample_3d", {count, channels}, std::move(out), {grid, points},
      [cells, inside = result.inside, channels, sx, sy, sz, to_grid](TensorImpl& o) {
        auto& ig = in(o, 0);
        auto& ip = in(o, 1);
        const real* gv = ig.data.data();
        real* gg = ig.requires_grad ? ig.grad_buffer().data() : nullptr;
        real* gp = ip.requires_grad ? ip.grad_buffer().data() : nullptr;
        const auto count = static_cast<std::int64_t>(inside.size());
        for (std::int64_t n = 0; n < count; ++n) {
          if (!inside[n]) continue;
          const auto& cell = (*cells)[n];
          const real* g = o.grad.data() + n * channels;
          const auto off = cell.i0[2] * sz + cell.i0[1] * sy + cell.i0[0] * sx;
          const auto& t = cell.t;
          std::array<real, 3> dpos{0, 0, 0};
          for (int corner = 0; corner < 8; ++corner) {
            const int bx = corner & 1, by = (corner >> 1) & 1, bz = (corner >> 2) & 1;
            const real wx = bx ? t[0] : 1 - t[0], wy = by ? t[1] : 1 - t[1], wz = bz ? t[2] : 1 - t[2];
            const auto coff = off + bz * sz + by * sy + bx * sx;
            if (gg) {
              const real w = wx * wy * wz;
              for (std::int64_t c = 0; c < channels; ++c) gg[coff + c] += w * g[c];
            }
            if (gp) {
              real dot = 0;
              for (std::int64_t c = 0; c < channels; ++c) dot += g[c] * gv[coff + c];
              dpos[0] += (bx ? 1 : -1) * wy * wz * dot;
              dpos[1] += (by ? 1 : -1) * wx * wz * dot;
              dpos[2] += (bz ? 1 : -1) * wx * wy * dot;
            }
          }
          if (gp) {
            for (int a = 0; a < 3; ++a) gp[n * 3 + a] += dpos[a] * to_grid[a];
          }
        }
      });
  return result;
}

Tensor grid_sample_2d(const Tensor& map, const Tensor& coords) {
  if (map.ndim() != 3 || coords.ndim() != 2 || coords.dim(1) != 2) {
    throw DimensionError("grid_sample_2d: map " + shape_str(map.shape()) + ", coords " + shape_str(coords.shape()));
  }
  const auto height = map.dim(0), width = map.dim(1), channels = map.dim(2);
  const auto count = coords.dim(0);
  struct Cell {
    std::int64_t x0, y0, x1, y1;
    real tx, ty;
    bool clamp_x, clamp_y;
  };
  auto cells = std::make_shared<std::vector<Cell>>(static_cast<std::size_t>(count));
  std::vector<real> out(static_cast<std::size_t>(count * channels), real(0));
  const real* cv = coords.values().data();
  const real* mv = map.values().data();
  auto axis_cell = [](real f, std::int64_t size, std::int64_t& i0, std::int64_t& i1, real& t, bool& clamped) {
    const real hi = static_cast<real>(size - 1);
    clamped = !(f >= 0 && f <= hi);
    f = std::clamp(f, real(0), hi);
    if (size == 1) {
      i0 = i1 = 0;
      t = 0;
      return;
    }
    i0 = std::min(static_cast<std::int64_t>(std::floor(f)), size - 2);
    i1 = i0 + 1;
    t = f - static_cast<real>(i0);
  };
  for (std::int64_t n = 0; n < count; ++n) {
    Cell c{};
    axis_cell(cv[n * 2 + 0], width, c.x0, c.x1, c.tx, c.clamp_x);
    axis_cell(cv[n * 2 + 1], height, c.y0, c.y1, c.ty, c.clamp_y);
    (*cells)[n] = c;
    real* dst = out.data() + n * channels;
    const real w00 = (1 - c.tx) * (1 - c.ty), w10 = c.tx * (1 - c.ty), w01 = (1 - c.tx) * c.ty, w11 = c.tx * c.ty;
    const real* p00 = mv + (c.y0 * width + c.x0) * channels;
    const real* p10 = mv + (c.y0 * width + c.x1) * channels;
    const real* p01 = mv + (c.y1 * width + c.x0) * channels;
    const real* p11 = mv + (c.y1 * width + c.x1) * channels;
    for (std::int64_t k = 0; k < channels; ++k) dst[k] = w00 * p00[k] + w10 * p10[k] + w01 * p01[k] + w11 * p11[k];
  }
  return Tensor::make_result("grid_sample_2d", {count, channels}, std::move(out), {map, coords},
                             [cells, width, channels](TensorImpl& o) {
                               auto& im = in(o, 0);
                               auto& ic = in(o, 1);
                               const real* mv = im.data.data();
                               real* gm = im.requires_grad ? im.grad_buffer().data() : nullptr;
                               real* gc = ic.requires_grad ? ic.grad_buffer().data() : nullptr;
                               for (std::size_t n = 0; n < cells->size(); ++n) {
                                 const auto& c = (*cells)[n];
                                 const real* g = o.grad.data() + n * channels;
                                 const auto o00 = (c.y0 * width + c.x0) * channels;
                                 const auto o10 = (c.y0 * width + c.x1) * channels;
                                 const auto o01 = (c.y1 * width + c.x0) * channels;
                                 const auto o11 = (c.y1 * width + c.x1) * channels;
                                 if (gm) {
                                   const real w00 = (1 - c.tx) * (1 - c.ty), w10 = c.tx * (1 - c.ty);
                                   const real w01 = (1 - c.tx) * c.ty, w11 = c.tx * c.ty;
                                   for (std::int64_t k = 0; k < channels; ++k) {
                                     gm[o00 + k] += w00 * g[k];
                                     gm[o10 + k] += w10 * g[k];
                                     gm[o01 + k] += w01 * g[k];
                                     gm[o11 + k] += w11 * g[k];
                                   }
                                 }
                                 if (gc) {
                                   real dx = 0, dy = 0;
                                   for (std::int64_t k = 0; k < channels; ++k) {
                                     const real d_top = mv[o10 + k] - mv[o00 + k];
                                     const real d_bot = mv[o11 + k] - mv[o01 + k];
                                     const real d_left = mv[o01 + k] - mv[o00 + k];
                                     const real d_right = mv[o11 + k] - mv[o10 + k];
                                     dx += g[k] * ((1 - c.ty) * d_top + c.ty * d_bot);
                                     dy += g[k] * ((1 - c.tx) * d_left + c.tx * d_right);
                                   }
                                   if (!c.clamp_x && c.x1 != c.x0) gc[n * 2 + 0] += dx;
                                   if (!c.clamp_y && c.y1 != c.y0) gc[n * 2 + 1] += dy;
                                 }
                               }
                             });
}

Tensor select_rows(const std::vector<std::uint8_t>& mask, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.ndim() < 1 || a.dim(0) != static_cast<std::int64_t>(mask.size())) {
    throw DimensionError("select_rows: shapes " + shape_str(a.shape()) + ", " + shape_str(b.shape()));
  }
  Shape ms(static_cast<std::size_t>(a.ndim()), 1);
  ms[0] = a.dim(0);
  std::vector<real> m(mask.size()), inv(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    m[i] = mask[i] ? real(1) : real(0);
    inv[i] = real(1) - m[i];
  }
  return mul(a, Tensor::from(ms, std::move(m))) + mul(b, Tensor::from(ms, std::move(inv)));
}

}  // namespace anerf
