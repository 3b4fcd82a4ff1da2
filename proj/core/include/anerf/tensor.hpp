#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "anerf/errors.hpp"

namespace anerf {

#ifdef ANERF_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl;

// One recorded operation. `backward` reads the output gradient and accumulates
// into the gradients of `inputs`.
struct Node {
  const char* name = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<real> data;
  std::vector<real> grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // null for leaves

  bool is_leaf() const { return node == nullptr; }
  std::span<real> grad_buffer();  // allocates zeros on first use
};

}  // namespace detail

/// Dense row-major tensor with reverse-mode differentiation.
///
/// A Tensor is a cheap handle; copies share storage. Operations on tensors
/// that require gradients record a node on a dynamic graph which `backward`
/// consumes exactly once.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<real> values, bool requires_grad = false);
  static Tensor scalar(real value, bool requires_grad = false);

  /// Builds an op output. `backward` is recorded only when gradients are
  /// enabled and at least one input requires them. This is the extension
  /// point for user-defined differentiable operations.
  static Tensor make_result(const char* name, Shape shape, std::vector<real> values,
                            const std::vector<Tensor>& inputs,
                            std::function<void(detail::TensorImpl& out)> backward);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(int axis) const;
  int ndim() const;
  std::int64_t numel() const;

  std::span<const real> values() const;
  /// Mutable view of the storage. Only valid for leaves.
  std::span<real> mutable_values();
  real item() const;
  real at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;

  /// Accumulated gradient; zeros when nothing has been accumulated.
  Tensor grad() const;
  std::span<const real> grad_span() const;  // may be empty
  bool has_grad() const;
  void zero_grad();

  /// Shares storage, drops graph history.
  Tensor detach() const;
  Tensor clone() const;

  /// Reverse pass from a scalar. Consumes the graph.
  void backward() const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Whether newly created op outputs record graph nodes on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Throws NumericError if any value is NaN or Inf.
void check_finite(const Tensor& t, const std::string& what);

}  // namespace anerf
