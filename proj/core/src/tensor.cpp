#include "anerf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace anerf {

namespace {
thread_local bool g_grad_enabled = true;
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::span<real> TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), real(0));
  return grad;
}

}  // namespace detail

namespace {

void validate_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), real(0), requires_grad); }

Tensor Tensor::full(Shape shape, real value, bool requires_grad) {
  validate_shape(shape);
  auto n = static_cast<std::size_t>(shape_numel(shape));
  return from(std::move(shape), std::vector<real>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<real> values, bool requires_grad) {
  validate_shape(shape);
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
    throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(real value, bool requires_grad) { return from({1}, {value}, requires_grad); }

Tensor Tensor::make_result(const char* name, Shape shape, std::vector<real> values,
                           const std::vector<Tensor>& inputs,
                           std::function<void(detail::TensorImpl& out)> backward) {
  Tensor out = from(std::move(shape), std::move(values));
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
  if (!any) return out;
  auto node = std::make_shared<detail::Node>();
  node->name = name;
  node->inputs.reserve(inputs.size());
  for (const auto& in : inputs) node->inputs.push_back(in.impl_);
  node->backward = std::move(backward);
  out.impl_->node = std::move(node);
  out.impl_->requires_grad = true;
  return out;
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::int64_t Tensor::dim(int axis) const {
  const int n = ndim();
  if (axis < 0) axis += n;
  if (axis < 0 || axis >= n) throw DimensionError("axis out of range for shape " + shape_str(shape()));
  return impl_->shape[static_cast<std::size_t>(axis)];
}

int Tensor::ndim() const { return static_cast<int>(impl_->shape.size()); }
std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

std::span<const real> Tensor::values() const { return impl_->data; }

std::span<real> Tensor::mutable_values() {
  if (!impl_->is_leaf()) throw ContractError("mutable_values() on a non-leaf tensor");
  return impl_->data;
}

real Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor with shape " + shape_str(shape()));
  return impl_->data[0];
}

real Tensor::at(std::initializer_list<std::int64_t> index) const {
  if (static_cast<int>(index.size()) != ndim()) throw DimensionError("index rank mismatch");
  std::int64_t flat = 0;
  std::size_t a = 0;
  for (auto i : index) {
    const auto d = impl_->shape[a++];
    if (i < 0 || i >= d) throw DimensionError("index out of range");
    flat = flat * d + i;
  }
  return impl_->data[static_cast<std::size_t>(flat)];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!impl_->is_leaf()) throw ContractError("requires_grad can only be set on leaves");
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return impl_->is_leaf(); }

Tensor Tensor::grad() const {
  if (impl_->grad.empty()) return zeros(shape());
  return from(shape(), impl_->grad);
}

std::span<const real> Tensor::grad_span() const { return impl_->grad; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const { return detach(); }

void Tensor::backward() const {
  if (numel() != 1) throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
  check_finite(*this, "loss");
  if (!impl_->requires_grad) return;

  // Iterative post-order DFS gives a topological order of the graph.
  // Owning pointers: releasing a node below must not free tensors still queued.
  std::vector<std::shared_ptr<detail::TensorImpl>> order;
  std::unordered_set<detail::TensorImpl*> visited;
  std::vector<std::pair<std::shared_ptr<detail::TensorImpl>, std::size_t>> stack;
  stack.emplace_back(impl_, 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    if (t->node && next < t->node->inputs.size()) {
      auto child = t->node->inputs[next++];
      if (child->requires_grad && visited.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
      continue;
    }
    order.push_back(t);
    stack.pop_back();
  }

  impl_->grad_buffer()[0] += real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* t = it->get();
    if (!t->node) continue;
    if (!t->grad.empty()) t->node->backward(*t);
    // Consume the graph: intermediates release history and gradient storage.
    t->node.reset();
    t->grad.clear();
    t->grad.shrink_to_fit();
    t->requires_grad = false;
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void check_finite(const Tensor& t, const std::string& what) {
  for (real v : t.values()) {
    if (!std::isfinite(v)) throw NumericError(what + " contains non-finite values");
  }
}

}  // namespace anerf
