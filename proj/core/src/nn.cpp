#include "anerf/nn.hpp"

#include <cmath>

namespace anerf {

namespace {

Tensor uniform_tensor(Shape shape, real bound, Rng& rng) {
  std::vector<real> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<real>(rng.uniform(-bound, bound));
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

std::int64_t ParameterGroup::numel() const {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.value.numel();
  return n;
}

void ParameterGroup::zero_grad() {
  for (auto& p : params) p.value.zero_grad();
}

real ParameterGroup::grad_norm() const {
  real s = 0;
  for (const auto& p : params)
    for (real g : p.value.grad_span()) s += g * g;
  return std::sqrt(s);
}

Linear::Linear(std::int64_t in, std::int64_t out, Rng& rng, real gain) {
  // He-uniform for ReLU stacks.
  weight_ = uniform_tensor({in, out}, gain * std::sqrt(real(6) / static_cast<real>(in)), rng);
  bias_ = Tensor::zeros({out}, true);
}

Tensor Linear::forward(const Tensor& x) const { return matmul(x, weight_) + bias_; }

void Linear::collect(std::vector<NamedTensor>& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight_});
  out.push_back({prefix + ".bias", bias_});
}

void Linear::zero_init() {
  for (auto& v : weight_.mutable_values()) v = 0;
  for (auto& v : bias_.mutable_values()) v = 0;
}

Mlp::Mlp(std::int64_t in, std::int64_t width, std::int64_t out, int depth, Rng& rng) {
  if (depth < 1) throw ContractError("Mlp: depth must be at least 1");
  std::int64_t prev = in;
  for (int i = 0; i < depth; ++i) {
    const bool last = i + 1 == depth;
    layers_.emplace_back(prev, last ? out : width, rng, last ? real(0.5) : real(1));
    prev = width;
  }
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h);
    if (i + 1 < layers_.size()) h = relu(h);
  }
  return h;
}

void Mlp::collect(std::vector<NamedTensor>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(out, prefix + ".l" + std::to_string(i));
}

Conv::Conv(std::int64_t in, std::int64_t out, int kernel, int spatial, ConvParams params, Rng& rng)
    : spatial_(spatial), params_(params) {
  if (spatial != 2 && spatial != 3) throw ContractError("Conv: spatial rank must be 2 or 3");
  Shape shape{out, in};
  std::int64_t fan_in = in;
  for (int s = 0; s < spatial; ++s) {
    shape.push_back(kernel);
    fan_in *= kernel;
  }
  weight_ = uniform_tensor(std::move(shape), std::sqrt(real(6) / static_cast<real>(fan_in)), rng);
  bias_ = Tensor::zeros({out}, true);
}

Tensor Conv::forward(const Tensor& x) const {
  return spatial_ == 2 ? conv2d(x, weight_, bias_, params_) : conv3d(x, weight_, bias_, params_);
}

void Conv::collect(std::vector<NamedTensor>& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight_});
  out.push_back({prefix + ".bias", bias_});
}

void Adam::step(std::vector<ParameterGroup>& groups) {
  ++steps_;
  const real b1 = config_.beta1, b2 = config_.beta2;
  const real c1 = real(1) - std::pow(b1, static_cast<real>(steps_));
  const real c2 = real(1) - std::pow(b2, static_cast<real>(steps_));
  for (auto& group : groups) {
    if (group.frozen) continue;
    for (auto& p : group.params) {
      auto& st = state_[group.name + "/" + p.name];
      auto values = p.value.mutable_values();
      const auto grad = p.value.grad_span();
      if (st.m.empty()) {
        st.m.assign(values.size(), real(0));
        st.v.assign(values.size(), real(0));
      }
      for (std::size_t i = 0; i < values.size(); ++i) {
        const real g = grad.empty() ? real(0) : grad[i];
        st.m[i] = b1 * st.m[i] + (1 - b1) * g;
        st.v[i] = b2 * st.v[i] + (1 - b2) * g * g;
        const real mhat = st.m[i] / c1;
        const real vhat = st.v[i] / c2;
        values[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
      }
    }
  }
}

}  // namespace anerf
