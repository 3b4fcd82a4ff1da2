#pragma once

#include <map>
#include <string>
#include <vector>

#include "anerf/ops.hpp"
#include "anerf/rng.hpp"

namespace anerf {

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// A named set of trainable leaves that can be frozen as a unit.
struct ParameterGroup {
  std::string name;
  std::vector<NamedTensor> params;
  bool frozen = false;

  std::int64_t numel() const;
  void zero_grad();
  real grad_norm() const;
};

/// Fully connected layer y = x W + b with W stored [in, out].
class Linear {
 public:
  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, Rng& rng, real gain = 1.0);

  Tensor forward(const Tensor& x) const;
  void collect(std::vector<NamedTensor>& out, const std::string& prefix) const;
  void zero_init();

  std::int64_t in_features() const { return weight_.dim(0); }
  std::int64_t out_features() const { return weight_.dim(1); }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

 private:
  Tensor weight_;
  Tensor bias_;
};

/// ReLU multilayer perceptron; `depth` linear layers, the last one without activation.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::int64_t in, std::int64_t width, std::int64_t out, int depth, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(std::vector<NamedTensor>& out, const std::string& prefix) const;
  Linear& last() { return layers_.back(); }
  const std::vector<Linear>& layers() const { return layers_; }

 private:
  std::vector<Linear> layers_;
};

/// Convolution weights [O,C,k...] with bias [O]; `spatial` is 2 or 3.
class Conv {
 public:
  Conv() = default;
  Conv(std::int64_t in, std::int64_t out, int kernel, int spatial, ConvParams params, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(std::vector<NamedTensor>& out, const std::string& prefix) const;
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

 private:
  Tensor weight_;
  Tensor bias_;
  int spatial_ = 2;
  ConvParams params_{};
};

struct AdamConfig {
  real lr = 5e-4;
  real beta1 = 0.9;
  real beta2 = 0.999;
  real eps = 1e-8;
};

/// Adam over parameter groups; frozen groups are never touched.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(std::vector<ParameterGroup>& groups);
  std::int64_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }

  struct Moments {
    std::vector<real> m;
    std::vector<real> v;
  };
  /// Moment buffers keyed by "<group>/<param>".
  std::map<std::string, Moments>& state() { return state_; }
  const std::map<std::string, Moments>& state() const { return state_; }
  void set_steps(std::int64_t s) { steps_ = s; }

 private:
  AdamConfig config_;
  std::int64_t steps_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace anerf
