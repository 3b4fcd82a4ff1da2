#include "anerf/gradient_suite.hpp"

#include "anerf/render.hpp"
#include "anerf/synth.hpp"

namespace anerf {

const std::vector<std::string>& registered_ops() {
  static const std::vector<std::string> ops = {
      "add",     "sub",       "mul",          "div",         "scale",       "add_scalar",    "relu",
      "softplus", "sigmoid",  "tanh",         "exp",         "log",         "sin",           "cos",
      "abs",     "square",    "matmul",       "sum",         "sum_axis",    "softmax",       "cumsum",
      "concat",  "reshape",   "slice",        "broadcast_to", "permute",    "index_select",  "index_add",
      "conv2d",  "conv3d",    "grid_sample_3d", "grid_sample_2d"};
  return ops;
}

namespace {

Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<real> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<real>(rng.uniform(lo, hi));
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor weighted_sum(const Tensor& y) {
  Rng rng(1234);
  return sum(mul(y, uniform_tensor(y.shape(), rng, 0.5, 1.5)));
}

}  // namespace

std::vector<OpGradientCase> op_gradient_cases() {
  using Inputs = std::function<std::vector<Tensor>(Rng&)>;
  auto r = [](Shape s, double lo = -1, double hi = 1) -> Inputs {
    return [s, lo, hi](Rng& rng) { return std::vector<Tensor>{uniform_tensor(s, rng, lo, hi)}; };
  };
  auto r2 = [](Shape a, Shape b, double lo = -1, double hi = 1) -> Inputs {
    return [a, b, lo, hi](Rng& rng) {
      return std::vector<Tensor>{uniform_tensor(a, rng, lo, hi), uniform_tensor(b, rng, lo, hi)};
    };
  };
  // Magnitudes in [0.2, 1.5] with alternating signs: away from the kinks of relu and abs.
  auto away_from_zero = [](Shape s) -> Inputs {
    return [s](Rng& rng) {
      auto t = uniform_tensor(s, rng, 0.2, 1.5);
      auto v = t.mutable_values();
      for (std::size_t i = 0; i < v.size(); i += 2) v[i] = -v[i];
      return std::vector<Tensor>{t};
    };
  };
  using V = const std::vector<Tensor>&;
  return {
      {"add", "add", r2({3, 4}, {3, 4}), [](V x) { return add(x[0], x[1]); }},
      {"add_row_broadcast", "add", r2({3, 4}, {4}), [](V x) { return add(x[0], x[1]); }},
      {"add_col_broadcast", "add", r2({3, 4}, {3, 1}), [](V x) { return add(x[0], x[1]); }},
      {"add_outer_broadcast", "add", r2({3, 1}, {1, 4}), [](V x) { return add(x[0], x[1]); }},
      {"add_leading_broadcast", "add", r2({4}, {3, 4}), [](V x) { return add(x[0], x[1]); }},
      {"sub", "sub", r2({2, 3, 2}, {3, 1}), [](V x) { return sub(x[0], x[1]); }},
      {"mul", "mul", r2({5, 2}, {5, 2}), [](V x) { return mul(x[0], x[1]); }},
      {"mul_scalar_tensor", "mul", r2({4, 3}, {1}), [](V x) { return mul(x[0], x[1]); }},
      {"div", "div", r2({3, 3}, {3, 3}, 0.5, 2.0), [](V x) { return div(x[0], x[1]); }},
      {"scale", "scale", r({3, 2}), [](V x) { return scale(x[0], 2.5); }},
      {"add_scalar", "add_scalar", r({3, 2}), [](V x) { return add_scalar(x[0], -0.7); }},
      {"matmul", "matmul", r2({4, 3}, {3, 5}), [](V x) { return matmul(x[0], x[1]); }},
      {"conv2d", "conv2d",
       [](Rng& rng) {
         return std::vector<Tensor>{uniform_tensor({2, 3, 6, 5}, rng, -1, 1), uniform_tensor({4, 3, 3, 3}, rng, -1, 1),
                                    uniform_tensor({4}, rng, -1, 1)};
       },
       [](V x) { return conv2d(x[0], x[1], x[2], {.stride = 1, .padding = 1}); }},
      {"conv2d_strided", "conv2d",
       [](Rng& rng) {
         return std::vector<Tensor>{uniform_tensor({1, 2, 7, 7}, rng, -1, 1), uniform_tensor({3, 2, 3, 3}, rng, -1, 1),
                                    uniform_tensor({3}, rng, -1, 1)};
       },
       [](V x) { return conv2d(x[0], x[1], x[2], {.stride = 2, .padding = 1}); }},
      {"conv3d", "conv3d",
       [](Rng& rng) {
         return std::vector<Tensor>{uniform_tensor({1, 2, 4, 3, 4}, rng, -1, 1),
                                    uniform_tensor({3, 2, 3, 3, 3}, rng, -1, 1), uniform_tensor({3}, rng, -1, 1)};
       },
       [](V x) { return conv3d(x[0], x[1], x[2], {.stride = 1, .padding = 1}); }},
      {"relu", "relu", away_from_zero({4, 5}), [](V x) { return relu(x[0]); }},
      {"softplus", "softplus", r({4, 5}, -3, 3), [](V x) { return softplus(x[0]); }},
      {"sigmoid", "sigmoid", r({4, 5}, -3, 3), [](V x) { return sigmoid(x[0]); }},
      {"tanh", "tanh", r({4, 5}, -2, 2), [](V x) { return tanh(x[0]); }},
      {"exp", "exp", r({4, 5}), [](V x) { return exp(x[0]); }},
      {"log", "log", r({4, 5}, 0.3, 3.0), [](V x) { return log(x[0]); }},
      {"sin", "sin", r({4, 5}, -3, 3), [](V x) { return sin(x[0]); }},
      {"cos", "cos", r({4, 5}, -3, 3), [](V x) { return cos(x[0]); }},
      {"abs", "abs", away_from_zero({4, 5}), [](V x) { return abs(x[0]); }},
      {"square", "square", r({4, 5}), [](V x) { return square(x[0]); }},
      {"sum", "sum", r({3, 4}), [](V x) { return sum(x[0]); }},
      {"sum_axis", "sum_axis", r({3, 4, 2}), [](V x) { return sum(x[0], 1); }},
      {"mean_axis_keepdim", "scale", r({3, 4, 2}), [](V x) { return mean(x[0], 2, true); }},
      {"mean", "scale", r({3, 4}), [](V x) { return mean(x[0]); }},
      {"softmax_last", "softmax", r({3, 5}, -2, 2), [](V x) { return softmax(x[0], 1); }},
      {"softmax_middle", "softmax", r({2, 4, 3}, -2, 2), [](V x) { return softmax(x[0], 1); }},
      {"cumsum", "cumsum", r({3, 6}), [](V x) { return cumsum(x[0], 1); }},
      {"cumsum_exclusive", "cumsum", r({3, 6}), [](V x) { return cumsum(x[0], 1, true); }},
      {"concat", "concat", r2({2, 3}, {2, 4}), [](V x) { return concat({x[0], x[1]}, 1); }},
      {"concat_axis0", "concat", r2({2, 3}, {1, 3}), [](V x) { return concat({x[0], x[1], x[0]}, 0); }},
      {"reshape", "reshape", r({3, 4}), [](V x) { return reshape(x[0], {2, 6}); }},
      {"slice", "slice", r({4, 5}), [](V x) { return slice(x[0], 1, 1, 4); }},
      {"broadcast_to", "broadcast_to", r({3, 1}), [](V x) { return broadcast_to(x[0], {2, 3, 4}); }},
      {"permute", "permute", r({2, 3, 4}), [](V x) { return permute(x[0], {2, 0, 1}); }},
      {"index_select", "index_select", r({5, 3}), [](V x) { return index_select(x[0], {4, 0, 0, 2}); }},
      {"index_add", "index_add", r({4, 3}), [](V x) { return index_add(x[0], {1, 1, 3, 0}, 5); }},
      {"grid_sample_3d", "grid_sample_3d",
       [](Rng& rng) {
         auto pts = uniform_tensor({6, 3}, rng, -0.9, 0.9);
         return std::vector<Tensor>{uniform_tensor({3, 4, 5, 2}, rng, -1, 1), pts};
       },
       [](V x) {
         const GridBox box{{-1, -1, -1}, {1, 1, 1}};
         return grid_sample_3d(x[0], x[1], box).values;
       }},
      {"grid_sample_2d", "grid_sample_2d",
       [](Rng& rng) {
         return std::vector<Tensor>{uniform_tensor({4, 5, 3}, rng, -1, 1), uniform_tensor({6, 2}, rng, 0.1, 2.9)};
       },
       [](V x) { return grid_sample_2d(x[0], x[1]); }},
      {"select_rows", "add", r2({3, 2}, {3, 2}), [](V x) { return select_rows({1, 0, 1}, x[0], x[1]); }},
  };
}

std::vector<SuiteEntry> run_op_gradient_suite(int seeds, real tolerance) {
  std::vector<SuiteEntry> out;
  for (const auto& c : op_gradient_cases()) {
    SuiteEntry e{c.name, 0, true};
    for (int s = 0; s < seeds; ++s) {
      Rng rng(static_cast<std::uint64_t>(s) + 7);
      auto inputs = c.make_inputs(rng);
      const auto report = grad_check([&](const std::vector<Tensor>& x) { return weighted_sum(c.apply(x)); }, inputs,
                                     {.step = 1e-5, .tolerance = tolerance});
      e.worst = std::max(e.worst, report.worst);
      e.passed = e.passed && report.passed;
    }
    out.push_back(e);
  }
  return out;
}

ModelConfig toy_model_config() {
  ModelConfig c;
  c.bones = 2;
  c.support_frames = 1;
  c.skinning_resolution = 8;
  c.feature_resolution = 8;
  c.feature_channels = 4;
  c.encoder_hidden = 2;
  c.volume_channels = 3;
  c.surface_vertices = 96;
  c.pe_frequencies = 2;
  c.deform_width = 8;
  c.deform_depth = 2;
  c.render_width = 8;
  c.render_depth = 2;
  c.density_scale = 2;
  return c;
}

GradCheckReport pipeline_gradient_check(real tolerance, std::uint64_t seed) {
  const ModelConfig cfg = toy_model_config();
  SceneModel model(cfg, seed);
  Rng rng(seed + 101);
  auto groups = model.groups();
  // Move the zero-initialized deformation output off zero so every layer carries gradient.
  for (auto& g : groups)
    for (auto& p : g.params)
      for (auto& v : p.value.mutable_values()) v += static_cast<real>(rng.uniform(-0.05, 0.05));

  const SyntheticActor actor = make_actor(seed, cfg.bones);
  const Camera camera = look_at({0.2, 0.3, 2.5}, {0, 0.2, 0}, {0, 1, 0}, 12.0, 8, 8);
  Pose support_pose = Pose::zero(cfg.bones);
  support_pose.axis_angle[1] = Vec3(0, 0, 0.3);
  const GroundTruth gt = render_gt(actor, support_pose, camera);
  SupportFrame frame;
  frame.image = gt.image.to_tensor();
  frame.pose = support_pose;
  frame.camera = camera;

  Pose target = Pose::zero(cfg.bones);
  target.axis_angle[0] = Vec3(0.05, 0.2, 0);
  target.axis_angle[1] = Vec3(0.1, 0, -0.4);
  const auto transforms = forward_kinematics(actor.skeleton, target);
  const auto rays = pixel_rays(camera, {{3, 3}, {3, 4}, {4, 3}, {4, 4}, {2, 4}}, posed_bounds(actor.skeleton, transforms));
  std::vector<real> goal(rays.size() * 3);
  for (auto& v : goal) v = static_cast<real>(rng.uniform(0, 1));
  const Tensor goal_t = Tensor::from({static_cast<std::int64_t>(rays.size()), 3}, goal);
  const RenderSettings settings{8, Vec3::Ones()};

  std::vector<Tensor> inputs;
  for (auto& g : groups)
    for (auto& p : g.params) inputs.push_back(p.value);
  auto loss = [&](const std::vector<Tensor>&) {
    const Conditioning cond = condition(model, {frame}, actor.skeleton);
    const auto res = render_rays(model, cond, rays, transforms, target, settings);
    return mean(square(res.color - goal_t));
  };
  return grad_check(loss, inputs, {.step = 1e-6, .tolerance = tolerance, .floor = 1e-2, .max_elements_per_input = 24});
}

}  // namespace anerf
