#include <benchmark/benchmark.h>

#include <anerf/config.hpp>
#include <anerf/ops.hpp>
#include <filesystem>

using namespace anerf;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool grad = false) {
  std::vector<real> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<real>(rng.uniform(-1, 1));
  return Tensor::from(std::move(shape), std::move(v), grad);
}

RunConfig ci_config() {
  RunConfig c;
  apply_preset(c, "ci");
  return c;
}

const Dataset& ci_dataset() {
  static const Dataset data = [] {
    RunConfig c = ci_config();
    c.data.frames = 12;
    c.data.eval_views = 2;
    c.data.train_actors = 2;
    c.data.test_actors = 1;
    const auto root = std::filesystem::temp_directory_path() / "anerf_bench_data";
    if (!std::filesystem::exists(root / "manifest.json")) make_dataset(c.data, root);
    return load_dataset(root);
  }();
  return data;
}

void BM_MatmulForwardBackward(benchmark::State& state) {
  const auto n = state.range(0);
  Rng rng(0);
  const Tensor w = random_tensor({64, 64}, rng, true);
  const Tensor x = random_tensor({n, 64}, rng);
  for (auto _ : state) {
    Tensor y = sum(relu(matmul(x, w)));
    y.backward();
    benchmark::DoNotOptimize(w.grad().values().data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(1024)->Arg(8192);

void BM_Conv3dForwardBackward(benchmark::State& state) {
  const auto r = state.range(0);
  Rng rng(1);
  const Tensor x = random_tensor({1, 16, r, r, r}, rng);
  const Tensor w = random_tensor({16, 16, 3, 3, 3}, rng, true);
  const Tensor b = random_tensor({16}, rng, true);
  for (auto _ : state) {
    Tensor y = sum(conv3d(x, w, b, {1, 1}));
    y.backward();
  }
}
BENCHMARK(BM_Conv3dForwardBackward)->Arg(8)->Arg(12);

void BM_BackwardWarp(benchmark::State& state) {
  const RunConfig c = ci_config();
  const SceneModel model(c.model, 0);
  const auto& actor = ci_dataset().actors[0];
  const auto& frame = actor.frames[3];
  const auto tr = forward_kinematics(actor.skeleton, frame.pose);
  Rng rng(2);
  const Tensor x = random_tensor({state.range(0), 3}, rng);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(backward_warp(x, model.skinning(), tr, c.model.warp).points);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BackwardWarp)->Arg(4096)->Arg(32768);

void BM_RenderImage(benchmark::State& state) {
  const RunConfig c = ci_config();
  const SceneModel model(c.model, 0);
  const auto& actor = ci_dataset().actors[2];
  const auto cond = fixed_conditioning(model, actor, {1, 5, 9});
  const auto& frame = actor.frames_with_tag("eval");
  const auto& target = actor.frames[frame[0]];
  const RenderSettings settings{c.render.samples, Vec3::Ones()};
  for (auto _ : state) {
    benchmark::DoNotOptimize(render_image(model, cond, actor.skeleton, target.pose, target.camera, settings).data);
  }
}
BENCHMARK(BM_RenderImage)->Unit(benchmark::kMillisecond);

void BM_PretrainStep(benchmark::State& state) {
  RunConfig c = ci_config();
  auto st = make_state(c.model, c.train.adam, 0);
  c.train.steps = 1 << 30;
  for (auto _ : state) pretrain(st, ci_dataset(), c.train, st.step + 1);
}
BENCHMARK(BM_PretrainStep)->Unit(benchmark::kMillisecond);

void BM_FinetuneStep(benchmark::State& state) {
  RunConfig c = ci_config();
  auto st = make_state(c.model, c.train.adam, 0);
  c.finetune.steps = 1 << 30;
  const auto& actor = ci_dataset().actors[2];
  for (auto _ : state) finetune(st, actor, c.finetune, c.train, st.step + 1);
}
BENCHMARK(BM_FinetuneStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
