#include "anerf/training.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "anerf/metrics.hpp"

namespace anerf {

void LossWeights::validate() const {
  if (mse < 0 || perc < 0 || w < 0) throw ContractError("loss weights must be non-negative");
  if (mse == 0 && perc == 0 && w == 0) throw ContractError("at least one loss weight must be positive");
}

namespace {

// Average pooling of a [H,W,3] map by `f` along both image axes.
Tensor pool(const Tensor& x, std::int64_t f) {
  const auto h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const Tensor r = reshape(x, {h / f, f, w / f, f, c});
  return mean(mean(r, 3), 1);
}

}  // namespace

Tensor perceptual_proxy(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape()) {
    throw DimensionError("perceptual_proxy: " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
  }
  if (pred.ndim() != 3 || pred.dim(0) % 4 != 0 || pred.dim(1) % 4 != 0 || pred.dim(2) != 3) {
    throw DimensionError("perceptual_proxy: patches must be [G,G,3] with G divisible by 4, got " +
                         shape_str(pred.shape()));
  }
  const Tensor d = pred - gt;
  const auto h = d.dim(0), w = d.dim(1);
  const Tensor gx = slice(d, 1, 1, w) - slice(d, 1, 0, w - 1);
  const Tensor gy = slice(d, 0, 1, h) - slice(d, 0, 0, h - 1);
  const Tensor p2 = pool(d, 2);
  const Tensor p4 = pool(p2, 2);
  return mean(abs(gx)) + mean(abs(gy)) + mean(abs(p2)) + mean(abs(p4));
}

Tensor skinning_regularizer(const SkinningVolume& volume, const Tensor& prior) {
  const Tensor& logits = volume.logits();
  if (logits.shape() != prior.shape()) {
    throw DimensionError("skinning_regularizer: " + shape_str(logits.shape()) + " vs " + shape_str(prior.shape()));
  }
  const auto voxels = logits.numel() / logits.dim(3);
  return sum(abs(softmax(logits, 3) - prior)) * (real(1) / static_cast<real>(voxels));
}

LossTerms loss_step(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt, const SkinningVolume* volume,
                    const Tensor& prior, const LossWeights& weights) {
  weights.validate();
  if (pred.size() != gt.size() || pred.empty()) throw ContractError("loss_step: prediction and target patch counts");
  std::vector<Tensor> terms;
  LossTerms out;
  if (weights.mse > 0) {
    const Tensor l = mean(square(concat(pred, 0) - concat(gt, 0)));
    out.mse = l.item();
    terms.push_back(l * weights.mse);
  }
  if (weights.perc > 0) {
    Tensor l;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const Tensor p = perceptual_proxy(pred[i], gt[i]);
      l = l.defined() ? l + p : p;
    }
    l = l * (real(1) / static_cast<real>(pred.size()));
    out.perc = l.item();
    terms.push_back(l * weights.perc);
  }
  if (weights.w > 0) {
    if (volume == nullptr) throw ContractError("loss_step: skinning term requested without a volume");
    const Tensor l = skinning_regularizer(*volume, prior);
    out.w = l.item();
    terms.push_back(l * weights.w);
  }
  out.total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) out.total = out.total + terms[i];
  return out;
}

void TrainConfig::validate() const {
  weights.validate();
  if (patch_size < 1 || patches_per_step < 1 || samples < 1 || steps < 0) {
    throw ContractError("train config: patch size, patch count and samples must be positive");
  }
  if (weights.perc > 0 && (patch_size < 8 || patch_size % 4 != 0)) {
    throw ContractError("train config: the perceptual term needs a patch size >= 8 divisible by 4, got " +
                        std::to_string(patch_size));
  }
}

void FewShotConfig::validate(int support_frames) const {
  weights.validate();
  if (support_frames < 1) throw ContractError("few-shot: K must be at least 1");
  if (support_frames > shots) {
    throw ContractError("few-shot: K = " + std::to_string(support_frames) + " exceeds M = " + std::to_string(shots));
  }
}

TrainState make_state(const ModelConfig& model, const AdamConfig& adam, std::uint64_t seed) {
  TrainState s;
  s.model = SceneModel(model, seed);
  s.adam = Adam(adam);
  // Sampling stream separate from the initialization stream.
  s.rng = Rng(seed ^ 0x9e3779b97f4a7c15ULL);
  return s;
}

TrainState finetune_state(const SceneModel& model, const AdamConfig& adam, std::uint64_t seed) {
  TrainState s;
  s.model = model.clone();
  s.adam = Adam(adam);
  s.rng = Rng(seed ^ 0x9e3779b97f4a7c15ULL);
  return s;
}

void to_json(nlohmann::json& j, const StepRecord& r) {
  j = nlohmann::json{{"step", r.step}, {"loss", r.total}, {"mse", r.mse},
                     {"perc", r.perc}, {"w", r.w},        {"lambda_w", r.lambda_w}};
}

std::array<int, 2> sample_patch(const Image& mask, int patch, Rng& rng) {
  if (patch > mask.height || patch > mask.width) {
    throw ContractError("patch size " + std::to_string(patch) + " exceeds the " + std::to_string(mask.height) + "x" +
                        std::to_string(mask.width) + " image");
  }
  int r0 = mask.height, r1 = -1, c0 = mask.width, c1 = -1;
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c)
      if (mask.at(r, c, 0) > 0.5) {
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
      }
  if (r1 < 0) {
    r0 = 0;
    r1 = mask.height - 1;
    c0 = 0;
    c1 = mask.width - 1;
  }
  auto pick = [&](int lo, int hi, int extent) {
    const int a = std::max(0, lo - patch + 1), b = std::min(extent - patch, hi);
    return a + static_cast<int>(rng.below(static_cast<std::uint64_t>(b - a + 1)));
  };
  const int r = pick(r0, r1, mask.height);
  const int c = pick(c0, c1, mask.width);
  return {r, c};
}

SupportFrame support_frame(const FrameRecord& frame, const Skeleton& actor) {
  SupportFrame s;
  s.image = frame.image.to_tensor();
  s.mask.resize(frame.mask.data.size());
  for (std::size_t i = 0; i < s.mask.size(); ++i) s.mask[i] = frame.mask.data[i] > 0.5 ? 1 : 0;
  s.pose = frame.pose;
  s.camera = frame.camera;
  s.transforms = forward_kinematics(actor, frame.pose);
  return s;
}

real lambda_w_at(const TrainConfig& config, std::int64_t step) {
  const auto cut = static_cast<std::int64_t>(std::llround(config.w_decay_fraction * config.steps));
  return step < cut ? config.weights.w : real(0);
}

namespace {

StepRecord optimize_step(TrainState& st, const Conditioning& cond, const ActorData& actor, const FrameRecord& target,
                         const TrainConfig& cfg, const LossWeights& weights) {
  const int g = cfg.patch_size;
  const auto transforms = forward_kinematics(actor.skeleton, target.pose);
  const GridBox box = posed_bounds(actor.skeleton, transforms);
  std::vector<std::array<int, 2>> pixels;
  std::vector<Tensor> gt;
  for (int p = 0; p < cfg.patches_per_step; ++p) {
    const auto corner = sample_patch(target.mask, g, st.rng);
    std::vector<real> values;
    values.reserve(static_cast<std::size_t>(g) * g * 3);
    for (int r = 0; r < g; ++r)
      for (int c = 0; c < g; ++c) {
        pixels.push_back({corner[0] + r, corner[1] + c});
        for (int k = 0; k < 3; ++k) values.push_back(target.image.at(corner[0] + r, corner[1] + c, k));
      }
    gt.push_back(Tensor::from({g, g, 3}, std::move(values)));
  }
  const auto rays = pixel_rays(target.camera, pixels, box);
  const RenderSettings settings{cfg.samples, Vec3::Ones()};
  const auto res = render_rays(st.model, cond, rays, transforms, target.pose, settings, &st.rng);
  std::vector<Tensor> pred;
  const std::int64_t per = static_cast<std::int64_t>(g) * g;
  for (int p = 0; p < cfg.patches_per_step; ++p) pred.push_back(reshape(slice(res.color, 0, p * per, (p + 1) * per), {g, g, 3}));

  const LossTerms loss = loss_step(pred, gt, &st.model.skinning(), st.model.prior(), weights);
  check_finite(loss.total, "loss at step " + std::to_string(st.step));
  auto groups = st.model.groups();
  for (auto& grp : groups) grp.zero_grad();
  loss.total.backward();
  st.adam.step(groups);
  StepRecord rec{st.step, loss.total.item(), loss.mse, loss.perc, loss.w, weights.w};
  ++st.step;
  return rec;
}

std::vector<SupportFrame> support_frames(const ActorData& actor, const std::vector<int>& indices) {
  std::vector<SupportFrame> out;
  for (int i : indices) out.push_back(support_frame(actor.frames.at(static_cast<std::size_t>(i)), actor.skeleton));
  return out;
}

}  // namespace

void pretrain(TrainState& st, const Dataset& data, const TrainConfig& cfg, std::int64_t stop_at,
              const StepCallback& on_step) {
  cfg.validate();
  const int k = st.model.config().support_frames;
  const auto actors = data.actors_with_split("train");
  if (actors.size() < 2) throw ContractError("pretrain: at least 2 training actors required");
  for (int a : actors) {
    if (static_cast<int>(data.actors[a].frames_with_tag("train").size()) < k + 1) {
      throw ContractError("pretrain: actor " + data.actors[a].id + " has fewer than K + 1 = " +
                          std::to_string(k + 1) + " frames");
    }
  }
  const std::int64_t end = stop_at < 0 ? cfg.steps : std::min<std::int64_t>(cfg.steps, stop_at);
  while (st.step < end) {
    const ActorData& actor = data.actors[actors[st.rng.below(actors.size())]];
    auto pool = actor.frames_with_tag("train");
    for (int i = 0; i <= k; ++i) {
      const auto j = i + static_cast<int>(st.rng.below(pool.size() - i));
      std::swap(pool[i], pool[j]);
    }
    const std::vector<int> support(pool.begin() + 1, pool.begin() + 1 + k);
    const Conditioning cond = condition(st.model, support_frames(actor, support), actor.skeleton);
    LossWeights w = cfg.weights;
    w.w = lambda_w_at(cfg, st.step);
    const auto rec = optimize_step(st, cond, actor, actor.frames[pool[0]], cfg, w);
    if (on_step) on_step(rec, st);
  }
}

std::vector<int> shot_frames(const ActorData& actor, int shots) {
  const auto pool = actor.frames_with_tag("train");
  const int n = static_cast<int>(pool.size());
  if (shots < 1 || shots > n) {
    throw ContractError("actor " + actor.id + " has " + std::to_string(n) + " training frames, " +
                        std::to_string(shots) + " requested");
  }
  std::vector<int> out;
  for (int i = 0; i < shots; ++i) out.push_back(pool[static_cast<std::size_t>(i) * n / shots]);
  return out;
}

std::vector<int> fixed_support(const std::vector<int>& frames, int k) {
  const int m = static_cast<int>(frames.size());
  if (k < 1 || k > m) throw ContractError("support: K = " + std::to_string(k) + " with M = " + std::to_string(m));
  std::vector<int> out;
  for (int i = 0; i < k; ++i) out.push_back(frames[static_cast<std::size_t>((2 * i + 1) * m / (2 * k))]);
  return out;
}

Conditioning fixed_conditioning(const SceneModel& model, const ActorData& actor, const std::vector<int>& support) {
  return condition(model, support_frames(actor, support), actor.skeleton);
}

void finetune(TrainState& st, const ActorData& actor, const FewShotConfig& config, const TrainConfig& train,
              std::int64_t stop_at, const StepCallback& on_step) {
  const int k = st.model.config().support_frames;
  config.validate(k);
  TrainConfig cfg = train;
  cfg.weights = config.weights;
  cfg.weights.w = 0;
  cfg.validate();
  const auto frames = shot_frames(actor, config.shots);
  if (st.support.empty()) st.support = fixed_support(frames, k);
  if (static_cast<int>(st.support.size()) != k) throw ContractError("finetune: stored support set has the wrong size");
  st.model.set_frozen("encoder", true);
  st.model.set_frozen("skinning", true);
  // Frozen encoder: features and the body volume are constants, encoded once.
  const Conditioning cond = fixed_conditioning(st.model, actor, st.support);
  const std::int64_t end = stop_at < 0 ? config.steps : std::min<std::int64_t>(config.steps, stop_at);
  while (st.step < end) {
    const int target = frames[st.rng.below(frames.size())];
    const auto rec = optimize_step(st, cond, actor, actor.frames[target], cfg, cfg.weights);
    if (on_step) on_step(rec, st);
  }
}

Image render_image(const SceneModel& model, const Conditioning& cond, const Skeleton& actor, const Pose& pose,
                   const Camera& camera, const RenderSettings& settings, int chunk) {
  NoGradGuard guard;
  const auto transforms = forward_kinematics(actor, pose);
  const auto rays = image_rays(camera, posed_bounds(actor, transforms));
  Image img(camera.height, camera.width, 3);
  for (std::size_t start = 0; start < rays.size(); start += static_cast<std::size_t>(chunk)) {
    const auto stop = std::min(rays.size(), start + static_cast<std::size_t>(chunk));
    const std::vector<Ray> part(rays.begin() + static_cast<std::ptrdiff_t>(start),
                                rays.begin() + static_cast<std::ptrdiff_t>(stop));
    const auto res = render_rays(model, cond, part, transforms, pose, settings);
    const auto v = res.color.values();
    std::copy(v.begin(), v.end(), img.data.begin() + static_cast<std::ptrdiff_t>(start * 3));
  }
  return img;
}

EvalResult evaluate(const SceneModel& model, const Conditioning& cond, const ActorData& actor,
                    const RenderSettings& settings) {
  EvalResult out;
  for (int i : actor.frames_with_tag("eval")) {
    const auto& f = actor.frames[i];
    const Image pred = render_image(model, cond, actor.skeleton, f.pose, f.camera, settings);
    out.views.push_back({f.index, psnr(pred, f.image), ssim(pred, f.image)});
  }
  for (const auto& v : out.views) {
    out.mean_psnr += v.psnr;
    out.mean_ssim += v.ssim;
  }
  if (!out.views.empty()) {
    out.mean_psnr /= static_cast<double>(out.views.size());
    out.mean_ssim /= static_cast<double>(out.views.size());
  }
  return out;
}

}  // namespace anerf
