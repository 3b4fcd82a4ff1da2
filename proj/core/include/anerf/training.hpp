#pragma once

#include <functional>
#include <nlohmann/json_fwd.hpp>
#include <string>
#include <vector>

#include "anerf/image.hpp"
#include "anerf/render.hpp"
#include "anerf/synth.hpp"

namespace anerf {

struct LossWeights {
  real mse = 1.0;
  real perc = 0.1;
  real w = 0.01;
  /// Throws ContractError on a negative weight or all weights zero.
  void validate() const;
};

struct LossTerms {
  Tensor total;
  real mse = 0;
  real perc = 0;
  real w = 0;
};

/// Structure-sensitive patch distance on [G,G,3] patches (G divisible by 4):
/// mean |finite differences of pred - finite differences of gt| along rows and
/// columns, plus mean |2x2 and 4x4 average-pooled intensity differences|.
Tensor perceptual_proxy(const Tensor& pred, const Tensor& gt);

/// Mean over voxels of the L1 distance between softmax(logits) and the prior.
Tensor skinning_regularizer(const SkinningVolume& volume, const Tensor& prior);

/// Weighted loss over patches [G,G,3]. Terms with zero weight are not built;
/// `volume` may be null when weights.w is zero.
LossTerms loss_step(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt, const SkinningVolume* volume,
                    const Tensor& prior, const LossWeights& weights);

struct TrainConfig {
  int patch_size = 16;  // G
  int patches_per_step = 4;
  AdamConfig adam{};
  int steps = 5000;
  LossWeights weights{};
  real w_decay_fraction = 0.5;  // lambda_W drops to zero after this fraction of the steps
  int samples = 64;             // per ray
  int checkpoint_every = 0;     // 0: only at the end
  /// K (support frames) and the ablation switches live in ModelConfig.
  void validate() const;
};

struct FewShotConfig {
  int shots = 5;  // M
  int steps = 2000;
  LossWeights weights{1.0, 0.1, 0.0};
  /// Throws ContractError if K > M.
  void validate(int support_frames) const;
};

/// Mutable training state; everything a checkpoint must restore.
struct TrainState {
  SceneModel model;
  Adam adam;
  Rng rng;
  std::int64_t step = 0;
  std::vector<int> support;  // fixed support frame indices during finetuning
};

TrainState make_state(const ModelConfig& model, const AdamConfig& adam, std::uint64_t seed);
/// Few-shot starting point: a copy of `model` with a fresh optimizer, step 0
/// and a sampling stream derived from `seed`.
TrainState finetune_state(const SceneModel& model, const AdamConfig& adam, std::uint64_t seed);

struct StepRecord {
  std::int64_t step = 0;
  real total = 0;
  real mse = 0;
  real perc = 0;
  real w = 0;
  real lambda_w = 0;
};
void to_json(nlohmann::json& j, const StepRecord& r);
using StepCallback = std::function<void(const StepRecord&, const TrainState&)>;

/// Top-left corner of a G x G patch overlapping the mask's bounding box
/// (anywhere in the image when the mask is empty).
std::array<int, 2> sample_patch(const Image& mask, int patch, Rng& rng);

/// Support set wrappers around dataset frames.
SupportFrame support_frame(const FrameRecord& frame, const Skeleton& actor);

/// lambda_W at a given step: the configured weight before the decay point, 0 after.
real lambda_w_at(const TrainConfig& config, std::int64_t step);

/// Category-level training over the dataset's "train" actors: each step samples
/// an actor, K support frames and a disjoint target frame, renders patches of
/// the target and takes one Adam step on all unfrozen groups. Runs from
/// state.step up to min(config.steps, stop_at).
void pretrain(TrainState& state, const Dataset& data, const TrainConfig& config, std::int64_t stop_at = -1,
              const StepCallback& on_step = {});

/// The M training-camera frames used for few-shot fitting, evenly spaced.
std::vector<int> shot_frames(const ActorData& actor, int shots);
/// K support frames evenly spaced within `frames`.
std::vector<int> fixed_support(const std::vector<int>& frames, int k);

/// Few-shot optimization: encoder and skinning frozen, fixed support frames
/// encoded once, only deformation and rendering updated, lambda_W = 0.
void finetune(TrainState& state, const ActorData& actor, const FewShotConfig& config, const TrainConfig& train,
              std::int64_t stop_at = -1, const StepCallback& on_step = {});

/// Conditioning from the state's fixed support frames.
Conditioning fixed_conditioning(const SceneModel& model, const ActorData& actor, const std::vector<int>& support);

/// Full-image render (no graph), in chunks of rays.
Image render_image(const SceneModel& model, const Conditioning& cond, const Skeleton& actor, const Pose& pose,
                   const Camera& camera, const RenderSettings& settings, int chunk = 4096);

struct ViewScore {
  int frame = 0;
  double psnr = 0;
  double ssim = 0;
};
struct EvalResult {
  std::vector<ViewScore> views;
  double mean_psnr = 0;
  double mean_ssim = 0;
};

/// Scores renders of the actor's "eval" frames against ground truth.
EvalResult evaluate(const SceneModel& model, const Conditioning& cond, const ActorData& actor,
                    const RenderSettings& settings);

}  // namespace anerf
