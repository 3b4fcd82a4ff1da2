#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "anerf/features.hpp"
#include "anerf/warpfield.hpp"

namespace anerf {

/// [x, sin(2^k pi x), cos(2^k pi x)] for k < num_frequencies.
struct PositionalEncoding {
  int num_frequencies = 6;
  bool include_input = true;

  std::int64_t output_dim(std::int64_t in = 3) const {
    return in * 2 * num_frequencies + (include_input ? in : 0);
  }
  Tensor operator()(const Tensor& x) const;
};

/// x_i = x_c + delta_max * tanh(MLP(enc(x_c), pooled, pose)), last layer zero.
class DeformationNet {
 public:
  DeformationNet() = default;
  DeformationNet(PositionalEncoding pe, std::int64_t feature_dim, std::int64_t pose_dim, int width, int depth,
                 real delta_max, Rng& rng);
  /// x_c [P,3], pooled [P,C], pose [pose_dim] -> x_i [P,3]
  Tensor forward(const Tensor& x_c, const Tensor& pooled, const Tensor& pose) const;
  void collect(std::vector<NamedTensor>& out, const std::string& prefix) const;
  real delta_max() const { return delta_max_; }

 private:
  PositionalEncoding pe_;
  Mlp mlp_;
  real delta_max_ = 0.1;
};

struct RenderOutput {
  Tensor sigma;  // [P] >= 0
  Tensor color;  // [P,3] in [0,1]
};

/// sigma = density_scale * softplus(o_0), c = sigmoid(o_1..3).
class RenderNet {
 public:
  RenderNet() = default;
  RenderNet(PositionalEncoding pe, std::int64_t pixel_dim, std::int64_t volume_dim, bool use_view_dir, int width,
            int depth, real density_scale, Rng& rng);
  /// view_dirs [P,3] is required only when the net was built with use_view_dir.
  RenderOutput forward(const Tensor& x_i, const Tensor& pooled, const Tensor& volume_features,
                       const Tensor& view_dirs = {}) const;
  void collect(std::vector<NamedTensor>& out, const std::string& prefix) const;
  bool uses_view_dir() const { return use_view_dir_; }

 private:
  PositionalEncoding pe_;
  PositionalEncoding dir_pe_{4, true};
  Mlp mlp_;
  bool use_view_dir_ = false;
  real density_scale_ = 10;
};

enum class Ablation { none, no_deform, no_pixel_feat, no_body_feat };
Ablation parse_ablation(const std::string& name);
std::string ablation_name(Ablation a);

struct ModelConfig {
  int bones = 8;
  int support_frames = 3;  // K
  int skinning_resolution = 32;
  int feature_resolution = 16;
  int feature_channels = 32;  // C
  int encoder_hidden = 16;
  int volume_channels = 16;  // C_s
  int surface_vertices = 1024;
  int pe_frequencies = 6;
  int deform_width = 128;
  int deform_depth = 4;
  int render_width = 128;
  int render_depth = 6;
  real delta_max = 0.1;
  real density_scale = 10;
  real canonical_pad = 0.15;  // extra room for actors larger than the template
  bool use_view_dir = false;
  Ablation ablation = Ablation::none;
  WarpOptions warp{};
};

inline const std::vector<std::string> kGroupNames = {"encoder", "skinning", "deformation", "rendering"};

/// The four parameter groups (encoder E with the diffusion network, skinning
/// volume W, deformation D, rendering R) plus the category template.
class SceneModel {
 public:
  SceneModel() = default;
  SceneModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Skeleton& category_skeleton() const { return template_; }
  const Encoder& encoder() const { return encoder_; }
  const DiffusionNet& diffusion() const { return diffusion_; }
  const SkinningVolume& skinning() const { return skinning_; }
  SkinningVolume& skinning() { return skinning_; }
  const Tensor& prior() const { return prior_; }
  const DeformationNet& deformation() const { return deformation_; }
  const RenderNet& rendering() const { return rendering_; }
  GridSpec feature_grid() const;

  /// Groups share tensors with the model; frozen groups carry the flag.
  std::vector<ParameterGroup> groups() const;
  void set_frozen(const std::string& group, bool frozen);
  bool frozen(const std::string& group) const { return frozen_.count(group) > 0; }

  /// Parameter values keyed "<group>/<name>".
  std::map<std::string, std::vector<real>> parameters() const;
  /// Overwrites values in place; throws ContractError on a missing key or size mismatch.
  void load_parameters(const std::map<std::string, std::vector<real>>& values);
  SceneModel clone() const;

 private:
  ModelConfig config_;
  Skeleton template_;
  Encoder encoder_;
  DiffusionNet diffusion_;
  SkinningVolume skinning_;
  Tensor prior_;
  DeformationNet deformation_;
  RenderNet rendering_;
  std::set<std::string> frozen_;
};

/// Encoded support set: per-frame features and the canonical body-feature volume.
struct Conditioning {
  std::vector<SupportFrame> frames;
  Tensor volume;  // [D,H,W,C_s]; undefined when body features are ablated
  Skeleton actor;
};

/// Encodes the K support frames and diffuses body-vertex features of `actor`.
Conditioning condition(const SceneModel& model, std::vector<SupportFrame> frames, const Skeleton& actor);

/// Pooled pixel-aligned features [P,C] of canonical points: forward-warped into
/// each support frame, sampled, and averaged over the frames that see them.
Tensor pool_pixel_features(const SceneModel& model, const Conditioning& cond, const Tensor& x_c);

struct QueryResult {
  Tensor sigma;  // [P]
  Tensor color;  // [P,3]
  std::vector<std::uint8_t> on_body;
};

/// Full per-point mapping: backward warp to the category canonical space,
/// feature gathering, deformation and rendering. Off-body points (bone mass
/// below tau_empty) get sigma = 0 and color 0 without evaluating the networks.
QueryResult query_pipeline(const SceneModel& model, const Conditioning& cond, const Tensor& x_o,
                           const BoneTransforms& target, const Pose& target_pose, const Tensor& view_dirs = {});

}  // namespace anerf
