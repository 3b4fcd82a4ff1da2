#pragma once

#include <vector>

#include "anerf/camera.hpp"
#include "anerf/nn.hpp"

namespace anerf {

/// Feature maps are at 1/4 of the image resolution.
inline constexpr int kFeatureDownscale = 4;

/// Feature-map coordinate of pixel coordinate u: feature cell f is centred on
/// the image pixel with index 4f, so f = (u - 0.5) / 4.
inline double feature_coord(double u) { return (u - 0.5) / kFeatureDownscale; }

struct PixelFeatures {
  Tensor values;                         // [P,C]
  std::vector<std::uint8_t> in_frustum;  // in front of the camera and inside the image
};

/// Bilinear lookup of features [Hf,Wf,C] at the projections of points [P,3].
/// Points behind the camera or outside the image get zeros and a false flag.
PixelFeatures pixel_aligned(const Tensor& features, const Camera& camera, const Tensor& points);

/// Small strided convolution stack: two stride-2 3x3 layers, one 3x3 and one
/// 1x1 layer. Output spatial size is ceil(input / 4).
class Encoder {
 public:
  Encoder() = default;
  Encoder(int channels, int hidden, Rng& rng);
  /// image [H,W,3] -> features [ceil(H/4), ceil(W/4), C]
  Tensor encode(const Tensor& image) const;
  void collect(std::vector<NamedTensor>& out, const std::string& prefix) const;
  int channels() const { return channels_; }

 private:
  std::vector<Conv> layers_;
  int channels_ = 0;
};

struct SupportFrame {
  Tensor image;  // [H,W,3] in [0,1]
  std::vector<std::uint8_t> mask;
  Pose pose;
  Camera camera;
  BoneTransforms transforms;
  Tensor features;  // filled by the encoder
};

/// Pixel-aligned features [V,C] of body vertices already posed into the frame.
Tensor body_vertex_features(const SupportFrame& frame, const Tensor& vertices_obs);

/// Dense stand-in for the sparse 3D network: 1x1x1 projection of the
/// concatenated K*C vertex features to C_s channels, then two 3x3x3 layers.
class DiffusionNet {
 public:
  DiffusionNet() = default;
  DiffusionNet(int in_channels, int out_channels, Rng& rng);
  /// volume [D,H,W,Cin] -> [D,H,W,Cout]
  Tensor forward(const Tensor& volume) const;
  void collect(std::vector<NamedTensor>& out, const std::string& prefix) const;
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

 private:
  std::vector<Conv> layers_;
  int in_ = 0, out_ = 0;
};

/// Average-splat of per-vertex features [V,F] into the nearest nodes of `grid`,
/// giving [D,H,W,F]. Empty nodes are zero; vertices outside the box are dropped.
Tensor scatter_mean(const Tensor& vertex_features, const std::vector<Vec3>& canonical_vertices,
                    const GridSpec& grid);

/// Concatenates the K per-frame vertex features channelwise, splats them into
/// the canonical grid and runs the diffusion network. Throws ContractError for
/// an empty support set.
Tensor diffuse_to_canonical(const std::vector<Tensor>& vertex_features, const std::vector<Vec3>& canonical_vertices,
                            const GridSpec& grid, const DiffusionNet& net);

}  // namespace anerf
