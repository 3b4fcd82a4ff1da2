#pragma once

#include <Eigen/Dense>
#include <array>
#include <nlohmann/json_fwd.hpp>
#include <vector>

#include "anerf/ops.hpp"

namespace anerf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Kinematic tree in the canonical T-pose. Joint 0 is the root.
struct Skeleton {
  std::vector<int> parent;         // parent[0] == -1
  std::vector<Vec3> rest_offsets;  // joint position relative to its parent (root: absolute)
  std::vector<double> bone_radii;  // meters
  /// End of bone b's segment relative to joint b, in the rest pose. The
  /// segment from joint b to joint b + tip moves rigidly with bone b.
  std::vector<Vec3> bone_tips;

  int joint_count() const { return static_cast<int>(parent.size()); }
  std::vector<Vec3> rest_joints() const;
  /// Throws ContractError if the tree or the arrays are malformed.
  void validate() const;
};

/// Built-in templates: 8 joints (pelvis, spine, chest, head, two arms, two
/// legs), a 24-joint SMPL-like topology, or a 2-joint toy (torso and arm).
Skeleton template_skeleton(int joints = 8);

/// Per-joint axis-angle rotations (radians times unit axis) and root translation.
struct Pose {
  std::vector<Vec3> axis_angle;
  Vec3 root_translation = Vec3::Zero();

  static Pose zero(int joints);
  std::vector<real> flattened() const;  // B*3 values, joint-major
};

/// Rigid transforms from the canonical T-pose to observation space, one per bone.
using BoneTransforms = std::vector<Mat4>;

/// Axis-angle exponential map.
Mat3 rodrigues(const Vec3& axis_angle);
/// Inverse of rodrigues for rotations with angle in [0, pi].
Vec3 rotation_log(const Mat3& rotation);
Mat4 rigid_inverse(const Mat4& t);

BoneTransforms forward_kinematics(const Skeleton& skeleton, const Pose& pose);

/// Posed joint positions (joint b's rest position moved by T_b).
std::vector<Vec3> posed_joints(const Skeleton& skeleton, const BoneTransforms& transforms);

/// Regular grid over a box; resolution is (D, H, W) = (z, y, x) node counts.
struct GridSpec {
  GridBox box;
  std::array<int, 3> resolution{32, 32, 32};

  Vec3 node(int d, int h, int w) const;
  std::int64_t node_count() const;
};

/// Rest-pose body box (joints, bone tips and radii) grown by `margin` of its
/// extent per side, at least `min_pad` meters.
GridBox canonical_bounds(const Skeleton& skeleton, double margin = 0.1, double min_pad = 0.0);
/// Posed body box: joints and bone tips, grown by the largest bone radius, then
/// by `margin` of the extent.
GridBox posed_bounds(const Skeleton& skeleton, const BoneTransforms& transforms, double margin = 0.2);

/// Distance from p to segment [a, b]; a point distance for degenerate segments.
double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b);

struct PriorOptions {
  double background_floor = 1e-3;
};

/// Skeleton-derived skinning prior [D,H,W,B+1]: per bone a Gaussian of the
/// distance to the bone segment (sigma = bone radius), plus a constant
/// background channel, normalized per voxel.
Tensor skinning_prior(const Skeleton& skeleton, const GridSpec& grid, const PriorOptions& options = {});

/// Deterministic samples on the rest-pose capsule surfaces; counts per bone
/// are proportional to capsule area. Returns [count, 3].
std::vector<Vec3> body_surface_points(const Skeleton& skeleton, int count);

void to_json(nlohmann::json& j, const Skeleton& s);
void from_json(const nlohmann::json& j, Skeleton& s);
void to_json(nlohmann::json& j, const Pose& p);
void from_json(const nlohmann::json& j, Pose& p);

}  // namespace anerf
