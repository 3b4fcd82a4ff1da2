#pragma once

#include <nlohmann/json_fwd.hpp>
#include <vector>

#include "anerf/kinematics.hpp"

namespace anerf {

/// Pinhole camera. World to camera is X_cam = R X + t; the camera looks along
/// +z with image x right and y down. Pixel (row i, col j) has its center at
/// (u, v) = (j + 0.5, i + 0.5).
struct Camera {
  Mat3 intrinsics = Mat3::Identity();
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  int width = 0;
  int height = 0;

  Vec3 center() const { return -rotation.transpose() * translation; }
  /// Throws ContractError unless K is upper-triangular with positive focals and R is a rotation.
  void validate() const;
};

/// Camera at `eye` looking at `target`; `up` is the world up direction.
Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width, int height);

struct Projection {
  double u = 0, v = 0, depth = 0;
  /// depth > 0 and 0 <= u < width, 0 <= v < height
  bool in_frame = false;
};
Projection project(const Camera& camera, const Vec3& x);

void to_json(nlohmann::json& j, const Camera& c);
void from_json(const nlohmann::json& j, Camera& c);

}  // namespace anerf
