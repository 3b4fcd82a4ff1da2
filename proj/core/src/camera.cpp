#include "anerf/camera.hpp"

#include <Eigen/LU>
#include <cmath>
#include <nlohmann/json.hpp>

namespace anerf {

void Camera::validate() const {
  const auto& k = intrinsics;
  if (k(1, 0) != 0 || k(2, 0) != 0 || k(2, 1) != 0 || k(2, 2) != 1 || !(k(0, 0) > 0) || !(k(1, 1) > 0)) {
    throw ContractError("camera intrinsics must be upper-triangular with positive focal lengths");
  }
  if ((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9 ||
      rotation.determinant() < 0) {
    throw ContractError("camera rotation is not orthonormal");
  }
  if (width <= 0 || height <= 0) throw ContractError("camera image size must be positive");
}

Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width, int height) {
  const Vec3 forward = (target - eye).normalized();
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);
  Camera c;
  c.rotation.row(0) = right;
  c.rotation.row(1) = down;
  c.rotation.row(2) = forward;
  c.translation = -c.rotation * eye;
  c.intrinsics << focal, 0, width / 2.0, 0, focal, height / 2.0, 0, 0, 1;
  c.width = width;
  c.height = height;
  return c;
}

Projection project(const Camera& camera, const Vec3& x) {
  const Vec3 xc = camera.rotation * x + camera.translation;
  Projection p;
  p.depth = xc.z();
  if (!(xc.z() > 0)) return p;
  const Vec3 uvw = camera.intrinsics * (xc / xc.z());
  p.u = uvw.x();
  p.v = uvw.y();
  p.in_frame = p.u >= 0 && p.u < camera.width && p.v >= 0 && p.v < camera.height;
  return p;
}

void to_json(nlohmann::json& j, const Camera& c) {
  auto mat = [](const Mat3& m) {
    return nlohmann::json{{m(0, 0), m(0, 1), m(0, 2)}, {m(1, 0), m(1, 1), m(1, 2)}, {m(2, 0), m(2, 1), m(2, 2)}};
  };
  j = nlohmann::json{{"intrinsics", mat(c.intrinsics)},
                     {"rotation", mat(c.rotation)},
                     {"translation", {c.translation.x(), c.translation.y(), c.translation.z()}},
                     {"width", c.width},
                     {"height", c.height}};
}

void from_json(const nlohmann::json& j, Camera& c) {
  auto mat = [](const nlohmann::json& a) {
    Mat3 m;
    for (int r = 0; r < 3; ++r)
      for (int k = 0; k < 3; ++k) m(r, k) = a.at(r).at(k).get<double>();
    return m;
  };
  c.intrinsics = mat(j.at("intrinsics"));
  c.rotation = mat(j.at("rotation"));
  const auto& t = j.at("translation");
  c.translation = Vec3(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.validate();
}

}  // namespace anerf
