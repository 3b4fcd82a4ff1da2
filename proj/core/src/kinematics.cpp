#include "anerf/kinematics.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numbers>

namespace anerf {

std::vector<Vec3> Skeleton::rest_joints() const {
  std::vector<Vec3> joints(parent.size());
  for (std::size_t b = 0; b < parent.size(); ++b) {
    joints[b] = parent[b] < 0 ? rest_offsets[b] : joints[static_cast<std::size_t>(parent[b])] + rest_offsets[b];
  }
  return joints;
}

void Skeleton::validate() const {
  const auto n = parent.size();
  if (n < 2) throw ContractError("skeleton needs at least two joints");
  if (rest_offsets.size() != n || bone_radii.size() != n || bone_tips.size() != n) {
    throw ContractError("skeleton arrays must all have one entry per joint");
  }
  if (parent[0] != -1) throw ContractError("joint 0 must be the root");
  for (std::size_t b = 1; b < n; ++b) {
    // Parents precede children, which also rules out cycles.
    if (parent[b] < 0 || static_cast<std::size_t>(parent[b]) >= b) {
      throw ContractError("joint " + std::to_string(b) + " has invalid parent");
    }
  }
  for (std::size_t b = 0; b < n; ++b) {
    if (!rest_offsets[b].allFinite() || !bone_tips[b].allFinite() || !std::isfinite(bone_radii[b]) ||
        bone_radii[b] <= 0) {
      throw ContractError("joint " + std::to_string(b) + " has non-finite geometry");
    }
  }
}

Skeleton template_skeleton(int joints) {
  Skeleton s;
  auto add = [&s](int parent, Vec3 offset, Vec3 tip, double radius) {
    s.parent.push_back(parent);
    s.rest_offsets.push_back(offset);
    s.bone_tips.push_back(tip);
    s.bone_radii.push_back(radius);
  };
  if (joints == 2) {
    add(-1, {0, 0, 0}, {0, 0.45, 0}, 0.12);            // torso
    add(0, {0, 0.35, 0}, {0.40, 0, 0}, 0.07);          // arm
    return s;
  }
  if (joints == 8) {
    add(-1, {0, 0, 0}, {0, 0.10, 0}, 0.12);            // pelvis
    add(0, {0, 0.10, 0}, {0, 0.25, 0}, 0.11);          // spine
    add(1, {0, 0.25, 0}, {0, 0.20, 0}, 0.13);          // chest
    add(2, {0, 0.25, 0}, {0, 0.20, 0}, 0.10);          // head
    add(2, {0.18, 0.15, 0}, {0.55, 0, 0}, 0.05);       // left arm
    add(2, {-0.18, 0.15, 0}, {-0.55, 0, 0}, 0.05);     // right arm
    add(0, {0.10, -0.05, 0}, {0, -0.85, 0}, 0.07);     // left leg
    add(0, {-0.10, -0.05, 0}, {0, -0.85, 0}, 0.07);    // right leg
    return s;
  }
  if (joints == 24) {
    add(-1, {0, 0, 0}, {0, 0.08, 0}, 0.11);            // 0 pelvis
    add(0, {0.08, -0.08, 0}, {0.02, -0.38, 0}, 0.07);  // 1 left hip
    add(0, {-0.08, -0.08, 0}, {-0.02, -0.38, 0}, 0.07);
    add(0, {0, 0.10, 0}, {0, 0.13, 0}, 0.11);          // 3 spine1
    add(1, {0.02, -0.38, 0}, {0, -0.40, 0}, 0.055);    // 4 left knee
    add(2, {-0.02, -0.38, 0}, {0, -0.40, 0}, 0.055);
    add(3, {0, 0.13, 0}, {0, 0.05, 0}, 0.12);          // 6 spine2
    add(4, {0, -0.40, 0}, {0, -0.05, 0.12}, 0.045);    // 7 left ankle
    add(5, {0, -0.40, 0}, {0, -0.05, 0.12}, 0.045);
    add(6, {0, 0.05, 0}, {0, 0.20, 0}, 0.13);          // 9 spine3
    add(7, {0, -0.05, 0.12}, {0, 0, 0.06}, 0.04);      // 10 left foot
    add(8, {0, -0.05, 0.12}, {0, 0, 0.06}, 0.04);
    add(9, {0, 0.20, 0}, {0, 0.08, 0}, 0.05);          // 12 neck
    add(9, {0.08, 0.12, 0}, {0.10, 0.03, 0}, 0.05);    // 13 left collar
    add(9, {-0.08, 0.12, 0}, {-0.10, 0.03, 0}, 0.05);
    add(12, {0, 0.08, 0}, {0, 0.15, 0}, 0.10);         // 15 head
    add(13, {0.10, 0.03, 0}, {0.26, 0, 0}, 0.05);      // 16 left shoulder
    add(14, {-0.10, 0.03, 0}, {-0.26, 0, 0}, 0.05);
    add(16, {0.26, 0, 0}, {0.25, 0, 0}, 0.04);         // 18 left elbow
    add(17, {-0.26, 0, 0}, {-0.25, 0, 0}, 0.04);
    add(18, {0.25, 0, 0}, {0.08, 0, 0}, 0.035);        // 20 left wrist
    add(19, {-0.25, 0, 0}, {-0.08, 0, 0}, 0.035);
    add(20, {0.08, 0, 0}, {0.06, 0, 0}, 0.03);         // 22 left hand
    add(21, {-0.08, 0, 0}, {-0.06, 0, 0}, 0.03);
    return s;
  }
  throw ContractError("template skeletons exist for 2, 8 and 24 joints, not " + std::to_string(joints));
}

Pose Pose::zero(int joints) {
  Pose p;
  p.axis_angle.assign(static_cast<std::size_t>(joints), Vec3::Zero());
  return p;
}

std::vector<real> Pose::flattened() const {
  std::vector<real> out;
  out.reserve(axis_angle.size() * 3);
  for (const auto& a : axis_angle)
    for (int i = 0; i < 3; ++i) out.push_back(static_cast<real>(a[i]));
  return out;
}

namespace {

Mat3 skew(const Vec3& w) {
  Mat3 k;
  k << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return k;
}

Mat4 make_rigid(const Mat3& r, const Vec3& t) {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = r;
  m.topRightCorner<3, 1>() = t;
  return m;
}

}  // namespace

Mat3 rodrigues(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 k = skew(w);
  if (theta < 1e-8) return Mat3::Identity() + k + 0.5 * k * k;
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * k + b * k * k;
}

Vec3 rotation_log(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

Mat4 rigid_inverse(const Mat4& t) {
  const Mat3 rt = t.topLeftCorner<3, 3>().transpose();
  return make_rigid(rt, -rt * t.topRightCorner<3, 1>());
}

BoneTransforms forward_kinematics(const Skeleton& skeleton, const Pose& pose) {
  const auto n = skeleton.parent.size();
  if (pose.axis_angle.size() != n) {
    throw ContractError("pose has " + std::to_string(pose.axis_angle.size()) + " joints, skeleton has " +
                        std::to_string(n));
  }
  const auto rest = skeleton.rest_joints();
  std::vector<Mat4> world(n);
  BoneTransforms out(n);
  for (std::size_t b = 0; b < n; ++b) {
    const Mat3 r = rodrigues(pose.axis_angle[b]);
    if (skeleton.parent[b] < 0) {
      world[b] = make_rigid(r, rest[b] + pose.root_translation);
    } else {
      world[b] = world[static_cast<std::size_t>(skeleton.parent[b])] * make_rigid(r, skeleton.rest_offsets[b]);
    }
    // Relative to the rest pose: undo the rest placement of the joint.
    out[b] = world[b] * make_rigid(Mat3::Identity(), -rest[b]);
    out[b].row(3) << 0, 0, 0, 1;
  }
  return out;
}

std::vector<Vec3> posed_joints(const Skeleton& skeleton, const BoneTransforms& transforms) {
  const auto rest = skeleton.rest_joints();
  std::vector<Vec3> out(rest.size());
  for (std::size_t b = 0; b < rest.size(); ++b) {
    out[b] = transforms[b].topLeftCorner<3, 3>() * rest[b] + transforms[b].topRightCorner<3, 1>();
  }
  return out;
}

Vec3 GridSpec::node(int d, int h, int w) const {
  auto coord = [this](int axis, int i, int count) {
    return box.lo[axis] + (box.hi[axis] - box.lo[axis]) * static_cast<double>(i) / static_cast<double>(count - 1);
  };
  return {coord(0, w, resolution[2]), coord(1, h, resolution[1]), coord(2, d, resolution[0])};
}

std::int64_t GridSpec::node_count() const {
  return static_cast<std::int64_t>(resolution[0]) * resolution[1] * resolution[2];
}

namespace {

GridBox box_of(const std::vector<Vec3>& pts, double pad, double margin, double min_pad) {
  Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  lo.array() -= pad;
  hi.array() += pad;
  GridBox box;
  for (int a = 0; a < 3; ++a) {
    const double grow = std::max(margin * (hi[a] - lo[a]), min_pad);
    box.lo[a] = static_cast<real>(lo[a] - grow);
    box.hi[a] = static_cast<real>(hi[a] + grow);
  }
  return box;
}

}  // namespace

GridBox canonical_bounds(const Skeleton& skeleton, double margin, double min_pad) {
  const auto joints = skeleton.rest_joints();
  std::vector<Vec3> pts;
  double rmax = 0;
  for (std::size_t b = 0; b < joints.size(); ++b) {
    pts.push_back(joints[b]);
    pts.push_back(joints[b] + skeleton.bone_tips[b]);
    rmax = std::max(rmax, skeleton.bone_radii[b]);
  }
  return box_of(pts, rmax, margin, min_pad);
}

GridBox posed_bounds(const Skeleton& skeleton, const BoneTransforms& transforms, double margin) {
  const auto joints = skeleton.rest_joints();
  std::vector<Vec3> pts;
  double rmax = 0;
  for (std::size_t b = 0; b < joints.size(); ++b) {
    const Mat3 r = transforms[b].topLeftCorner<3, 3>();
    const Vec3 t = transforms[b].topRightCorner<3, 1>();
    pts.push_back(r * joints[b] + t);
    pts.push_back(r * (joints[b] + skeleton.bone_tips[b]) + t);
    rmax = std::max(rmax, skeleton.bone_radii[b]);
  }
  return box_of(pts, rmax, margin, 0.0);
}

double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 <= 0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

Tensor skinning_prior(const Skeleton& skeleton, const GridSpec& grid, const PriorOptions& options) {
  skeleton.validate();
  const auto bones = static_cast<std::size_t>(skeleton.joint_count());
  const auto channels = bones + 1;
  const auto joints = skeleton.rest_joints();
  const auto& res = grid.resolution;
  std::vector<real> values(static_cast<std::size_t>(grid.node_count()) * channels);
  std::size_t k = 0;
  std::vector<double> g(channels);
  for (int d = 0; d < res[0]; ++d)
    for (int h = 0; h < res[1]; ++h)
      for (int w = 0; w < res[2]; ++w) {
        const Vec3 p = grid.node(d, h, w);
        double total = options.background_floor;
        for (std::size_t b = 0; b < bones; ++b) {
          const double dist = segment_distance(p, joints[b], joints[b] + skeleton.bone_tips[b]);
          const double r = skeleton.bone_radii[b];
          g[b] = std::exp(-dist * dist / (2 * r * r));
          total += g[b];
        }
        g[bones] = options.background_floor;
        for (std::size_t c = 0; c < channels; ++c) values[k++] = static_cast<real>(g[c] / total);
      }
  return Tensor::from({res[0], res[1], res[2], static_cast<std::int64_t>(channels)}, std::move(values));
}

std::vector<Vec3> body_surface_points(const Skeleton& skeleton, int count) {
  const auto joints = skeleton.rest_joints();
  const auto n = joints.size();
  // Capsule area is 2*pi*r*(L + 2r); allocate by largest remainder.
  std::vector<double> area(n);
  double total = 0;
  for (std::size_t b = 0; b < n; ++b) {
    const double r = skeleton.bone_radii[b];
    area[b] = r * (skeleton.bone_tips[b].norm() + 2 * r);
    total += area[b];
  }
  std::vector<int> per(n);
  std::vector<std::pair<double, std::size_t>> rem;
  int assigned = 0;
  for (std::size_t b = 0; b < n; ++b) {
    const double exact = count * area[b] / total;
    per[b] = static_cast<int>(std::floor(exact));
    assigned += per[b];
    rem.emplace_back(exact - per[b], b);
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto& x, auto& y) { return x.first > y.first; });
  for (int i = 0; assigned < count; ++i, ++assigned) ++per[rem[static_cast<std::size_t>(i) % n].second];

  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::size_t b = 0; b < n; ++b) {
    const Vec3 a = joints[b];
    const double len = skeleton.bone_tips[b].norm();
    const Vec3 axis = len > 0 ? Vec3(skeleton.bone_tips[b] / len) : Vec3(0, 1, 0);
    const Vec3 helper = std::abs(axis.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
    const Vec3 u = axis.cross(helper).normalized();
    const Vec3 v = axis.cross(u);
    const double r = skeleton.bone_radii[b];
    // Uniform axial coordinate over [-r, L + r] is area-uniform on both the
    // cylinder and the hemispherical caps.
    for (int i = 0; i < per[b]; ++i) {
      const double s = -r + (len + 2 * r) * (i + 0.5) / per[b];
      const double phi = golden * i;
      double ring = r;
      Vec3 center;
      if (s < 0) {
        ring = std::sqrt(std::max(0.0, r * r - s * s));
        center = a + s * axis;
      } else if (s > len) {
        ring = std::sqrt(std::max(0.0, r * r - (s - len) * (s - len)));
        center = a + s * axis;
      } else {
        center = a + s * axis;
      }
      out.push_back(center + ring * (std::cos(phi) * u + std::sin(phi) * v));
    }
  }
  return out;
}

void to_json(nlohmann::json& j, const Skeleton& s) {
  auto vecs = [](const std::vector<Vec3>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& x : v) a.push_back({x.x(), x.y(), x.z()});
    return a;
  };
  j = nlohmann::json{{"B", s.joint_count()},
                     {"parent", s.parent},
                     {"rest_offsets", vecs(s.rest_offsets)},
                     {"bone_radii", s.bone_radii},
                     {"bone_tips", vecs(s.bone_tips)}};
}

void from_json(const nlohmann::json& j, Skeleton& s) {
  auto vecs = [](const nlohmann::json& a) {
    std::vector<Vec3> v;
    for (const auto& x : a) v.emplace_back(x.at(0).get<double>(), x.at(1).get<double>(), x.at(2).get<double>());
    return v;
  };
  s.parent = j.at("parent").get<std::vector<int>>();
  s.rest_offsets = vecs(j.at("rest_offsets"));
  s.bone_radii = j.at("bone_radii").get<std::vector<double>>();
  if (j.contains("bone_tips")) {
    s.bone_tips = vecs(j.at("bone_tips"));
  } else {
    // Default: toward the mean of the children, zero for leaves.
    s.bone_tips.assign(s.parent.size(), Vec3::Zero());
    std::vector<int> kids(s.parent.size(), 0);
    for (std::size_t b = 1; b < s.parent.size(); ++b) {
      const auto p = static_cast<std::size_t>(s.parent[b]);
      s.bone_tips[p] += s.rest_offsets[b];
      ++kids[p];
    }
    for (std::size_t b = 0; b < s.parent.size(); ++b)
      if (kids[b]) s.bone_tips[b] /= kids[b];
  }
  if (j.contains("B") && j.at("B").get<int>() != s.joint_count()) throw ContractError("skeleton B mismatch");
  s.validate();
}

void to_json(nlohmann::json& j, const Pose& p) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& x : p.axis_angle) a.push_back({x.x(), x.y(), x.z()});
  j = nlohmann::json{{"axis_angle", a},
                     {"root_translation", {p.root_translation.x(), p.root_translation.y(), p.root_translation.z()}}};
}

void from_json(const nlohmann::json& j, Pose& p) {
  p.axis_angle.clear();
  for (const auto& x : j.at("axis_angle")) {
    p.axis_angle.emplace_back(x.at(0).get<double>(), x.at(1).get<double>(), x.at(2).get<double>());
  }
  const auto& t = j.at("root_translation");
  p.root_translation = Vec3(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
  for (const auto& a : p.axis_angle) {
    if (!a.allFinite()) throw ContractError("pose contains non-finite values");
  }
}

}  // namespace anerf
