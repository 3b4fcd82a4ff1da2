#include "anerf/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <nlohmann/json.hpp>
#include <numbers>

#include "anerf/rng.hpp"

namespace anerf {

namespace {

constexpr double kPi = std::numbers::pi;

// Joint whose rest placement mirrors j across x = 0 (j itself on the midline).
std::vector<int> mirror_partners(const Skeleton& s) {
  const auto rest = s.rest_joints();
  const int n = s.joint_count();
  std::vector<int> out(n);
  for (int j = 0; j < n; ++j) {
    out[j] = j;
    const Vec3 m(-rest[j].x(), rest[j].y(), rest[j].z());
    const Vec3 mt(-s.bone_tips[j].x(), s.bone_tips[j].y(), s.bone_tips[j].z());
    for (int k = 0; k < n; ++k) {
      if ((rest[k] - m).norm() < 1e-9 && (s.bone_tips[k] - mt).norm() < 1e-9) {
        out[j] = k;
        break;
      }
    }
  }
  return out;
}

// Motion amplitude (radians per axis) for each joint of the template.
std::vector<Vec3> motion_amplitude(int joints) {
  if (joints == 8) {
    return {{0.05, 0.35, 0.05}, {0.15, 0.10, 0.10}, {0.10, 0.20, 0.05}, {0.25, 0.30, 0.10},
            {0.40, 0.30, 0.70}, {0.40, 0.30, 0.70}, {0.50, 0.10, 0.12}, {0.50, 0.10, 0.12}};
  }
  std::vector<Vec3> a(static_cast<std::size_t>(joints), Vec3(0.2, 0.15, 0.2));
  a[0] = Vec3(0.05, 0.35, 0.05);
  return a;
}

Vec3 clamp01(const Vec3& c) { return c.cwiseMax(0.0).cwiseMin(1.0); }

}  // namespace

SyntheticActor make_actor(std::uint64_t seed, int bones) {
  SyntheticActor a;
  a.seed = seed;
  const Skeleton base = template_skeleton(bones);
  const auto partner = mirror_partners(base);
  Rng rng(seed);
  const auto n = static_cast<std::size_t>(bones);
  a.radius_scale.assign(n, 1.0);
  a.length_scale.assign(n, 1.0);
  a.albedo.assign(n, Vec3::Zero());
  for (std::size_t b = 0; b < n; ++b) {
    const auto p = static_cast<std::size_t>(partner[b]);
    if (p < b) {
      a.radius_scale[b] = a.radius_scale[p];
      a.length_scale[b] = a.length_scale[p];
      a.albedo[b] = a.albedo[p];
      continue;
    }
    a.radius_scale[b] = rng.uniform(0.8, 1.25);
    a.length_scale[b] = rng.uniform(0.85, 1.15);
    a.albedo[b] = Vec3(rng.uniform(0.15, 0.9), rng.uniform(0.15, 0.9), rng.uniform(0.15, 0.9));
  }
  a.stripe_frequency = rng.uniform(2.5, 5.0);
  a.stripe_amplitude = rng.uniform(0.15, 0.35);
  a.motion_phase.resize(n);
  a.motion_phase2.resize(n);
  for (std::size_t b = 0; b < n; ++b) {
    for (int k = 0; k < 3; ++k) a.motion_phase[b][k] = rng.uniform(0.0, 2 * kPi);
    for (int k = 0; k < 3; ++k) a.motion_phase2[b][k] = rng.uniform(0.0, 2 * kPi);
  }

  a.skeleton = base;
  for (std::size_t b = 0; b < n; ++b) {
    a.skeleton.bone_radii[b] = base.bone_radii[b] * a.radius_scale[b];
    a.skeleton.bone_tips[b] = base.bone_tips[b] * a.length_scale[b];
    const int par = base.parent[b];
    if (par >= 0) a.skeleton.rest_offsets[b] = base.rest_offsets[b] * a.length_scale[static_cast<std::size_t>(par)];
  }
  a.skeleton.validate();
  return a;
}

Pose actor_pose(const SyntheticActor& actor, double t) {
  // Two incommensurate frequencies keep the sequence from repeating.
  constexpr double w1 = 2 * kPi / 40.0;
  const double w2 = w1 * std::numbers::sqrt2;
  const int n = actor.skeleton.joint_count();
  const auto amp = motion_amplitude(n);
  Pose p = Pose::zero(n);
  for (int b = 0; b < n; ++b) {
    for (int k = 0; k < 3; ++k) {
      p.axis_angle[b][k] = amp[b][k] * (0.7 * std::sin(w1 * t + actor.motion_phase[b][k]) +
                                        0.3 * std::sin(w2 * t + actor.motion_phase2[b][k]));
    }
  }
  p.root_translation = Vec3(0.05 * std::sin(w1 * t + actor.motion_phase[0][0]), 0.0,
                            0.05 * std::sin(w2 * t + actor.motion_phase[0][2]));
  return p;
}

double ray_capsule(const Vec3& ro, const Vec3& rd, const Vec3& pa, const Vec3& pb, double r) {
  const Vec3 ba = pb - pa, oa = ro - pa;
  const double baba = ba.dot(ba), bard = ba.dot(rd), baoa = ba.dot(oa);
  const double rdoa = rd.dot(oa), oaoa = oa.dot(oa);
  const double dd = rd.dot(rd);
  if (baba > 1e-18) {
    const double a = baba * dd - bard * bard;
    const double b = baba * rdoa - baoa * bard;
    const double c = baba * oaoa - baoa * baoa - r * r * baba;
    const double h = b * b - a * c;
    if (h >= 0 && a > 1e-18) {
      const double t = (-b - std::sqrt(h)) / a;
      const double y = baoa + t * bard;
      if (y > 0 && y < baba && t > 0) return t;
    }
  }
  // Spherical caps.
  double best = -1;
  for (const Vec3& centre : {pa, pb}) {
    const Vec3 oc = ro - centre;
    const double b = oc.dot(rd), c = oc.dot(oc) - r * r;
    const double h = b * b - dd * c;
    if (h < 0) continue;
    const double t = (-b - std::sqrt(h)) / dd;
    if (t > 0 && (best < 0 || t < best)) best = t;
  }
  return best;
}

GroundTruth render_gt(const SyntheticActor& actor, const Pose& pose, const Camera& camera) {
  const Skeleton& s = actor.skeleton;
  const auto transforms = forward_kinematics(s, pose);
  const auto rest = s.rest_joints();
  const int n = s.joint_count();
  std::vector<Mat4> inverse(static_cast<std::size_t>(n));
  for (int b = 0; b < n; ++b) inverse[b] = rigid_inverse(transforms[b]);

  const Vec3 light = Vec3(0.3, 0.6, 1.0).normalized();
  const Vec3 origin = camera.center();
  const Mat3 kinv = camera.intrinsics.inverse();
  const Mat3 rt = camera.rotation.transpose();

  GroundTruth gt;
  gt.image = Image(camera.height, camera.width, 3, 1.0);
  gt.mask = Image(camera.height, camera.width, 1, 0.0);
  gt.depth.assign(static_cast<std::size_t>(camera.height) * camera.width, std::numeric_limits<double>::infinity());
  for (int i = 0; i < camera.height; ++i) {
    for (int j = 0; j < camera.width; ++j) {
      const Vec3 dir = (rt * (kinv * Vec3(j + 0.5, i + 0.5, 1.0))).normalized();
      double best = std::numeric_limits<double>::infinity();
      int hit = -1;
      for (int b = 0; b < n; ++b) {
        const Mat3 rinv = inverse[b].topLeftCorner<3, 3>();
        const Vec3 ro = rinv * origin + inverse[b].topRightCorner<3, 1>();
        const Vec3 rd = rinv * dir;
        const double t = ray_capsule(ro, rd, rest[b], rest[b] + s.bone_tips[b], s.bone_radii[b]);
        if (t > 0 && t < best) {
          best = t;
          hit = b;
        }
      }
      if (hit < 0) continue;
      const Mat4& inv = inverse[hit];
      const Vec3 p = origin + best * dir;
      const Vec3 pr = inv.topLeftCorner<3, 3>() * p + inv.topRightCorner<3, 1>();
      const Vec3 a = rest[hit], ab = s.bone_tips[hit];
      const double len2 = ab.squaredNorm();
      const double u = len2 > 0 ? std::clamp((pr - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
      const Vec3 normal_rest = (pr - (a + u * ab)).normalized();
      const Vec3 normal = transforms[hit].topLeftCorner<3, 3>() * normal_rest;
      const double axial = len2 > 0 ? (pr - a).dot(ab) / std::sqrt(len2) : pr.y() - a.y();
      const double stripe = 1.0 + actor.stripe_amplitude * std::sin(2 * kPi * actor.stripe_frequency * axial);
      const double shade = 0.4 + 0.6 * std::max(0.0, normal.dot(light));
      const Vec3 c = clamp01(actor.albedo[hit] * stripe * shade);
      for (int k = 0; k < 3; ++k) gt.image.at(i, j, k) = c[k];
      gt.mask.at(i, j, 0) = 1.0;
      gt.depth[static_cast<std::size_t>(i) * camera.width + j] = best;
    }
  }
  return gt;
}

std::string actor_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "actor_%02d", index);
  return buf;
}

std::uint64_t actor_seed(const DatasetManifest& m, int index) {
  return m.seed * 1000003ULL + static_cast<std::uint64_t>(index) * 7919ULL + 17ULL;
}

namespace {
constexpr double kLookHeight = -0.03;
}

Camera training_camera(const DatasetManifest& m) {
  return look_at(Vec3(0, kLookHeight, m.camera_distance), Vec3(0, kLookHeight, 0), Vec3(0, 1, 0),
                 m.focal_factor * m.width, m.width, m.height);
}

Camera eval_camera(const DatasetManifest& m, int k) {
  const double az = 2 * kPi * (k + 0.5) / std::max(1, m.eval_views);
  const Vec3 eye(m.camera_distance * std::sin(az), kLookHeight + 0.3, m.camera_distance * std::cos(az));
  return look_at(eye, Vec3(0, kLookHeight, 0), Vec3(0, 1, 0), m.focal_factor * m.width, m.width, m.height);
}

double eval_time(const DatasetManifest& m, int k) { return m.frames + 10.0 + 3.7 * k; }

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  j = nlohmann::json{{"seed", m.seed},
                     {"train_actors", m.train_actors},
                     {"test_actors", m.test_actors},
                     {"frames", m.frames},
                     {"eval_views", m.eval_views},
                     {"width", m.width},
                     {"height", m.height},
                     {"bones", m.bones},
                     {"camera_distance", m.camera_distance},
                     {"focal_factor", m.focal_factor}};
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
  j.at("seed").get_to(m.seed);
  j.at("train_actors").get_to(m.train_actors);
  j.at("test_actors").get_to(m.test_actors);
  j.at("frames").get_to(m.frames);
  j.at("eval_views").get_to(m.eval_views);
  j.at("width").get_to(m.width);
  j.at("height").get_to(m.height);
  j.at("bones").get_to(m.bones);
  j.at("camera_distance").get_to(m.camera_distance);
  j.at("focal_factor").get_to(m.focal_factor);
}

namespace {

std::string frame_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d.png", index);
  return buf;
}

}  // namespace

void make_dataset(const DatasetManifest& m, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (m.train_actors < 0 || m.test_actors < 0 || m.frames < 1 || m.width < 1 || m.height < 1) {
    throw ContractError("make_dataset: invalid manifest");
  }
  fs::create_directories(root);
  nlohmann::json manifest = m;
  manifest["actors"] = nlohmann::json::array();
  const int total = m.train_actors + m.test_actors;
  for (int a = 0; a < total; ++a) {
    const std::string id = actor_id(a);
    const std::string split = a < m.train_actors ? "train" : "test";
    const SyntheticActor actor = make_actor(actor_seed(m, a), m.bones);
    const fs::path dir = root / id;
    fs::create_directories(dir / "frames");
    fs::create_directories(dir / "masks");
    nlohmann::json meta{{"actor", id}, {"split", split}, {"seed", actor.seed}, {"skeleton", actor.skeleton}};
    meta["frames"] = nlohmann::json::array();
    auto emit = [&](int index, const std::string& tag, const Pose& pose, const Camera& cam) {
      const GroundTruth gt = render_gt(actor, pose, cam);
      write_png(dir / "frames" / frame_name(index), gt.image);
      write_png(dir / "masks" / frame_name(index), gt.mask);
      meta["frames"].push_back({{"index", index}, {"tag", tag}, {"pose", pose}, {"camera", cam}});
    };
    const Camera train_cam = training_camera(m);
    for (int f = 0; f < m.frames; ++f) emit(f, "train", actor_pose(actor, f), train_cam);
    for (int k = 0; k < m.eval_views; ++k) emit(m.frames + k, "eval", actor_pose(actor, eval_time(m, k)), eval_camera(m, k));
    write_file_atomic(dir / "meta.json", meta.dump(1));
    manifest["actors"].push_back({{"id", id}, {"split", split}});
  }
  write_file_atomic(root / "manifest.json", manifest.dump(1));
}

std::vector<int> ActorData::frames_with_tag(const std::string& tag) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < frames.size(); ++i)
    if (frames[i].tag == tag) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> Dataset::actors_with_split(const std::string& split) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < actors.size(); ++i)
    if (actors[i].split == split) out.push_back(static_cast<int>(i));
  return out;
}

const ActorData& Dataset::actor(const std::string& id) const {
  for (const auto& a : actors)
    if (a.id == id) return a;
  throw ContractError("unknown actor '" + id + "'");
}

Dataset load_dataset(const std::filesystem::path& root) {
  const auto manifest = nlohmann::json::parse(read_file(root / "manifest.json"));
  Dataset ds;
  ds.manifest = manifest.get<DatasetManifest>();
  for (const auto& entry : manifest.at("actors")) {
    ActorData a;
    a.id = entry.at("id").get<std::string>();
    a.split = entry.at("split").get<std::string>();
    const auto dir = root / a.id;
    const auto meta = nlohmann::json::parse(read_file(dir / "meta.json"));
    a.skeleton = meta.at("skeleton").get<Skeleton>();
    for (const auto& fj : meta.at("frames")) {
      FrameRecord f;
      f.index = fj.at("index").get<int>();
      f.tag = fj.at("tag").get<std::string>();
      f.pose = fj.at("pose").get<Pose>();
      f.camera = fj.at("camera").get<Camera>();
      f.image = read_png(dir / "frames" / frame_name(f.index));
      f.mask = read_png(dir / "masks" / frame_name(f.index));
      a.frames.push_back(std::move(f));
    }
    ds.actors.push_back(std::move(a));
  }
  return ds;
}

}  // namespace anerf
