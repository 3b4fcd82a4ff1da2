#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "anerf/camera.hpp"
#include "anerf/image.hpp"

namespace anerf {

/// Procedural capsule actor. Left/right bone pairs share their scales so the
/// rest pose is mirror-symmetric.
struct SyntheticActor {
  std::uint64_t seed = 0;
  Skeleton skeleton;
  std::vector<double> radius_scale;
  std::vector<double> length_scale;
  std::vector<Vec3> albedo;
  double stripe_frequency = 0;  // cycles per metre along each bone
  double stripe_amplitude = 0;
  std::vector<Vec3> motion_phase;  // per joint and axis
  std::vector<Vec3> motion_phase2;
};

SyntheticActor make_actor(std::uint64_t seed, int bones = 8);

/// Smooth motion: per-joint sinusoids in frame time t with actor-specific phases.
Pose actor_pose(const SyntheticActor& actor, double t);

struct GroundTruth {
  Image image;                // RGB, white background
  Image mask;                 // 0 or 1
  std::vector<double> depth;  // ray parameter of the first hit, +inf on background
};

/// First hit of a ray with a capsule (segment a-b, radius r); negative if none.
double ray_capsule(const Vec3& origin, const Vec3& direction, const Vec3& a, const Vec3& b, double r);

/// Analytic render: per-pixel ray/capsule intersection with capsules moving
/// rigidly with their bones, Lambertian shading and a stripe texture.
GroundTruth render_gt(const SyntheticActor& actor, const Pose& pose, const Camera& camera);

struct DatasetManifest {
  std::uint64_t seed = 0;
  int train_actors = 8;
  int test_actors = 2;
  int frames = 60;  // training-camera frames per actor
  int eval_views = 16;
  int width = 32;
  int height = 32;
  int bones = 8;
  double camera_distance = 3.5;
  double focal_factor = 1.4;  // focal length in units of the image width
};

std::string actor_id(int index);
/// Actor seed derived from the dataset seed and actor index.
std::uint64_t actor_seed(const DatasetManifest& m, int index);
Camera training_camera(const DatasetManifest& m);
/// Held-out view k: orbiting camera and a pose outside the training time range.
Camera eval_camera(const DatasetManifest& m, int k);
double eval_time(const DatasetManifest& m, int k);

void make_dataset(const DatasetManifest& manifest, const std::filesystem::path& root);

struct FrameRecord {
  int index = 0;
  std::string tag;  // "train" (training camera) or "eval" (held-out view)
  Pose pose;
  Camera camera;
  Image image;
  Image mask;
};

struct ActorData {
  std::string id;
  std::string split;  // "train" or "test"
  Skeleton skeleton;
  std::vector<FrameRecord> frames;

  std::vector<int> frames_with_tag(const std::string& tag) const;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<ActorData> actors;

  std::vector<int> actors_with_split(const std::string& split) const;
  const ActorData& actor(const std::string& id) const;
};

Dataset load_dataset(const std::filesystem::path& root);

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

}  // namespace anerf
