#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <epirefine/epigeo/camera.hpp>

namespace epirefine::scene {

using epigeo::Intrinsics;
using epigeo::Pose;
using epigeo::Vec2;
using epigeo::Vec3;

struct Primitive {
  Vec3 position = Vec3::Zero();  // world units
  Vec3 color = Vec3::Zero();     // rgb in [0,1]
  double radius = 0.0;           // world units
};

// Synthetic world of colored Gaussian splats. Immutable after construction.
struct Scene {
  std::uint64_t seed = 0;
  std::vector<Primitive> primitives;
  double scale = 1.0;  // scene-scale normalization constant

  std::string to_json() const;
  static Scene from_json(const std::string& text);
};

// Canonical reference camera (identity pose) and matching intrinsics; the
// scene generator places primitives in this camera's frustum.
Intrinsics default_intrinsics(int width = 128, int height = 128);
Pose reference_pose();
// Center of the default primitive cloud, used as the orbit target.
Vec3 scene_center(const Scene& s);

// Deterministic in seed. Primitives are placed so that at least 80% project
// inside the default reference view; depths are uniform in [depth_min, depth_max].
// `width` is the resolution the scene is meant to be rendered at; splat
// footprints are sized to roughly 0.8 - 1.6 px of sigma at that scale.
Scene make_scene(std::uint64_t seed, int n_primitives, double depth_min = 2.5,
                 double depth_max = 5.5, int width = 128);

}  // namespace epirefine::scene
