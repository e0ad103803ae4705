#pragma once

#include <array>

#include <epirefine/scene/render.hpp>

namespace epirefine::scene {

// Triangle mesh unprojected from a depth map. Vertices are world points;
// each vertex remembers the reference pixel it came from and carries that
// pixel's color once colors are attached.
struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Vec3> vertex_colors;
  std::vector<std::array<int, 3>> faces;
};

struct WarpResult {
  Image image;  // H x W x 3
  Mask mask;    // true where any triangle covers the pixel
};

// Divides by the 20th percentile of the valid depths (linear interpolation
// between order statistics). Throws if no pixel is valid.
DepthMap normalize_depth(const DepthMap& depth);

// Returns the interpolated q-percentile (q in [0,100]) of the valid depths.
double depth_percentile(const DepthMap& depth, double q);

// One vertex per valid pixel; two triangles per fully-valid 2x2 pixel quad.
// Vertex colors are sampled from ref_image at the originating pixel.
Mesh depth_to_mesh(const DepthMap& depth, const Intrinsics& k, const Pose& ref_pose,
                   const Image& ref_image);

// Removes faces whose normal deviates from the direction toward the camera
// center by strictly more than max_angle_deg (normals oriented toward the
// camera before the test).
Mesh cull_faces(const Mesh& mesh, const Vec3& camera_center, double max_angle_deg = 70.0);

// Z-buffered rasterization of the colored mesh into the target view.
WarpResult render_warp(const Mesh& mesh, const Pose& target_pose, const Intrinsics& k,
                       int height, int width);

}  // namespace epirefine::scene
