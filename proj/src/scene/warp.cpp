#include <epirefine/scene/warp.hpp>

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>

namespace epirefine::scene {

double depth_percentile(const DepthMap& depth, double q) {
  std::vector<double> vals;
  vals.reserve(depth.depth.size());
  for (int y = 0; y < depth.height; ++y)
    for (int x = 0; x < depth.width; ++x)
      if (depth.valid.at(y, x)) vals.push_back(depth.at(y, x));
  if (vals.empty()) throw Error("depth_percentile: no valid pixels");
  std::sort(vals.begin(), vals.end());
  const double pos = q / 100.0 * static_cast<double>(vals.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const auto hi = std::min(lo + 1, vals.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return vals[lo] + frac * (vals[hi] - vals[lo]);
}

DepthMap normalize_depth(const DepthMap& depth) {
  const double divisor = depth_percentile(depth, 20.0);
  DepthMap out = depth;
  for (auto& d : out.depth) d /= divisor;
  return out;
}

Mesh depth_to_mesh(const DepthMap& depth, const Intrinsics& k, const Pose& ref_pose,
                   const Image& ref_image) {
  const int h = depth.height, w = depth.width;
  const Pose cam_to_world = ref_pose.inverse();
  Mesh mesh;
  std::vector<int> vertex_index(static_cast<std::size_t>(h) * w, -1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!depth.valid.at(y, x)) continue;
      const double z = depth.at(y, x);
      const Vec3 cam((x - k.cx) / k.fx * z, (y - k.cy) / k.fy * z, z);
      vertex_index[static_cast<std::size_t>(y) * w + x] = static_cast<int>(mesh.vertices.size());
      mesh.vertices.push_back(cam_to_world.transform(cam));
      mesh.vertex_colors.push_back(
          Vec3(ref_image.at(y, x, 0), ref_image.at(y, x, 1), ref_image.at(y, x, 2)));
    }
  for (int y = 0; y + 1 < h; ++y)
    for (int x = 0; x + 1 < w; ++x) {
      const int v00 = vertex_index[static_cast<std::size_t>(y) * w + x];
      const int v01 = vertex_index[static_cast<std::size_t>(y) * w + x + 1];
      const int v10 = vertex_index[static_cast<std::size_t>(y + 1) * w + x];
      const int v11 = vertex_index[static_cast<std::size_t>(y + 1) * w + x + 1];
      if (v00 < 0 || v01 < 0 || v10 < 0 || v11 < 0) continue;
      mesh.faces.push_back({v00, v01, v10});
      mesh.faces.push_back({v01, v11, v10});
    }
  return mesh;
}

Mesh cull_faces(const Mesh& mesh, const Vec3& camera_center, double max_angle_deg) {
  const double cos_max = std::cos(max_angle_deg * M_PI / 180.0);
  Mesh out;
  out.vertices = mesh.vertices;
  out.vertex_colors = mesh.vertex_colors;
  for (const auto& f : mesh.faces) {
    const Vec3& a = mesh.vertices[static_cast<std::size_t>(f[0])];
    const Vec3& b = mesh.vertices[static_cast<std::size_t>(f[1])];
    const Vec3& c = mesh.vertices[static_cast<std::size_t>(f[2])];
    Vec3 normal = (b - a).cross(c - a);
    const double nlen = normal.norm();
    if (nlen <= 0.0) continue;
    normal /= nlen;
    const Vec3 centroid = (a + b + c) / 3.0;
    Vec3 to_cam = camera_center - centroid;
    const double dlen = to_cam.norm();
    if (dlen <= 0.0) continue;
    to_cam /= dlen;
    double cosang = normal.dot(to_cam);
    if (cosang < 0.0) cosang = -cosang;  // orient the normal toward the camera
    // keep iff angle <= max (strictly-greater angles removed)
    if (cosang >= cos_max - 1e-12) out.faces.push_back(f);
  }
  return out;
}

WarpResult render_warp(const Mesh& mesh, const Pose& target_pose, const Intrinsics& k,
                       int height, int width) {
  WarpResult result;
  result.image = Image(height, width, 3);
  result.mask = Mask(height, width);
  std::vector<double> zbuf(static_cast<std::size_t>(height) * width,
                           std::numeric_limits<double>::infinity());

  struct Projected {
    double x, y, z;
    bool ok;
  };
  std::vector<Projected> proj(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3 cam = target_pose.transform(mesh.vertices[i]);
    if (cam.z() <= 1e-9) {
      proj[i] = {0, 0, 0, false};
      continue;
    }
    proj[i] = {k.fx * cam.x() / cam.z() + k.cx, k.fy * cam.y() / cam.z() + k.cy, cam.z(), true};
  }

  for (const auto& f : mesh.faces) {
    const auto& p0 = proj[static_cast<std::size_t>(f[0])];
    const auto& p1 = proj[static_cast<std::size_t>(f[1])];
    const auto& p2 = proj[static_cast<std::size_t>(f[2])];
    if (!p0.ok || !p1.ok || !p2.ok) continue;
    const double area = (p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y);
    if (std::abs(area) < 1e-12) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({p0.x, p1.x, p2.x}))));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(std::max({p0.x, p1.x, p2.x}))));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({p0.y, p1.y, p2.y}))));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(std::max({p0.y, p1.y, p2.y}))));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double w0 = ((p1.x - x) * (p2.y - y) - (p2.x - x) * (p1.y - y)) / area;
        const double w1 = ((p2.x - x) * (p0.y - y) - (p0.x - x) * (p2.y - y)) / area;
        const double w2 = 1.0 - w0 - w1;
        if (w0 < -1e-9 || w1 < -1e-9 || w2 < -1e-9) continue;
        const double z = w0 * p0.z + w1 * p1.z + w2 * p2.z;
        auto& zb = zbuf[static_cast<std::size_t>(y) * width + x];
        if (z >= zb) continue;
        zb = z;
        const Vec3 c = w0 * mesh.vertex_colors[static_cast<std::size_t>(f[0])] +
                       w1 * mesh.vertex_colors[static_cast<std::size_t>(f[1])] +
                       w2 * mesh.vertex_colors[static_cast<std::size_t>(f[2])];
        for (int ch = 0; ch < 3; ++ch) result.image.at(y, x, ch) = c(ch);
        result.mask.at(y, x) = true;
      }
  }
  return result;
}

}  // namespace epirefine::scene
