#pragma once

#include <Eigen/Core>

#include <string>

#include <epirefine/errors.hpp>

namespace epirefine::epigeo {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

// Pinhole calibration, pixels.
struct Intrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  int width = 0, height = 0;

  Mat3 matrix() const;
  Mat3 inverse_matrix() const;
  void validate() const;

  std::string to_json() const;
  static Intrinsics from_json(const std::string& text);
};

// Rigid world-to-camera transform: x_cam = R * X + t.
// This convention is used everywhere in this project; all relative poses,
// essential/fundamental matrices and camera centers derive from it.
struct Pose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  // Checks R^T R = I and det(R) = +1 within 1e-9.
  void validate() const;

  Pose inverse() const;
  // this * other: apply `other` first, then this.
  Pose compose(const Pose& other) const;
  Vec3 camera_center() const;  // -R^T t
  Vec3 transform(const Vec3& x_world) const { return R * x_world + t; }

  std::string to_json() const;
  static Pose from_json(const std::string& text);
};

// Pose of the target camera expressed in the reference camera frame.
using RelativePose = Pose;

// rel = target ∘ ref^{-1}
RelativePose relative_pose(const Pose& ref, const Pose& target);

// Pixel projection; throws DegeneratePose for points at or behind the camera.
Vec2 project(const Pose& pose, const Intrinsics& k, const Vec3& x_world);

// Camera at `eye` looking at `at`, `up` approximately up. World-to-camera.
Pose look_at(const Vec3& eye, const Vec3& at, const Vec3& up = Vec3(0, -1, 0));

// Camera on a sphere of radius `radius` around `center`, offset from the
// -z viewing axis by azimuth/elevation (degrees), looking at `center`.
Pose orbit_pose(const Vec3& center, double radius, double azimuth_deg, double elevation_deg);

}  // namespace epirefine::epigeo
