#include <epirefine/epigeo/camera.hpp>

#include <Eigen/Geometry>
#include <json.hpp>

#include <cmath>

namespace epirefine::epigeo {

using nlohmann::ordered_json;

Mat3 Intrinsics::matrix() const {
  Mat3 k;
  k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return k;
}

Mat3 Intrinsics::inverse_matrix() const {
  Mat3 ki;
  ki << 1.0 / fx, 0, -cx / fx, 0, 1.0 / fy, -cy / fy, 0, 0, 1;
  return ki;
}

void Intrinsics::validate() const {
  if (!(fx > 0 && fy > 0)) throw Error("Intrinsics: focal lengths must be positive");
  if (!(cx >= 0 && cx < width && cy >= 0 && cy < height))
    throw Error("Intrinsics: principal point outside image");
}

std::string Intrinsics::to_json() const {
  ordered_json j;
  j["fx"] = fx;
  j["fy"] = fy;
  j["cx"] = cx;
  j["cy"] = cy;
  j["width"] = width;
  j["height"] = height;
  return j.dump();
}

Intrinsics Intrinsics::from_json(const std::string& text) {
  const auto j = ordered_json::parse(text);
  Intrinsics k;
  k.fx = j.at("fx");
  k.fy = j.at("fy");
  k.cx = j.at("cx");
  k.cy = j.at("cy");
  k.width = j.at("width");
  k.height = j.at("height");
  k.validate();
  return k;
}

void Pose::validate() const {
  const double ortho = (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho > 1e-9) throw Error("Pose: rotation is not orthonormal");
  if (std::abs(R.determinant() - 1.0) > 1e-9) throw Error("Pose: det(R) != +1");
}

Pose Pose::inverse() const { return {R.transpose(), -(R.transpose() * t)}; }

Pose Pose::compose(const Pose& other) const { return {R * other.R, R * other.t + t}; }

Vec3 Pose::camera_center() const { return -(R.transpose() * t); }

std::string Pose::to_json() const {
  ordered_json j;
  j["R"] = {{R(0, 0), R(0, 1), R(0, 2)},
            {R(1, 0), R(1, 1), R(1, 2)},
            {R(2, 0), R(2, 1), R(2, 2)}};
  j["t"] = {t.x(), t.y(), t.z()};
  return j.dump();
}

Pose Pose::from_json(const std::string& text) {
  const auto j = ordered_json::parse(text);
  Pose p;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) p.R(r, c) = j.at("R").at(r).at(c);
  for (int i = 0; i < 3; ++i) p.t(i) = j.at("t").at(i);
  p.validate();
  return p;
}

RelativePose relative_pose(const Pose& ref, const Pose& target) {
  return target.compose(ref.inverse());
}

Vec2 project(const Pose& pose, const Intrinsics& k, const Vec3& x_world) {
  const Vec3 xc = pose.transform(x_world);
  if (xc.z() <= 1e-12) throw DegeneratePose("project: point at or behind the camera");
  return {k.fx * xc.x() / xc.z() + k.cx, k.fy * xc.y() / xc.z() + k.cy};
}

Pose look_at(const Vec3& eye, const Vec3& at, const Vec3& up) {
  // y-down image convention: up = (0,-1,0) and forward = +z give the
  // identity orientation
  Vec3 z = (at - eye).normalized();
  Vec3 x = z.cross(up).normalized();
  Vec3 y = z.cross(x);
  Mat3 r;
  r.row(0) = x;
  r.row(1) = y;
  r.row(2) = z;
  return {r, -(r * eye)};
}

Pose orbit_pose(const Vec3& center, double radius, double azimuth_deg, double elevation_deg) {
  const double az = azimuth_deg * M_PI / 180.0;
  const double el = elevation_deg * M_PI / 180.0;
  // azimuth 0, elevation 0 places the camera at center - radius * e_z,
  // i.e. the canonical reference camera looking down +z.
  const Vec3 dir(std::sin(az) * std::cos(el), -std::sin(el), -std::cos(az) * std::cos(el));
  return look_at(center + radius * dir, center);
}

}  // namespace epirefine::epigeo
