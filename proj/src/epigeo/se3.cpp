#include <epirefine/epigeo/se3.hpp>

#include <cmath>

namespace epirefine::epigeo {

namespace {

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return s;
}

}  // namespace

Pose se3_exp(const Eigen::Matrix<double, 6, 1>& xi) {
  const Vec3 omega = xi.head<3>();
  const Vec3 v = xi.tail<3>();
  const double theta = omega.norm();
  const Mat3 w = skew(omega);
  double a, b, c;  // sin/theta, (1-cos)/theta^2, (theta-sin)/theta^3
  if (theta < 1e-6) {
    a = 1.0 - theta * theta / 6.0;
    b = 0.5 - theta * theta / 24.0;
    c = 1.0 / 6.0 - theta * theta / 120.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / (theta * theta);
    c = (theta - std::sin(theta)) / (theta * theta * theta);
  }
  Pose p;
  p.R = Mat3::Identity() + a * w + b * w * w;
  const Mat3 vmat = Mat3::Identity() + b * w + c * w * w;
  p.t = vmat * v;
  return p;
}

Mat3 axis_angle(const Vec3& axis, double angle_rad) {
  Eigen::Matrix<double, 6, 1> xi = Eigen::Matrix<double, 6, 1>::Zero();
  xi.head<3>() = axis.normalized() * angle_rad;
  return se3_exp(xi).R;
}

PoseTensors se3_exp_tensors(diffcore::Tape& tape, const diffcore::Tensor& xi) {
  using namespace diffcore;
  if (xi.size() != 6) throw ShapeError("se3_exp_tensors: xi must have 6 elements");
  Tensor x = reshape(xi, {6, 1});
  Tensor omega = slice_rows(x, 0, 3);
  Tensor v = slice_rows(x, 3, 6);

  // hat(omega) via the so(3) generators
  Tensor gx = tape.constant({3, 3}, {0, 0, 0, 0, 0, -1, 0, 1, 0});
  Tensor gy = tape.constant({3, 3}, {0, 0, 1, 0, 0, 0, -1, 0, 0});
  Tensor gz = tape.constant({3, 3}, {0, -1, 0, 1, 0, 0, 0, 0, 0});
  Tensor wx = reshape(slice_rows(omega, 0, 1), {1});
  Tensor wy = reshape(slice_rows(omega, 1, 2), {1});
  Tensor wz = reshape(slice_rows(omega, 2, 3), {1});
  Tensor hat = add(add(mul(gx, wx), mul(gy, wy)), mul(gz, wz));
  Tensor hat2 = matmul(hat, hat);

  Tensor theta2 = squared_norm(omega);
  const double th = std::sqrt(theta2.value());
  Tensor a, b, c;
  if (th < 1e-6) {
    a = tape.constant_scalar(1.0 - th * th / 6.0);
    b = tape.constant_scalar(0.5 - th * th / 24.0);
    c = tape.constant_scalar(1.0 / 6.0 - th * th / 120.0);
  } else {
    Tensor theta = sqrt_(theta2);
    a = div(sin_(theta), theta);
    b = div(sub(tape.constant_scalar(1.0), cos_(theta)), theta2);
    c = div(sub(tape.constant_scalar(1.0), a), theta2);
  }

  Tensor eye = tape.constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  PoseTensors pt;
  pt.rot = add(eye, add(mul(hat, a), mul(hat2, b)));
  Tensor vmat = add(eye, add(mul(hat, b), mul(hat2, c)));
  pt.trans = matmul(vmat, v);
  return pt;
}

PoseTensors perturbed_pose_tensors(diffcore::Tape& tape, const diffcore::Tensor& xi,
                                   const Pose& base) {
  using namespace diffcore;
  const PoseTensors d = se3_exp_tensors(tape, xi);
  std::vector<double> r(9), t(3);
  for (int i = 0; i < 3; ++i) {
    t[static_cast<std::size_t>(i)] = base.t(i);
    for (int j = 0; j < 3; ++j) r[static_cast<std::size_t>(3 * i + j)] = base.R(i, j);
  }
  Tensor base_r = tape.constant({3, 3}, std::move(r));
  Tensor base_t = tape.constant({3, 1}, std::move(t));
  PoseTensors pt;
  pt.rot = matmul(d.rot, base_r);
  pt.trans = add(matmul(d.rot, base_t), d.trans);
  return pt;
}

Pose pose_from_tensors(const PoseTensors& pt) {
  Pose p;
  const auto& r = pt.rot.values();
  const auto& t = pt.trans.values();
  for (int i = 0; i < 3; ++i) {
    p.t(i) = t[static_cast<std::size_t>(i)];
    for (int j = 0; j < 3; ++j) p.R(i, j) = r[static_cast<std::size_t>(3 * i + j)];
  }
  return p;
}

}  // namespace epirefine::epigeo
