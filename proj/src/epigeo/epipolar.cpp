#include <epirefine/epigeo/epipolar.hpp>

#include <Eigen/SVD>

#include <cmath>

namespace epirefine::epigeo {

namespace {

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return s;
}

}  // namespace

double FundamentalMatrix::smallest_singular_value_ratio() const {
  Eigen::JacobiSVD<Mat3> svd(F);
  return svd.singularValues()(2) / svd.singularValues()(0);
}

Vec2 FundamentalMatrix::ref_epipole() const {
  Eigen::JacobiSVD<Mat3> svd(F, Eigen::ComputeFullV);
  const Vec3 e = svd.matrixV().col(2);
  return {e.x() / e.z(), e.y() / e.z()};
}

Vec2 FundamentalMatrix::gen_epipole() const {
  Eigen::JacobiSVD<Mat3> svd(F, Eigen::ComputeFullU);
  const Vec3 e = svd.matrixU().col(2);
  return {e.x() / e.z(), e.y() / e.z()};
}

Mat3 essential_from_relative(const RelativePose& rel) {
  if (rel.t.norm() <= 1e-12)
    throw DegeneratePose("essential_from_relative: zero translation");
  return skew(rel.t) * rel.R;
}

FundamentalMatrix fundamental_from_essential(const Mat3& e, const Intrinsics& k_ref,
                                             const Intrinsics& k_gen) {
  k_ref.validate();
  k_gen.validate();
  Mat3 f = k_gen.inverse_matrix().transpose() * e * k_ref.inverse_matrix();
  f /= f.norm();
  return {f};
}

FundamentalMatrix fundamental_from_relative(const RelativePose& rel, const Intrinsics& k_ref,
                                            const Intrinsics& k_gen) {
  return fundamental_from_essential(essential_from_relative(rel), k_ref, k_gen);
}

namespace {

Line2 make_line(const Vec3& l) {
  Line2 out{l.x(), l.y(), l.z(), false};
  const double dir = std::hypot(l.x(), l.y());
  const double mag = std::abs(l.z());
  if (dir <= 1e-12 * std::max(1.0, mag)) out.degenerate = true;
  return out;
}

}  // namespace

Line2 epipolar_line(const FundamentalMatrix& f, const Vec2& p) {
  return make_line(f.F * Vec3(p.x(), p.y(), 1.0));
}

Line2 epipolar_line_transposed(const FundamentalMatrix& f, const Vec2& p) {
  return make_line(f.F.transpose() * Vec3(p.x(), p.y(), 1.0));
}

double point_line_distance(const Vec2& p, const Line2& l) {
  const double n = std::hypot(l.a, l.b);
  if (l.degenerate || n <= 0.0)
    throw EpipoleDegenerate("point_line_distance: line direction is zero");
  return std::abs(l.a * p.x() + l.b * p.y() + l.c) / n;
}

double symmetric_epipolar_distance(const FundamentalMatrix& f, const Vec2& x, const Vec2& y) {
  return point_line_distance(y, epipolar_line(f, x)) +
         point_line_distance(x, epipolar_line_transposed(f, y));
}

double one_sided_epipolar_distance(const FundamentalMatrix& f, const Vec2& x, const Vec2& y) {
  return point_line_distance(y, epipolar_line(f, x));
}

}  // namespace epirefine::epigeo
