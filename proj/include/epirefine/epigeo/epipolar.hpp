#pragma once

#include <epirefine/epigeo/camera.hpp>

namespace epirefine::epigeo {

// Rank-2 map from reference-image points to epipolar lines in the other
// image: l_gen = F * x_ref. Stored normalized to unit Frobenius norm.
struct FundamentalMatrix {
  Mat3 F = Mat3::Zero();

  Mat3 transposed() const { return F.transpose(); }
  double smallest_singular_value_ratio() const;
  // Epipole in the reference image (F e = 0), pixel coordinates.
  Vec2 ref_epipole() const;
  // Epipole in the generated image (F^T e' = 0), pixel coordinates.
  Vec2 gen_epipole() const;
};

struct Line2 {
  double a = 0, b = 0, c = 0;
  bool degenerate = false;  // epipole input: (a,b) ~ 0
};

// E = [t]x R. Throws DegeneratePose for ~zero translation.
Mat3 essential_from_relative(const RelativePose& rel);

// F = K_gen^-T E K_ref^-1, unit Frobenius norm.
FundamentalMatrix fundamental_from_essential(const Mat3& e, const Intrinsics& k_ref,
                                             const Intrinsics& k_gen);

// Convenience: F from the relative pose target-in-reference-frame.
FundamentalMatrix fundamental_from_relative(const RelativePose& rel, const Intrinsics& k_ref,
                                            const Intrinsics& k_gen);

// l = F * (px, py, 1). Sets `degenerate` when p is (numerically) the epipole.
Line2 epipolar_line(const FundamentalMatrix& f, const Vec2& p);
// Line in the reference image for a generated-image point: l = F^T * (p,1).
Line2 epipolar_line_transposed(const FundamentalMatrix& f, const Vec2& p);

// |a px + b py + c| / sqrt(a^2 + b^2). Throws EpipoleDegenerate on a=b=0.
double point_line_distance(const Vec2& p, const Line2& l);

// d(y, Fx) + d(x, F^T y), pixels.
double symmetric_epipolar_distance(const FundamentalMatrix& f, const Vec2& x, const Vec2& y);
// One-sided variant d(y, Fx), for the report flag.
double one_sided_epipolar_distance(const FundamentalMatrix& f, const Vec2& x, const Vec2& y);

}  // namespace epirefine::epigeo
