#pragma once

#include <cstdint>
#include <vector>

#include <epirefine/epigeo/epipolar.hpp>
#include <epirefine/matcher/matcher.hpp>

namespace epirefine::evalkit {

struct RansacConfig {
  int iterations = 1000;
  double sampson_threshold_px = 1.5;
  std::uint64_t seed = 0;
};

// Relative pose of the generated camera in the reference camera frame,
// recovered from 2-D matches alone: t is a unit direction (the baseline
// scale is unobservable).
struct PoseEstimate {
  epigeo::Mat3 R = epigeo::Mat3::Identity();
  epigeo::Vec3 t = epigeo::Vec3::Zero();
  int inliers = 0;
  std::vector<bool> inlier_mask;
  // Set when the geometry does not determine the pose: (near-)zero baseline
  // or a cheirality vote split across candidate decompositions. R and t are
  // then the best guess and should not be trusted.
  bool degenerate = false;
};

// Normalized 8-point algorithm inside a seeded RANSAC loop (Sampson-error
// scoring), least-squares refit on the inlier set, then essential-matrix
// decomposition with a cheirality vote. Throws InsufficientMatches for
// fewer than 8 matches.
PoseEstimate estimate_relative_pose(const matcher::MatchSet& matches,
                                    const epigeo::Intrinsics& k_ref,
                                    const epigeo::Intrinsics& k_gen,
                                    const RansacConfig& cfg = {});

// Normalized 8-point fit on all given pairs (no robustness); returns the
// rank-2-enforced fundamental matrix. Building block of the above, exposed
// for testing.
epigeo::FundamentalMatrix fit_fundamental(const std::vector<epigeo::Vec2>& x,
                                          const std::vector<epigeo::Vec2>& y);

// Iteratively reweighted 8-point refinement that minimizes the first-order
// geometric (Sampson) error instead of the algebraic residual.
epigeo::FundamentalMatrix sampson_refit(const std::vector<epigeo::Vec2>& x,
                                        const std::vector<epigeo::Vec2>& y,
                                        epigeo::FundamentalMatrix init, int rounds);

// First-order (Sampson) approximation of the geometric error of a match
// under F, in pixels.
double sampson_distance(const epigeo::FundamentalMatrix& f, const epigeo::Vec2& x,
                        const epigeo::Vec2& y);

}  // namespace epirefine::evalkit
