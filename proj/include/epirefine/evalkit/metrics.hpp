#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <epirefine/epigeo/epipolar.hpp>
#include <epirefine/image.hpp>
#include <epirefine/matcher/matcher.hpp>

namespace epirefine::evalkit {

// arccos((tr(R_gen R_gt^T) - 1) / 2), argument clamped, degrees in [0, 180].
double rotation_error_deg(const epigeo::Mat3& r_gen, const epigeo::Mat3& r_gt);

// Angle between translation directions, degrees in [0, 180]. Throws Error
// when either norm is below 1e-12.
double translation_error_deg(const epigeo::Vec3& t_gen, const epigeo::Vec3& t_gt);

struct EpipolarHistogram {
  double bin_width_px = 0.5;
  double max_px = 20.0;
  std::vector<std::int64_t> counts;  // counts.back() is the overflow bin
  std::int64_t total = 0;
  double mean_px = 0.0;
  double median_px = 0.0;

  // "bin_lo,bin_hi,count" rows; the overflow row has bin_hi "inf".
  std::string to_csv() const;
};

// Symmetric (default) or one-sided epipolar distance per match, binned.
// Matches sitting numerically on an epipole are skipped and do not count
// toward the total.
EpipolarHistogram epipolar_histogram(const matcher::MatchSet& matches,
                                     const epigeo::FundamentalMatrix& f,
                                     double bin_width_px = 0.5, double max_px = 20.0,
                                     bool one_sided = false);

// PSNR over masked pixels for dynamic range 1.0, capped at 99 dB. Throws
// Error on shape mismatch or an empty mask.
double masked_psnr(const Image& a, const Image& b, const Mask& mask);

// Mean SSIM (7x7 Gaussian window, sigma 1.5, standard constants for dynamic
// range 1.0) on luma, over windows fully inside both the mask and the
// image. Throws Error when no window qualifies.
double masked_ssim(const Image& a, const Image& b, const Mask& mask);

struct EvalReport {
  double r_dist_deg = 0.0;
  double t_dist_deg = 0.0;
  double epi_mean_px = 0.0;
  double epi_median_px = 0.0;
  double masked_psnr_db = 0.0;
  double masked_ssim = 0.0;
  int inliers = 0;
  std::vector<std::string> flags;

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
};

}  // namespace epirefine::evalkit
