#include <epirefine/evalkit/metrics.hpp>

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace epirefine::evalkit {

using nlohmann::ordered_json;

double rotation_error_deg(const epigeo::Mat3& r_gen, const epigeo::Mat3& r_gt) {
  // arccos((tr(R_rel) - 1) / 2), evaluated through the relative quaternion:
  // identical angle, but well conditioned near 0 and 180 degrees where the
  // clamped arccos loses half the significant digits to roundoff.
  const Eigen::Quaterniond q(epigeo::Mat3(r_gen * r_gt.transpose()));
  return 2.0 * std::atan2(q.vec().norm(), std::abs(q.w())) * 180.0 / M_PI;
}

double translation_error_deg(const epigeo::Vec3& t_gen, const epigeo::Vec3& t_gt) {
  const double na = t_gen.norm(), nb = t_gt.norm();
  if (na < 1e-12 || nb < 1e-12)
    throw Error("translation_error_deg: direction undefined for near-zero vector");
  // atan2 form of the clamped arccos of the normalized dot product, exact
  // at 0 and 180 degrees.
  return std::atan2(t_gen.cross(t_gt).norm(), t_gen.dot(t_gt)) * 180.0 / M_PI;
}

std::string EpipolarHistogram::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "bin_lo,bin_hi,count\n";
  for (std::size_t i = 0; i + 1 < counts.size(); ++i)
    out << static_cast<double>(i) * bin_width_px << ','
        << static_cast<double>(i + 1) * bin_width_px << ',' << counts[i] << '\n';
  if (!counts.empty()) out << max_px << ",inf," << counts.back() << '\n';
  return out.str();
}

EpipolarHistogram epipolar_histogram(const matcher::MatchSet& matches,
                                     const epigeo::FundamentalMatrix& f,
                                     double bin_width_px, double max_px, bool one_sided) {
  if (matches.matches.empty()) throw Error("epipolar_histogram: no matches");
  if (!(bin_width_px > 0) || !(max_px > bin_width_px))
    throw Error("epipolar_histogram: bad bin layout");
  EpipolarHistogram h;
  h.bin_width_px = bin_width_px;
  h.max_px = max_px;
  const auto bins = static_cast<std::size_t>(std::ceil(max_px / bin_width_px));
  h.counts.assign(bins + 1, 0);  // last bin is overflow

  std::vector<double> ds;
  ds.reserve(matches.matches.size());
  for (const auto& m : matches.matches) {
    double d;
    try {
      d = one_sided ? epigeo::one_sided_epipolar_distance(f, m.x, m.y)
                    : epigeo::symmetric_epipolar_distance(f, m.x, m.y);
    } catch (const EpipoleDegenerate&) {
      continue;  // match on an epipole: distance undefined
    }
    ds.push_back(d);
    const auto b = d >= max_px ? bins : static_cast<std::size_t>(d / bin_width_px);
    ++h.counts[std::min(b, bins)];
  }
  h.total = static_cast<std::int64_t>(ds.size());
  if (ds.empty()) return h;
  double sum = 0.0;
  for (const double d : ds) sum += d;
  h.mean_px = sum / static_cast<double>(ds.size());
  const auto mid = ds.size() / 2;
  std::nth_element(ds.begin(), ds.begin() + static_cast<std::ptrdiff_t>(mid), ds.end());
  h.median_px = ds[mid];
  if (ds.size() % 2 == 0) {
    const double lo = *std::max_element(ds.begin(), ds.begin() + static_cast<std::ptrdiff_t>(mid));
    h.median_px = (lo + h.median_px) / 2.0;
  }
  return h;
}

double masked_psnr(const Image& a, const Image& b, const Mask& mask) {
  if (!a.same_shape(b)) throw ShapeError("masked_psnr: image shapes differ");
  if (a.height != mask.height || a.width != mask.width)
    throw ShapeError("masked_psnr: mask shape differs");
  double se = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (!mask.at(y, x)) continue;
      for (int c = 0; c < a.channels; ++c) {
        const double d = a.at(y, x, c) - b.at(y, x, c);
        se += d * d;
      }
      n += static_cast<std::size_t>(a.channels);
    }
  if (n == 0) throw Error("masked_psnr: empty mask");
  const double mse = se / static_cast<double>(n);
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

std::vector<double> luma(const Image& img) {
  std::vector<double> out(static_cast<std::size_t>(img.height) * img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const auto i = static_cast<std::size_t>(y) * img.width + x;
      out[i] = img.channels >= 3 ? 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) +
                                       0.114 * img.at(y, x, 2)
                                 : img.at(y, x, 0);
    }
  return out;
}

}  // namespace

double masked_ssim(const Image& a, const Image& b, const Mask& mask) {
  if (!a.same_shape(b)) throw ShapeError("masked_ssim: image shapes differ");
  if (a.height != mask.height || a.width != mask.width)
    throw ShapeError("masked_ssim: mask shape differs");
  constexpr int kHalf = 3;  // 7x7 window
  constexpr double kSigma = 1.5;
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;  // dynamic range 1.0

  double g[2 * kHalf + 1];
  double gsum = 0.0;
  for (int i = -kHalf; i <= kHalf; ++i)
    gsum += g[i + kHalf] = std::exp(-0.5 * i * i / (kSigma * kSigma));
  for (double& v : g) v /= gsum;

  const auto la = luma(a), lb = luma(b);
  double ssim_sum = 0.0;
  std::size_t windows = 0;
  for (int yc = kHalf; yc < a.height - kHalf; ++yc)
    for (int xc = kHalf; xc < a.width - kHalf; ++xc) {
      bool covered = true;
      for (int dy = -kHalf; dy <= kHalf && covered; ++dy)
        for (int dx = -kHalf; dx <= kHalf && covered; ++dx)
          covered = mask.at(yc + dy, xc + dx);
      if (!covered) continue;
      double ma = 0, mb = 0, va = 0, vb = 0, cov = 0;
      for (int dy = -kHalf; dy <= kHalf; ++dy)
        for (int dx = -kHalf; dx <= kHalf; ++dx) {
          const double wgt = g[dy + kHalf] * g[dx + kHalf];
          const auto i = static_cast<std::size_t>(yc + dy) * a.width + (xc + dx);
          ma += wgt * la[i];
          mb += wgt * lb[i];
          va += wgt * la[i] * la[i];
          vb += wgt * lb[i] * lb[i];
          cov += wgt * la[i] * lb[i];
        }
      va -= ma * ma;
      vb -= mb * mb;
      cov -= ma * mb;
      ssim_sum += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                  ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++windows;
    }
  if (windows == 0) throw Error("masked_ssim: no fully covered 7x7 window");
  return ssim_sum / static_cast<double>(windows);
}

std::string EvalReport::to_json() const {
  ordered_json j;
  j["R_dist_deg"] = r_dist_deg;
  j["T_dist_deg"] = t_dist_deg;
  j["epi_mean_px"] = epi_mean_px;
  j["epi_median_px"] = epi_median_px;
  j["masked_psnr_db"] = masked_psnr_db;
  j["masked_ssim"] = masked_ssim;
  j["inliers"] = inliers;
  j["flags"] = flags;
  return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
  const auto j = ordered_json::parse(text);
  EvalReport r;
  r.r_dist_deg = j.at("R_dist_deg");
  r.t_dist_deg = j.at("T_dist_deg");
  r.epi_mean_px = j.at("epi_mean_px");
  r.epi_median_px = j.at("epi_median_px");
  r.masked_psnr_db = j.at("masked_psnr_db");
  r.masked_ssim = j.at("masked_ssim");
  r.inliers = j.at("inliers");
  r.flags = j.at("flags").get<std::vector<std::string>>();
  return r;
}

}  // namespace epirefine::evalkit
