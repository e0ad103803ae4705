#include <epirefine/refine/refine.hpp>

#include <cmath>

#include <epirefine/scene/render.hpp>

namespace epirefine::refine {

using diffcore::Tape;
using diffcore::Tensor;
using epigeo::Vec2;

LossTerms consistency_loss(Tape& tape, const std::vector<Vec2>& x, const Tensor& y,
                           const epigeo::FundamentalMatrix& f, const Image& img_ref,
                           const Tensor& img_gen, const RefinementConfig& cfg) {
  using namespace diffcore;
  if (y.shape().size() != 2 || y.cols() != 2)
    throw ShapeError("consistency_loss: y must be {N,2}");
  if (static_cast<std::size_t>(y.rows()) != x.size())
    throw ShapeError("consistency_loss: x / y length mismatch");

  // Line distances are undefined at the epipoles; drop matches too close to
  // either one.
  const Vec2 e_ref = f.ref_epipole();
  const Vec2 e_gen = f.gen_epipole();
  const auto& yv0 = y.values();
  std::vector<std::int64_t> kept;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Vec2 yi(yv0[2 * i], yv0[2 * i + 1]);
    if ((x[i] - e_ref).norm() < cfg.epipole_radius_px) continue;
    if ((yi - e_gen).norm() < cfg.epipole_radius_px) continue;
    kept.push_back(static_cast<std::int64_t>(i));
  }
  if (kept.empty())
    throw InsufficientMatches("consistency_loss: no matches away from the epipoles");
  const auto n = static_cast<std::int64_t>(kept.size());

  Tensor yk = gather_rows(y, kept);
  std::vector<double> xh(static_cast<std::size_t>(n) * 3);
  std::vector<double> lines(static_cast<std::size_t>(n) * 3);
  for (std::int64_t i = 0; i < n; ++i) {
    const Vec2& xi = x[static_cast<std::size_t>(kept[static_cast<std::size_t>(i)])];
    xh[3 * i] = xi.x();
    xh[3 * i + 1] = xi.y();
    xh[3 * i + 2] = 1.0;
    const epigeo::Vec3 l = f.F * epigeo::Vec3(xi.x(), xi.y(), 1.0);
    const double s = std::hypot(l.x(), l.y());
    if (s <= 1e-15) throw EpipoleDegenerate("consistency_loss: query at the epipole");
    lines[3 * i] = l.x() / s;
    lines[3 * i + 1] = l.y() / s;
    lines[3 * i + 2] = l.z() / s;
  }
  Tensor xh_t = tape.constant({n, 3}, std::move(xh));
  Tensor lines_t = tape.constant({n, 3}, std::move(lines));
  std::vector<double> fv(9);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) fv[static_cast<std::size_t>(3 * r + c)] = f.F(r, c);
  Tensor f_t = tape.constant({3, 3}, std::move(fv));

  Tensor ones = tape.constant({n, 1}, std::vector<double>(static_cast<std::size_t>(n), 1.0));
  Tensor yh = concat_cols(yk, ones);                                    // {n,3}
  Tensor d1 = abs_(sum_axis(mul(yh, lines_t), 1));                      // d(y, Fx)
  Tensor m = matmul(yh, f_t);                                           // rows = (F^T y)^T
  Tensor mab = slice_cols(m, 0, 2);
  Tensor den = sqrt_(scalar_add(sum_axis(mul(mab, mab), 1), 1e-24));
  Tensor d2 = div(abs_(sum_axis(mul(m, xh_t), 1)), den);                // d(x, F^T y)
  Tensor hub = huber(add(d1, d2), cfg.huber_delta_px);                  // {n,1}

  Tensor per = hub;
  if (cfg.lambda_rgb > 0) {
    std::vector<double> xq(static_cast<std::size_t>(n) * 2);
    for (std::int64_t i = 0; i < n; ++i) {
      const Vec2& xi = x[static_cast<std::size_t>(kept[static_cast<std::size_t>(i)])];
      xq[2 * i] = xi.x();
      xq[2 * i + 1] = xi.y();
    }
    // C1 interpolation: plain bilinear has gradient kinks at pixel
    // boundaries, which the optimizer (and gradient checks) would hit
    // constantly as the matched positions drift.
    Tensor ref_t = scene::image_constant(tape, img_ref);
    Tensor c_ref = smoothstep_sample(ref_t, tape.constant({n, 2}, std::move(xq)));
    Tensor c_gen = smoothstep_sample(img_gen, yk);
    if (c_ref.cols() != c_gen.cols())
      throw ShapeError("consistency_loss: channel count mismatch");
    // Smoothed L1 (zero-anchored Charbonnier): |r| has a kink wherever a
    // color difference crosses zero, which the matched positions do all the
    // time as they drift.
    constexpr double eps = 0.01;
    Tensor d_c = sub(c_gen, c_ref);
    Tensor l1 = sum_axis(
        scalar_add(sqrt_(scalar_add(mul(d_c, d_c), eps * eps)), -eps), 1);  // {n,1}
    per = add(hub, scalar_mul(l1, cfg.lambda_rgb));
  }

  LossTerms out;
  out.total = scalar_mul(sum(per), 1.0 / static_cast<double>(n));
  out.used = static_cast<int>(n);
  double epi = 0.0;
  for (const double v : hub.values()) epi += v;
  out.epi_value = epi / static_cast<double>(n);
  out.rgb_value = out.total.value() - out.epi_value;
  return out;
}

}  // namespace epirefine::refine
