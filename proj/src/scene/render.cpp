#include <epirefine/scene/render.hpp>

#include <cmath>

namespace epirefine::scene {

using diffcore::Tape;
using diffcore::Tensor;

namespace {

constexpr double kWeightEps = 1e-6;
constexpr double kDepthValidThreshold = 1e-3;
constexpr double kMinDepth = 1e-3;
constexpr double kSplatCutoffSigmas = 8.0;

}  // namespace

Tensor render_splat(Tape& tape, const Scene& s, const Tensor& rot, const Tensor& trans,
                    const Intrinsics& k, int height, int width) {
  using namespace diffcore;
  const auto n = static_cast<std::int64_t>(s.primitives.size());

  std::vector<double> pos(static_cast<std::size_t>(n) * 3);
  std::vector<double> col(static_cast<std::size_t>(n) * 3);
  std::vector<double> inv_r2(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& p = s.primitives[static_cast<std::size_t>(i)];
    for (int c = 0; c < 3; ++c) {
      pos[static_cast<std::size_t>(3 * i + c)] = p.position(c);
      col[static_cast<std::size_t>(3 * i + c)] = p.color(c);
    }
    // sigma_px = fx * radius / depth  =>  1/(2 sigma^2) = depth^2 / (2 fx^2 r^2)
    inv_r2[static_cast<std::size_t>(i)] = 1.0 / (2.0 * k.fx * k.fx * p.radius * p.radius);
  }
  Tensor p_world = tape.constant({n, 3}, std::move(pos));

  // camera coordinates {n,3}
  Tensor x_cam = add(matmul(p_world, transpose(rot)), transpose(trans));
  Tensor z = slice_cols(x_cam, 2, 3);  // {n,1}

  // visibility: primitives behind the camera are excluded from the sum
  std::vector<double> vis(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    vis[static_cast<std::size_t>(i)] = z.values()[static_cast<std::size_t>(i)] > kMinDepth ? 1.0 : 0.0;
  // guard z away from zero for the division; masked-out primitives only
  Tensor z_safe = clamp(z, kMinDepth, 1e12);

  Tensor u = add(scalar_mul(div(slice_cols(x_cam, 0, 1), z_safe), k.fx),
                 tape.constant_scalar(k.cx));
  Tensor v = add(scalar_mul(div(slice_cols(x_cam, 1, 2), z_safe), k.fy),
                 tape.constant_scalar(k.cy));
  Tensor centers = concat_cols(u, v);  // {n,2}

  // per-primitive inverse bandwidth z^2 / (2 fx^2 r^2)
  Tensor inv2s2 = mul(mul(z_safe, z_safe), tape.constant({n, 1}, std::move(inv_r2)));
  Tensor acc = splat_accumulate(centers, inv2s2, std::move(col), std::move(vis), height,
                                width, kSplatCutoffSigmas);
  Tensor wsum = scalar_add(slice_cols(acc, 3, 4), kWeightEps);  // {hw,1}
  Tensor img = div(slice_cols(acc, 0, 3), wsum);                // {hw,3}
  return reshape(img, {height, width, 3});
}

Image render(const Scene& s, const Pose& pose, const Intrinsics& k, int height, int width) {
  Tape tape;
  std::vector<double> r(9), t(3);
  for (int i = 0; i < 3; ++i) {
    t[static_cast<std::size_t>(i)] = pose.t(i);
    for (int j = 0; j < 3; ++j) r[static_cast<std::size_t>(3 * i + j)] = pose.R(i, j);
  }
  Tensor img = render_splat(tape, s, tape.constant({3, 3}, std::move(r)),
                            tape.constant({3, 1}, std::move(t)), k, height, width);
  return tensor_to_image(img);
}

DepthMap render_depth(const Scene& s, const Pose& pose, const Intrinsics& k, int height,
                      int width) {
  DepthMap dm(height, width);
  const auto n = s.primitives.size();
  std::vector<double> cu(n), cv(n), cz(n), inv2s2(n);
  std::vector<bool> vis(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 xc = pose.transform(s.primitives[i].position);
    vis[i] = xc.z() > kMinDepth;
    if (!vis[i]) continue;
    cz[i] = xc.z();
    cu[i] = k.fx * xc.x() / xc.z() + k.cx;
    cv[i] = k.fy * xc.y() / xc.z() + k.cy;
    const double sigma = k.fx * s.primitives[i].radius / xc.z();
    inv2s2[i] = 1.0 / (2.0 * sigma * sigma);
  }
  std::vector<double> total(static_cast<std::size_t>(height) * width, 0.0);
  std::vector<double> best_w(total.size(), 0.0);
  std::vector<double> best_z(total.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!vis[i]) continue;
    const double r = kSplatCutoffSigmas / std::sqrt(2.0 * inv2s2[i]);
    const int x0 = std::max(0, static_cast<int>(std::ceil(cu[i] - r)));
    const int x1 = std::min(width - 1, static_cast<int>(std::floor(cu[i] + r)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(cv[i] - r)));
    const int y1 = std::min(height - 1, static_cast<int>(std::floor(cv[i] + r)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - cu[i], dy = y - cv[i];
        const double w = std::exp(-(dx * dx + dy * dy) * inv2s2[i]);
        const auto p = static_cast<std::size_t>(y) * width + x;
        total[p] += w;
        if (w > best_w[p]) {
          best_w[p] = w;
          best_z[p] = cz[i];
        }
      }
  }
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const auto p = static_cast<std::size_t>(y) * width + x;
      if (total[p] >= kDepthValidThreshold) {
        dm.at(y, x) = best_z[p];
        dm.valid.at(y, x) = true;
      }
    }
  return dm;
}

Image tensor_to_image(const diffcore::Tensor& t) {
  const auto& shape = t.shape();
  if (shape.size() != 3) throw ShapeError("tensor_to_image: expected {H,W,C}");
  Image img(static_cast<int>(shape[0]), static_cast<int>(shape[1]), static_cast<int>(shape[2]));
  img.data = t.values();
  return img;
}

diffcore::Tensor image_constant(Tape& tape, const Image& img) {
  return tape.constant({img.height, img.width, img.channels}, img.data);
}

}  // namespace epirefine::scene
