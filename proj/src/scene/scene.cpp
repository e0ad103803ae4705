#include <epirefine/scene/scene.hpp>

#include <json.hpp>

#include <cmath>
#include <random>

namespace epirefine::scene {

using nlohmann::ordered_json;

Intrinsics default_intrinsics(int width, int height) {
  return {static_cast<double>(width), static_cast<double>(width), width / 2.0, height / 2.0,
          width, height};
}

Pose reference_pose() { return Pose{}; }

Vec3 scene_center(const Scene& s) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : s.primitives) c += p.position;
  return c / static_cast<double>(s.primitives.size());
}

Scene make_scene(std::uint64_t seed, int n_primitives, double depth_min, double depth_max,
                 int width) {
  if (n_primitives < 50) throw Error("make_scene: need at least 50 primitives");
  if (!(depth_min > 0 && depth_max > depth_min)) throw Error("make_scene: bad depth range");
  if (width < 8) throw Error("make_scene: width too small");

  const Intrinsics k = default_intrinsics(width, width);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // 90% of primitives unproject from pixels well inside the reference view,
  // the rest from a margin band around it.
  std::uniform_real_distribution<double> px_in(0.08 * k.width, 0.92 * k.width);
  std::uniform_real_distribution<double> px_out(-0.15 * k.width, 1.15 * k.width);
  // projected footprint roughly 0.8 - 1.6 px of sigma at scene depth: small
  // enough that neighboring splat constellations stay locally distinctive
  // for patch matching, large enough to keep the image smooth
  std::uniform_real_distribution<double> sigma_px(0.8, 1.6);

  // Depths come from a smooth random heightfield rather than i.i.d. samples:
  // a surface moves coherently under viewpoint change, whereas independent
  // depths shear every local neighborhood apart and make patches unmatchable
  // across views.
  struct Wave {
    double fu, fv, phase, amp;
  };
  std::uniform_real_distribution<double> freq(0.3, 1.5);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> amp(0.5, 1.0);
  std::vector<Wave> waves(4);
  double amp_sum = 0.0;
  for (auto& wv : waves) {
    wv.fu = freq(rng) * (unit(rng) < 0.5 ? -1.0 : 1.0);
    wv.fv = freq(rng) * (unit(rng) < 0.5 ? -1.0 : 1.0);
    wv.phase = phase(rng);
    wv.amp = amp(rng);
    amp_sum += wv.amp;
  }
  const double mid = 0.5 * (depth_min + depth_max);
  const double half = 0.5 * (depth_max - depth_min);
  auto depth_at = [&](double u, double v) {
    double f = 0.0;
    for (const auto& wv : waves)
      f += wv.amp * std::sin(2.0 * M_PI * (wv.fu * u + wv.fv * v) / k.width + wv.phase);
    return mid + 0.95 * half * f / amp_sum;
  };

  Scene s;
  s.seed = seed;
  s.primitives.reserve(static_cast<std::size_t>(n_primitives));
  for (int i = 0; i < n_primitives; ++i) {
    const bool interior = unit(rng) < 0.9;
    const double u = interior ? px_in(rng) : px_out(rng);
    const double v = interior ? px_in(rng) : px_out(rng);
    const double z = depth_at(u, v);
    Primitive p;
    p.position = Vec3((u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z);
    p.color = Vec3(unit(rng), unit(rng), unit(rng));
    p.radius = sigma_px(rng) * z / k.fx;
    s.primitives.push_back(p);
  }
  return s;
}

std::string Scene::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["scale"] = scale;
  j["primitives"] = ordered_json::array();
  for (const auto& p : primitives) {
    ordered_json jp;
    jp["p"] = {p.position.x(), p.position.y(), p.position.z()};
    jp["c"] = {p.color.x(), p.color.y(), p.color.z()};
    jp["r"] = p.radius;
    j["primitives"].push_back(jp);
  }
  return j.dump(2);
}

Scene Scene::from_json(const std::string& text) {
  const auto j = ordered_json::parse(text);
  Scene s;
  s.seed = j.at("seed");
  s.scale = j.value("scale", 1.0);
  for (const auto& jp : j.at("primitives")) {
    Primitive p;
    for (int i = 0; i < 3; ++i) {
      p.position(i) = jp.at("p").at(i);
      p.color(i) = jp.at("c").at(i);
    }
    p.radius = jp.at("r");
    s.primitives.push_back(p);
  }
  return s;
}

}  // namespace epirefine::scene
