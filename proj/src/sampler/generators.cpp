#include <epirefine/sampler/generators.hpp>

#include <cmath>
#include <random>

#include <epirefine/epigeo/se3.hpp>

namespace epirefine::sampler {

using diffcore::Shape;
using diffcore::Tape;
using diffcore::Tensor;

diffcore::Tensor generate_linear_ddim(Tape& tape, const Tensor& z_T,
                                      const NoiseSchedule& schedule, double a) {
  Tensor z = z_T;
  for (auto it = schedule.sample_steps.rbegin(); it != schedule.sample_steps.rend(); ++it) {
    Tensor eps_hat = diffcore::scalar_mul(z, a);
    z = ddim_step(z, eps_hat, *it, schedule);
  }
  (void)tape;
  return z;
}

LinearDdimGenerator::LinearDdimGenerator(NoiseSchedule schedule, double a, int height,
                                         int width, int channels)
    : schedule_(std::move(schedule)), a_(a), height_(height), width_(width),
      channels_(channels) {
  if (height_ < 1 || width_ < 1 || channels_ < 1)
    throw Error("LinearDdimGenerator: bad image dimensions");
}

Shape LinearDdimGenerator::latent_shape() const {
  if (channels_ == 1) return {height_, width_};
  return {height_, width_, channels_};
}

Tensor LinearDdimGenerator::generate(Tape& tape, const Tensor& z) const {
  if (z.shape() != latent_shape())
    throw ShapeError("LinearDdimGenerator: latent shape mismatch");
  Tensor z0 = generate_linear_ddim(tape, z, schedule_, a_);
  return diffcore::sigmoid(z0);
}

PoseLatentGenerator::PoseLatentGenerator(scene::Scene sc, epigeo::Pose target_pose,
                                         scene::Intrinsics k, int height, int width,
                                         double latent_scale)
    : scene_(std::move(sc)), target_pose_(target_pose), k_(k), height_(height),
      width_(width), latent_scale_(latent_scale) {
  target_pose_.validate();
  k_.validate();
  if (height_ < 1 || width_ < 1) throw Error("PoseLatentGenerator: bad image dimensions");
  if (!(latent_scale_ > 0)) throw Error("PoseLatentGenerator: latent scale must be positive");
}

Tensor PoseLatentGenerator::generate(Tape& tape, const Tensor& z) const {
  if (z.size() != 6) throw ShapeError("PoseLatentGenerator: latent must have 6 elements");
  const Tensor xi = diffcore::scalar_mul(z, latent_scale_);
  const auto pt = epigeo::perturbed_pose_tensors(tape, xi, target_pose_);
  return scene::render_splat(tape, scene_, pt.rot, pt.trans, k_, height_, width_);
}

epigeo::Pose PoseLatentGenerator::pose_for_latent(const std::vector<double>& z6) const {
  if (z6.size() != 6) throw ShapeError("pose_for_latent: latent must have 6 elements");
  Eigen::Matrix<double, 6, 1> xi;
  for (int i = 0; i < 6; ++i) xi(i) = latent_scale_ * z6[static_cast<std::size_t>(i)];
  return epigeo::se3_exp(xi).compose(target_pose_);
}

std::vector<double> standard_normal(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(n);
  for (auto& v : out) v = normal(rng);
  return out;
}

Tensor sample_initial_latent(Tape& tape, std::uint64_t seed, Shape shape,
                             bool requires_grad) {
  const auto n = diffcore::numel(shape);
  return tape.leaf(std::move(shape), standard_normal(seed, static_cast<std::size_t>(n)),
                   requires_grad);
}

}  // namespace epirefine::sampler
