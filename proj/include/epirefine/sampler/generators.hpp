#pragma once

#include <cstdint>

#include <epirefine/diffcore/tensor.hpp>
#include <epirefine/sampler/schedule.hpp>
#include <epirefine/scene/render.hpp>
#include <epirefine/scene/scene.hpp>

namespace epirefine::sampler {

// A deterministic, end-to-end differentiable map from a starting latent to
// an image tensor. Conditioning (scene, target pose, schedule) is fixed at
// construction; generate() is pure.
class GeneratorContract {
 public:
  virtual ~GeneratorContract() = default;

  // z must live on `tape`, with shape latent_shape(); the returned image
  // tensor ({H,W,3} or {H,W}) lives on the same tape and carries gradients
  // back to z.
  virtual diffcore::Tensor generate(diffcore::Tape& tape, const diffcore::Tensor& z) const = 0;

  virtual diffcore::Shape latent_shape() const = 0;
  virtual int height() const = 0;
  virtual int width() const = 0;
};

// Full DDIM chain with the linear test denoiser eps_hat = a * z_t, decoded
// by reshaping z_0 to {H,W,C} and applying an elementwise sigmoid.
class LinearDdimGenerator final : public GeneratorContract {
 public:
  LinearDdimGenerator(NoiseSchedule schedule, double a, int height, int width,
                      int channels = 1);

  diffcore::Tensor generate(diffcore::Tape& tape, const diffcore::Tensor& z) const override;
  diffcore::Shape latent_shape() const override;
  int height() const override { return height_; }
  int width() const override { return width_; }

  const NoiseSchedule& schedule() const { return schedule_; }

 private:
  NoiseSchedule schedule_;
  double a_;
  int height_, width_, channels_;
};

diffcore::Tensor generate_linear_ddim(diffcore::Tape& tape, const diffcore::Tensor& z_T,
                                      const NoiseSchedule& schedule, double a);

// Desk-scale generator with a controllable geometric error: the 6-vector
// latent, scaled by `latent_scale`, is an se(3) perturbation applied on top
// of the target pose and the scene is re-rendered with the differentiable
// splatter. z = 0 reproduces the target view exactly. The scale puts the
// interesting perturbation range at |z| ~ 1, the magnitude the optimizer's
// step sizes are calibrated for.
class PoseLatentGenerator final : public GeneratorContract {
 public:
  PoseLatentGenerator(scene::Scene sc, epigeo::Pose target_pose, scene::Intrinsics k,
                      int height, int width, double latent_scale = 0.15);

  diffcore::Tensor generate(diffcore::Tape& tape, const diffcore::Tensor& z) const override;
  diffcore::Shape latent_shape() const override { return {6}; }
  int height() const override { return height_; }
  int width() const override { return width_; }

  const epigeo::Pose& target_pose() const { return target_pose_; }
  const scene::Scene& scene_ref() const { return scene_; }
  const scene::Intrinsics& intrinsics() const { return k_; }
  double latent_scale() const { return latent_scale_; }

  // The pose actually rendered for a given latent value.
  epigeo::Pose pose_for_latent(const std::vector<double>& z6) const;

 private:
  scene::Scene scene_;
  epigeo::Pose target_pose_;
  scene::Intrinsics k_;
  int height_, width_;
  double latent_scale_;
};

// i.i.d. standard normal leaf tensor, deterministic in the seed.
diffcore::Tensor sample_initial_latent(diffcore::Tape& tape, std::uint64_t seed,
                                       diffcore::Shape shape, bool requires_grad = true);

std::vector<double> standard_normal(std::uint64_t seed, std::size_t n);

}  // namespace epirefine::sampler
