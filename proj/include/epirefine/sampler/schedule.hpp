#pragma once

#include <string>
#include <vector>

#include <epirefine/diffcore/tensor.hpp>

namespace epirefine::sampler {

// Diffusion noise schedule. alpha_bar[t] is the cumulative product of
// (1 - beta_s) for s = 1..t, with alpha_bar[0] = 1 by convention.
// sample_steps holds the DDIM subsequence of training steps in increasing
// order; sampling walks it from back to front down to t = 0.
struct NoiseSchedule {
  int t_train = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::vector<double> alpha_bar;   // size t_train + 1
  std::vector<int> sample_steps;   // increasing, in [1, t_train]

  static NoiseSchedule linear(int t_train = 1000, double beta_start = 1e-4,
                              double beta_end = 0.02, int t_sample = 50);

  double alpha_bar_at(int t) const;
  // The sampled index preceding t (0 for the smallest sampled index).
  // t must be a member of sample_steps.
  int previous_step(int t) const;

  std::string to_json() const;
  static NoiseSchedule from_json(const std::string& text);
};

// One deterministic (eta = 0) DDIM update from sampled index t to its
// predecessor:
//   z_prev = sqrt(abar_prev) * (z_t - sqrt(1-abar_t) * eps) / sqrt(abar_t)
//          + sqrt(1-abar_prev) * eps
diffcore::Tensor ddim_step(const diffcore::Tensor& z_t, const diffcore::Tensor& eps_hat,
                           int t, const NoiseSchedule& schedule);

}  // namespace epirefine::sampler
