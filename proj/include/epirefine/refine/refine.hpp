#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <epirefine/diffcore/tensor.hpp>
#include <epirefine/epigeo/epipolar.hpp>
#include <epirefine/image.hpp>
#include <epirefine/matcher/matcher.hpp>
#include <epirefine/sampler/generators.hpp>

namespace epirefine::refine {

struct RefinementConfig {
  int iterations = 35;
  double learning_rate = 0.025;
  double huber_delta_px = 2.0;
  double lambda_rgb = 2.5;
  double tau_conf = 0.15;
  matcher::FilterPolicy policy = matcher::FilterPolicy::kFixedAtInit;
  double epipole_radius_px = 5.0;
  matcher::MatcherConfig matcher_cfg{};

  void validate() const;
};

struct AdamState {
  std::vector<double> m, v;
  int step = 0;

  static AdamState zeros(std::size_t n);
};

// One bias-corrected Adam step in place. Returns false and leaves param and
// state untouched if the gradient has a non-finite entry.
bool adam_update(std::vector<double>& param, const std::vector<double>& grad,
                 AdamState& state, double lr = 0.025, double beta1 = 0.9,
                 double beta2 = 0.999, double eps = 1e-8);

struct LossTerms {
  diffcore::Tensor total;  // scalar, on the caller's tape
  double epi_value = 0.0;  // mean robust epipolar term
  double rgb_value = 0.0;  // weighted mean L1 color term
  int used = 0;            // matches surviving epipole exclusion
};

// Mean over matches of huber(d(y,Fx) + d(x,F^T y)) + lambda_rgb * L1 color
// difference, colors read bilinearly at x (reference, constant) and y
// (generated, differentiable). Matches within epipole_radius_px of either
// epipole are excluded; throws InsufficientMatches if none survive.
// x: reference pixels; y: {N,2} matched positions on `tape`.
LossTerms consistency_loss(diffcore::Tape& tape, const std::vector<epigeo::Vec2>& x,
                           const diffcore::Tensor& y, const epigeo::FundamentalMatrix& f,
                           const Image& img_ref, const diffcore::Tensor& img_gen,
                           const RefinementConfig& cfg);

struct IterationRecord {
  double loss = 0.0;
  double epi_term = 0.0;
  double rgb_term = 0.0;
  int match_count = 0;
  bool skipped = false;  // non-finite loss/gradient or too few matches
};

struct RefinementTrace {
  std::vector<IterationRecord> iterations;  // config.iterations + 1 records
  std::vector<double> final_latent;
  std::vector<double> best_latent;
  int best_index = 0;

  std::string to_json() const;
};

struct RefineResult {
  Image image;  // regenerated from the best-loss latent
  RefinementTrace trace;
};

// Latent optimization loop: generate, match against the reference, evaluate
// the consistency loss, and Adam-update the latent. The filtering policy
// decides which reference queries contribute each iteration. The initial
// latent is `initial_latent` if given, otherwise drawn i.i.d. normal from
// `seed`. Throws InsufficientMatches if the initial generation has too few
// confident matches.
RefineResult refine(const sampler::GeneratorContract& generator, const Image& img_ref,
                    const epigeo::FundamentalMatrix& f, const RefinementConfig& cfg,
                    std::uint64_t seed = 0,
                    const std::optional<std::vector<double>>& initial_latent = std::nullopt);

}  // namespace epirefine::refine
