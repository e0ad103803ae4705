#pragma once

#include <string>
#include <vector>

#include <epirefine/diffcore/tensor.hpp>
#include <epirefine/epigeo/camera.hpp>
#include <epirefine/image.hpp>

namespace epirefine::matcher {

using epigeo::Vec2;

struct Match {
  Vec2 x;             // reference pixel
  Vec2 y;             // generated pixel
  double confidence;  // peak distinctiveness, in [0,1]
};

enum class FilterPolicy { kNoFiltering, kFixedAtInit, kAdaptive };

std::string to_string(FilterPolicy p);
FilterPolicy policy_from_string(const std::string& s);

struct MatchSet {
  std::vector<Match> matches;

  std::string to_csv() const;  // header + "qx,qy,mx,my,confidence" rows
  static MatchSet from_csv(const std::string& text);
};

struct MatcherConfig {
  int patch_size = 7;
  int stride = 8;          // query grid stride (mirrors the 1/8 latent scale)
  double temperature = 0.1;
  // Soft-argmax window half-width around the global correlation peak. A
  // full-image expectation at this temperature leaves several percent of
  // the softmax mass on the background, which biases every match toward
  // the image centroid; windowing keeps the estimate subpixel while the
  // peak itself is still searched over the whole image.
  int window_radius = 4;
  // Forward-backward consistency gate: a match keeps its confidence only if
  // re-matching the selected generated pixel back to the reference lands
  // within this distance of the query. Negative disables the gate.
  double cycle_tolerance_px = 3.0;
};

// Per-pixel normalized patch descriptors of one image.
struct FeatureMap {
  diffcore::Tensor desc;  // {H*W, p*p}, rows zero-mean and unit L2 norm
  std::vector<bool> matchable;  // false for (near-)constant patches
  int height = 0, width = 0;
  int patch_size = 0;
};

// image: {H,W,3} or {H,W} tensor (differentiable or constant).
// Grayscale conversion: 0.299 R + 0.587 G + 0.114 B.
FeatureMap extract_features(diffcore::Tape& tape, const diffcore::Tensor& image,
                            int patch_size = 7);

// Windowed soft-argmax over per-row scores laid out as {Q, H*W}. For each
// row the hard argmax is located over the full image, then
// y_q = sum_u softmax(scores_q / temperature)(u) * (x_u, y_u)
// is taken over the (2r+1)^2 window around it (clamped inside the image;
// shrunk if the image is smaller than the window). *confidences receives,
// per row, 1 - exp(-(s1 - s2) / temperature) where s1 is the best score in
// the window and s2 the best score outside it: the distinctiveness of the
// selected peak, independent of image area. Differentiable w.r.t. the
// window scores.
//
// The estimate is smooth except where the peak (and with it the window)
// jumps. `centers_in`, if given, pins the per-row window centers (flat
// clamped cell indices) instead of locating the peak, which keeps the map
// smooth under small input perturbations — finite-difference probes need
// this. `centers_out` receives the centers actually used.
diffcore::Tensor soft_argmax_rows(diffcore::Tape& tape, const diffcore::Tensor& scores,
                                  int width, double temperature, int window_radius,
                                  std::vector<double>* confidences = nullptr,
                                  const std::vector<std::int64_t>* centers_in = nullptr,
                                  std::vector<std::int64_t>* centers_out = nullptr);

// Dense matches from a stride-grid of reference queries to the generated
// image. `y` stays differentiable w.r.t. whatever the generated features
// depend on.
struct DenseMatches {
  diffcore::Tensor y;            // {Q,2} matched positions in the generated image
  std::vector<Vec2> queries;     // reference positions x_q (constant)
  std::vector<double> confidences;
  std::vector<std::int64_t> window_centers;  // per-query soft-argmax window center
  int gen_width = 0, gen_height = 0;

  MatchSet to_match_set() const;
  MatchSet to_match_set(const std::vector<std::int64_t>& keep) const;
};

// `window_centers`, if given, pins the soft-argmax windows (see
// soft_argmax_rows) — pass the centers from a previous call to evaluate the
// same smooth branch of the matcher at a nearby input.
DenseMatches match_dense(diffcore::Tape& tape, const FeatureMap& feat_ref,
                         const FeatureMap& feat_gen, const MatcherConfig& cfg,
                         const std::vector<std::int64_t>* window_centers = nullptr);

// Confidence filtering with the three policies. FixedAtInit freezes the set
// of reference query indices on the first call and returns exactly those
// afterwards, whatever their current confidence.
class MatchFilter {
 public:
  MatchFilter(FilterPolicy policy, double tau_conf)
      : policy_(policy), tau_(tau_conf) {}

  // Indices into `m` to use this iteration. Throws InsufficientMatches if
  // fewer than 8 survive.
  std::vector<std::int64_t> select(const DenseMatches& m);

  FilterPolicy policy() const { return policy_; }
  bool initialized() const { return initialized_; }

 private:
  FilterPolicy policy_;
  double tau_;
  bool initialized_ = false;
  std::vector<std::int64_t> frozen_;
};

}  // namespace epirefine::matcher
