#pragma once

#include <epirefine/diffcore/tensor.hpp>
#include <epirefine/image.hpp>
#include <epirefine/scene/scene.hpp>

namespace epirefine::scene {

struct DepthMap {
  int height = 0, width = 0;
  std::vector<double> depth;  // world units, meaningful where valid
  Mask valid;

  DepthMap() = default;
  DepthMap(int h, int w)
      : height(h), width(w), depth(static_cast<std::size_t>(h) * w, 0.0), valid(h, w) {}
  double at(int y, int x) const { return depth[static_cast<std::size_t>(y) * width + x]; }
  double& at(int y, int x) { return depth[static_cast<std::size_t>(y) * width + x]; }
};

// Differentiable soft Gaussian splatting. `rot` is {3,3}, `trans` {3,1}
// (world-to-camera); the returned image tensor is {H,W,3} and carries
// gradients back to both pose tensors.
diffcore::Tensor render_splat(diffcore::Tape& tape, const Scene& s, const diffcore::Tensor& rot,
                              const diffcore::Tensor& trans, const Intrinsics& k, int height,
                              int width);

// Plain forward rendering.
Image render(const Scene& s, const Pose& pose, const Intrinsics& k, int height, int width);

// Depth of the dominant (highest-weight) primitive per pixel; pixels whose
// total splat weight is below 1e-3 are marked invalid.
DepthMap render_depth(const Scene& s, const Pose& pose, const Intrinsics& k, int height,
                      int width);

Image tensor_to_image(const diffcore::Tensor& t);
diffcore::Tensor image_constant(diffcore::Tape& tape, const Image& img);

}  // namespace epirefine::scene
