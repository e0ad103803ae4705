#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <epirefine/errors.hpp>

namespace epirefine::diffcore {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);

class Tape;

// Lightweight handle to a node on a tape.
class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const;
  std::int64_t size() const;
  std::int64_t rows() const { return shape().at(0); }
  std::int64_t cols() const { return shape().at(1); }
  const std::vector<double>& values() const;
  double value() const;  // scalar tensors only
  bool requires_grad() const;
  // Gradient buffer, valid after Tape::backward. Zero-filled if the node
  // was not reached.
  const std::vector<double>& grad() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  friend struct OpAccess;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Define-by-run reverse-mode tape. One tape owns all tensors created on it;
// a tape and its tensors must not be shared across threads.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor constant(Shape shape, std::vector<double> data);
  Tensor constant_scalar(double v);
  Tensor leaf(Shape shape, std::vector<double> data, bool requires_grad = true);

  // Accumulates d(loss)/d(node) for every node on the path to `loss`.
  // `loss` must be scalar.
  void backward(const Tensor& loss);

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  friend class Tensor;
  friend struct OpAccess;

  struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;
    bool needs_grad = false;
    bool is_leaf = false;
    // Accumulates into parents' grad buffers; may read any node's val/grad.
    std::function<void(Tape&, int self)> back;
  };

  int add_node(Node node);
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  std::vector<Node> nodes_;
};

// ---- elementwise / broadcast binary ops ------------------------------------
// Broadcasting: equal shapes, one operand scalar, or 2-D {m,n} against
// {1,n} / {m,1}.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor scalar_mul(const Tensor& a, double s);
Tensor scalar_add(const Tensor& a, double s);

// ---- unary elementwise ------------------------------------------------------
Tensor exp_(const Tensor& a);
Tensor sqrt_(const Tensor& a);
Tensor abs_(const Tensor& a);
Tensor sin_(const Tensor& a);
Tensor cos_(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
// Huber penalty applied elementwise to nonnegative residuals.
Tensor huber(const Tensor& r, double delta);

// ---- structure --------------------------------------------------------------
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);                       // 2-D
Tensor slice_rows(const Tensor& a, std::int64_t r0, std::int64_t r1);  // 2-D
Tensor slice_cols(const Tensor& a, std::int64_t c0, std::int64_t c1);  // 2-D
Tensor concat_cols(const Tensor& a, const Tensor& b);    // 2-D
Tensor concat_rows(const Tensor& a, const Tensor& b);    // 2-D
Tensor gather_rows(const Tensor& a, std::vector<std::int64_t> rows);   // 2-D

// ---- reductions -------------------------------------------------------------
Tensor sum(const Tensor& a);                      // -> {1}
Tensor sum_axis(const Tensor& a, int axis);       // 2-D; 0 -> {1,n}, 1 -> {m,1}
Tensor l1_norm(const Tensor& a);                  // sum |a|, -> {1}
Tensor squared_norm(const Tensor& a);             // sum a^2, -> {1}

// ---- linear algebra ---------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);  // 2-D

// Row-wise softmax (2-D, axis 1).
Tensor softmax_rows(const Tensor& a);

// ---- image ops --------------------------------------------------------------
// img: {H,W} or {H,W,C}; xy: {N,2} continuous pixel coordinates where integer
// coordinates are pixel centers. Coordinates are clamped to the image border.
// Returns {N,C} (C=1 for single-channel input).
Tensor bilinear_sample(const Tensor& img, const Tensor& xy);

// As bilinear_sample, but the interpolation weights pass the fractional
// coordinates through the smoothstep 3t^2 - 2t^3, making the result C1 in
// xy across pixel boundaries (the position gradient of plain bilinear
// interpolation is discontinuous there). Values at integer coordinates are
// identical to bilinear_sample.
Tensor smoothstep_sample(const Tensor& img, const Tensor& xy);

// img: {H,W}. Returns {H*W, p*p}: the flattened p x p window around each
// pixel, border-clamped. p must be odd.
Tensor patches(const Tensor& img, int p);

// Truncated Gaussian splatting. centers {n,2} (pixel coordinates) and
// inv2s2 {n,1} (1 / (2 sigma^2) per splat) are differentiable; colors (3n,
// rgb per splat) and vis (n, 0/1 gates) are plain values. Accumulates
//   w_ip = vis_i * exp(-|p - c_i|^2 * inv2s2_i)
// into a {H*W, 4} tensor [sum w*r, sum w*g, sum w*b, sum w]. Each splat is
// evaluated only within `cutoff` standard deviations of its center, which
// bounds the cost by the splat footprint instead of H*W*n.
Tensor splat_accumulate(const Tensor& centers, const Tensor& inv2s2,
                        std::vector<double> colors, std::vector<double> vis, int height,
                        int width, double cutoff = 6.0);

}  // namespace epirefine::diffcore
