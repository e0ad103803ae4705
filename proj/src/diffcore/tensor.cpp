#include <epirefine/diffcore/tensor.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <utility>

namespace epirefine::diffcore {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void require(bool cond, const char* msg) {
  if (!cond) throw ShapeError(msg);
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

}  // namespace

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

// ---- Tensor -----------------------------------------------------------------

const Shape& Tensor::shape() const { return tape_->node(id_).shape; }
std::int64_t Tensor::size() const { return numel(shape()); }
const std::vector<double>& Tensor::values() const { return tape_->node(id_).val; }

double Tensor::value() const {
  require(size() == 1, "Tensor::value: tensor is not scalar");
  return values()[0];
}

bool Tensor::requires_grad() const { return tape_->node(id_).needs_grad; }

const std::vector<double>& Tensor::grad() const {
  auto& n = tape_->node(id_);
  if (n.grad.empty()) n.grad.assign(n.val.size(), 0.0);
  return n.grad;
}

// ---- Tape -------------------------------------------------------------------

int Tape::add_node(Node node) {
  require(numel(node.shape) == static_cast<std::int64_t>(node.val.size()),
          "Tape: shape/data size mismatch");
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::constant(Shape shape, std::vector<double> data) {
  Node n;
  n.shape = std::move(shape);
  n.val = std::move(data);
  return Tensor(this, add_node(std::move(n)));
}

Tensor Tape::constant_scalar(double v) { return constant({1}, {v}); }

Tensor Tape::leaf(Shape shape, std::vector<double> data, bool requires_grad) {
  Node n;
  n.shape = std::move(shape);
  n.val = std::move(data);
  n.needs_grad = requires_grad;
  n.is_leaf = true;
  return Tensor(this, add_node(std::move(n)));
}

void Tape::backward(const Tensor& loss) {
  require(loss.tape() == this, "backward: tensor not on this tape");
  if (loss.size() != 1) throw Error("backward: loss must be scalar");
  const int last = loss.id();
  for (auto& n : nodes_) n.grad.clear();
  node(last).grad.assign(1, 1.0);
  for (int i = last; i >= 0; --i) {
    Node& n = node(i);
    if (n.grad.empty() || !n.back) continue;
    n.back(*this, i);
  }
  // Unreached grads are exposed lazily as zeros by Tensor::grad().
}

// ---- op plumbing ------------------------------------------------------------

struct OpAccess {
  static std::vector<double>& grad_buf(Tape& t, int id) {
    auto& n = t.node(id);
    if (n.grad.empty()) n.grad.assign(n.val.size(), 0.0);
    return n.grad;
  }
  static const std::vector<double>& val(Tape& t, int id) { return t.node(id).val; }
  static const std::vector<double>& grad(Tape& t, int id) { return t.node(id).grad; }
  static bool needs(Tape& t, int id) { return t.node(id).needs_grad; }
  static Tensor make(Tape& t, Shape shape, std::vector<double> val, bool needs_grad,
                     std::function<void(Tape&, int)> back) {
    Tape::Node n;
    n.shape = std::move(shape);
    n.val = std::move(val);
    n.needs_grad = needs_grad;
    if (needs_grad) n.back = std::move(back);
    return Tensor(&t, t.add_node(std::move(n)));
  }
  static const Shape& shape(Tape& t, int id) { return t.node(id).shape; }
};

namespace {

Tape& tape_of(const Tensor& a) {
  require(a.valid(), "op on default-constructed tensor");
  return *a.tape();
}

Tape& tape_of(const Tensor& a, const Tensor& b) {
  require(a.valid() && b.valid(), "op on default-constructed tensor");
  require(a.tape() == b.tape(), "op on tensors from different tapes");
  return *a.tape();
}

// Broadcast description for binary elementwise ops: result has shape of the
// "full" operand; the other is either equal, scalar, a {1,n} row or {m,1} col.
enum class Bcast { kSame, kScalarA, kScalarB, kRowA, kRowB, kColA, kColB };

struct BinPlan {
  Shape out;
  Bcast mode;
};

BinPlan plan_binary(const Shape& a, const Shape& b) {
  if (same_shape(a, b)) return {a, Bcast::kSame};
  if (numel(b) == 1) return {a, Bcast::kScalarB};
  if (numel(a) == 1) return {b, Bcast::kScalarA};
  if (a.size() == 2 && b.size() == 2) {
    if (b[0] == 1 && b[1] == a[1]) return {a, Bcast::kRowB};
    if (b[1] == 1 && b[0] == a[0]) return {a, Bcast::kColB};
    if (a[0] == 1 && a[1] == b[1]) return {b, Bcast::kRowA};
    if (a[1] == 1 && a[0] == b[0]) return {b, Bcast::kColA};
  }
  throw ShapeError("binary op: incompatible shapes");
}

// Index of operand element for output element (r, c) of an {m,n} output.
template <typename F>
void for_each_out(const Shape& out, F&& f) {
  if (out.size() == 2) {
    const std::int64_t m = out[0], n = out[1];
    for (std::int64_t r = 0; r < m; ++r)
      for (std::int64_t c = 0; c < n; ++c) f(r * n + c, r, c);
  } else {
    const std::int64_t n = numel(out);
    for (std::int64_t i = 0; i < n; ++i) f(i, 0, i);
  }
}

std::int64_t bidx(Bcast mode, bool is_a, std::int64_t flat, std::int64_t r, std::int64_t c,
                  std::int64_t ncols) {
  switch (mode) {
    case Bcast::kSame:
      return flat;
    case Bcast::kScalarA:
      return is_a ? 0 : flat;
    case Bcast::kScalarB:
      return is_a ? flat : 0;
    case Bcast::kRowA:
      return is_a ? c : flat;
    case Bcast::kRowB:
      return is_a ? flat : c;
    case Bcast::kColA:
      return is_a ? r : flat;
    case Bcast::kColB:
      return is_a ? flat : r;
  }
  (void)ncols;
  return flat;
}

template <typename Fwd, typename BwdA, typename BwdB>
Tensor binary_op(const Tensor& a, const Tensor& b, Fwd fwd, BwdA dfda, BwdB dfdb) {
  Tape& t = tape_of(a, b);
  const BinPlan plan = plan_binary(a.shape(), b.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(static_cast<std::size_t>(numel(plan.out)));
  for_each_out(plan.out, [&](std::int64_t flat, std::int64_t r, std::int64_t c) {
    const double x = av[static_cast<std::size_t>(bidx(plan.mode, true, flat, r, c, 0))];
    const double y = bv[static_cast<std::size_t>(bidx(plan.mode, false, flat, r, c, 0))];
    out[static_cast<std::size_t>(flat)] = fwd(x, y);
  });
  const bool needs = a.requires_grad() || b.requires_grad();
  const int aid = a.id(), bid = b.id();
  const Bcast mode = plan.mode;
  const Shape out_shape = plan.out;
  return OpAccess::make(
      t, plan.out, std::move(out), needs, [=](Tape& tp, int self) {
        const auto& g = OpAccess::grad(tp, self);
        const auto& xv = OpAccess::val(tp, aid);
        const auto& yv = OpAccess::val(tp, bid);
        const bool na = OpAccess::needs(tp, aid);
        const bool nb = OpAccess::needs(tp, bid);
        if (!na && !nb) return;
        auto* ga = na ? &OpAccess::grad_buf(tp, aid) : nullptr;
        auto* gb = nb ? &OpAccess::grad_buf(tp, bid) : nullptr;
        for_each_out(out_shape, [&](std::int64_t flat, std::int64_t r, std::int64_t c) {
          const auto ia = static_cast<std::size_t>(bidx(mode, true, flat, r, c, 0));
          const auto ib = static_cast<std::size_t>(bidx(mode, false, flat, r, c, 0));
          const double go = g[static_cast<std::size_t>(flat)];
          if (ga) (*ga)[ia] += go * dfda(xv[ia], yv[ib]);
          if (gb) (*gb)[ib] += go * dfdb(xv[ia], yv[ib]);
        });
      });
}

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd dfdx) {
  Tape& t = tape_of(a);
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  const int aid = a.id();
  return OpAccess::make(t, a.shape(), std::move(out), a.requires_grad(),
                        [=](Tape& tp, int self) {
                          if (!OpAccess::needs(tp, aid)) return;
                          const auto& g = OpAccess::grad(tp, self);
                          const auto& yv = OpAccess::val(tp, self);
                          const auto& xv = OpAccess::val(tp, aid);
                          auto& ga = OpAccess::grad_buf(tp, aid);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            ga[i] += g[i] * dfdx(xv[i], yv[i]);
                        });
}

}  // namespace

// ---- binary -----------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor neg(const Tensor& a) { return scalar_mul(a, -1.0); }

Tensor scalar_mul(const Tensor& a, double s) {
  return unary_op(
      a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor scalar_add(const Tensor& a, double s) {
  return unary_op(
      a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

// ---- unary ------------------------------------------------------------------

Tensor exp_(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor sqrt_(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor abs_(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor sin_(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Tensor cos_(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary_op(
      a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor huber(const Tensor& r, double delta) {
  return unary_op(
      r,
      [delta](double x) { return x <= delta ? 0.5 * x * x : delta * (x - 0.5 * delta); },
      [delta](double x, double) { return x <= delta ? x : delta; });
}

// ---- structure --------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  require(numel(shape) == a.size(), "reshape: element count mismatch");
  Tape& t = tape_of(a);
  const int aid = a.id();
  return OpAccess::make(t, std::move(shape), a.values(), a.requires_grad(),
                        [aid](Tape& tp, int self) {
                          if (!OpAccess::needs(tp, aid)) return;
                          const auto& g = OpAccess::grad(tp, self);
                          auto& ga = OpAccess::grad_buf(tp, aid);
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                        });
}

Tensor transpose(const Tensor& a) {
  require(a.shape().size() == 2, "transpose: tensor must be 2-D");
  Tape& t = tape_of(a);
  const std::int64_t m = a.rows(), n = a.cols();
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::int64_t r = 0; r < m; ++r)
    for (std::int64_t c = 0; c < n; ++c)
      out[static_cast<std::size_t>(c * m + r)] = av[static_cast<std::size_t>(r * n + c)];
  const int aid = a.id();
  return OpAccess::make(t, {n, m}, std::move(out), a.requires_grad(),
                        [aid, m, n](Tape& tp, int self) {
                          if (!OpAccess::needs(tp, aid)) return;
                          const auto& g = OpAccess::grad(tp, self);
                          auto& ga = OpAccess::grad_buf(tp, aid);
                          for (std::int64_t r = 0; r < m; ++r)
                            for (std::int64_t c = 0; c < n; ++c)
                              ga[static_cast<std::size_t>(r * n + c)] +=
                                  g[static_cast<std::size_t>(c * m + r)];
                        });
}

Tensor slice_rows(const Tensor& a, std::int64_t r0, std::int64_t r1) {
  require(a.shape().size() == 2, "slice_rows: tensor must be 2-D");
  require(0 <= r0 && r0 < r1 && r1 <= a.rows(), "slice_rows: range out of bounds");
  Tape& t = tape_of(a);
  const std::int64_t n = a.cols();
  const auto& av = a.values();
  std::vector<double> out(av.begin() + r0 * n, av.begin() + r1 * n);
  const int aid = a.id();
  return OpAccess::make(t, {r1 - r0, n}, std::move(out), a.requires_grad(),
                        [aid, r0, n](Tape& tp, int self) {
                          if (!OpAccess::needs(tp, aid)) return;
                          const auto& g = OpAccess::grad(tp, self);
                          auto& ga = OpAccess::grad_buf(tp, aid);
                          const std::size_t off = static_cast<std::size_t>(r0 * n);
                          for (std::size_t i = 0; i < g.size(); ++i) ga[off + i] += g[i];
                        });
}

Tensor slice_cols(const Tensor& a, std::int64_t c0, std::int64_t c1) {
  require(a.shape().size() == 2, "slice_cols: tensor must be 2-D");
  require(0 <= c0 && c0 < c1 && c1 <= a.cols(), "slice_cols: range out of bounds");
  Tape& t = tape_of(a);
  const std::int64_t m = a.rows(), n = a.cols(), w = c1 - c0;
  const auto& av = a.values();
  std::vector<double> out(static_cast<std::size_t>(m * w));
  for (std::int64_t r = 0; r < m; ++r)
    for (std::int64_t c = 0; c < w; ++c)
      out[static_cast<std::size_t>(r * w + c)] = av[static_cast<std::size_t>(r * n + c0 + c)];
  const int aid = a.id();
  return OpAccess::make(t, {m, w}, std::move(out), a.requires_grad(),
                        [aid, m, n, c0, w](Tape& tp, int self) {
                          if (!OpAccess::needs(tp, aid)) return;
                          const auto& g = OpAccess::grad(tp, self);
                          auto& ga = OpAccess::grad_buf(tp, aid);
                          for (std::int64_t r = 0; r < m; ++r)
                            for (std::int64_t c = 0; c < w; ++c)
                              ga[static_cast<std::size_t>(r * n + c0 + c)] +=
                                  g[static_cast<std::size_t>(r * w + c)];
                        });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require(a.shape().size() == 2 && b.shape().size() == 2, "concat_cols: tensors must be 2-D");
  require(a.rows() == b.rows(), "concat_cols: row count mismatch");
  Tape& t = tape_of(a, b);
  const std::int64_t m = a.rows(), na = a.cols(), nb = b.cols(), n = na + nb;
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(static_cast<std::size_t>(m * n));
  for (std::int64_t r = 0; r < m; ++r) {
    for (std::int64_t c = 0; c < na; ++c)
      out[static_cast<std::size_t>(r * n + c)] = av[static_cast<std::size_t>(r * na + c)];
    for (std::int64_t c = 0; c < nb; ++c)
      out[static_cast<std::size_t>(r * n + na + c)] = bv[static_cast<std::size_t>(r * nb + c)];
  }
  const int aid = a.id(), bid = b.id();
  return OpAccess::make(
      t, {m, n}, std::move(out), a.requires_grad() || b.requires_grad(),
      [aid, bid, m, na, nb, n](Tape& tp, int self) {
        const auto& g = OpAccess::grad(tp, self);
        if (OpAccess::needs(tp, aid)) {
          auto& ga = OpAccess::grad_buf(tp, aid);
          for (std::int64_t r = 0; r < m; ++r)
            for (std::int64_t c = 0; c < na; ++c)
              ga[static_cast<std::size_t>(r * na + c)] += g[static_cast<std::size_t>(r * n + c)];
        }
        if (OpAccess::needs(tp, bid)) {
          auto& gb = OpAccess::grad_buf(tp, bid);
          for (std::int64_t r = 0; r < m; ++r)
            for (std::int64_t c = 0; c < nb; ++c)
              gb[static_cast<std::size_t>(r * nb + c)] +=
                  g[static_cast<std::size_t>(r * n + na + c)];
        }
      });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require(a.shape().size() == 2 && b.shape().size() == 2, "concat_rows: tensors must be 2-D");
  require(a.cols() == b.cols(), "concat_rows: column count mismatch");
  Tape& t = tape_of(a, b);
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out;
  out.reserve(av.size() + bv.size());
  out.insert(out.end(), av.begin(), av.end());
  out.insert(out.end(), bv.begin(), bv.end());
  const int aid = a.id(), bid = b.id();
  const std::size_t asz = av.size();
  return OpAccess::make(t, {a.rows() + b.rows(), a.cols()}, std::move(out),
                        a.requires_grad() || b.requires_grad(),
                        [aid, bid, asz](Tape& tp, int self) {
                          const auto& g = OpAccess::grad(tp, self);
                          if (OpAccess::needs(tp, aid)) {
                            auto& ga = OpAccess::grad_buf(tp, aid);
                            for (std::size_t i = 0; i < asz; ++i) ga[i] += g[i];
                          }
                          if (OpAccess::needs(tp, bid)) {
                            auto& gb = OpAccess::grad_buf(tp, bid);
                            for (std::size_t i = asz; i < g.size(); ++i) gb[i - asz] += g[i];
                          }
                        });
}

Tensor gather_rows(const Tensor& a, std::vector<std::int64_t> rows) {
  require(a.shape().size() == 2, "gather_rows: tensor must be 2-D");
  Tape& t = tape_of(a);
  const std::int64_t m = a.rows(), n = a.cols();
  for (auto r : rows) require(0 <= r && r < m, "gather_rows: index out of bounds");
  const auto& av = a.values();
  const auto k = static_cast<std::int64_t>(rows.size());
  std::vector<double> out(static_cast<std::size_t>(k * n));
  for (std::int64_t i = 0; i < k; ++i)
    std::copy_n(av.begin() + rows[static_cast<std::size_t>(i)] * n, n, out.begin() + i * n);
  const int aid = a.id();
  return OpAccess::make(t, {k, n}, std::move(out), a.requires_grad(),
                        [aid, n, rows = std::move(rows)](Tape& tp, int self) {
                          if (!OpAccess::needs(tp, aid)) return;
                          const auto& g = OpAccess::grad(tp, self);
                          auto& ga = OpAccess::grad_buf(tp, aid);
                          for (std::size_t i = 0; i < rows.size(); ++i)
                            for (std::int64_t c = 0; c < n; ++c)
                              ga[static_cast<std::size_t>(rows[i] * n + c)] +=
                                  g[i * static_cast<std::size_t>(n) + static_cast<std::size_t>(c)];
                        });
}

// ---- reductions -------------------------------------------------------------

Tensor sum(const Tensor& a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.values()) s += v;
  const int aid = a.id();
  return OpAccess::make(t, {1}, {s}, a.requires_grad(), [aid](Tape& tp, int self) {
    if (!OpAccess::needs(tp, aid)) return;
    const double g = OpAccess::grad(tp, self)[0];
    auto& ga = OpAccess::grad_buf(tp, aid);
    for (auto& v : ga) v += g;
  });
}

Tensor sum_axis(const Tensor& a, int axis) {
  require(a.shape().size() == 2, "sum_axis: tensor must be 2-D");
  require(axis == 0 || axis == 1, "sum_axis: axis must be 0 or 1");
  Tape& t = tape_of(a);
  const std::int64_t m = a.rows(), n = a.cols();
  const auto& av = a.values();
  Shape out_shape = (axis == 0) ? Shape{1, n} : Shape{m, 1};
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)), 0.0);
  for (std::int64_t r = 0; r < m; ++r)
    for (std::int64_t c = 0; c < n; ++c)
      out[static_cast<std::size_t>(axis == 0 ? c : r)] += av[static_cast<std::size_t>(r * n + c)];
  const int aid = a.id();
  return OpAccess::make(t, out_shape, std::move(out), a.requires_grad(),
                        [aid, m, n, axis](Tape& tp, int self) {
                          if (!OpAccess::needs(tp, aid)) return;
                          const auto& g = OpAccess::grad(tp, self);
                          auto& ga = OpAccess::grad_buf(tp, aid);
                          for (std::int64_t r = 0; r < m; ++r)
                            for (std::int64_t c = 0; c < n; ++c)
                              ga[static_cast<std::size_t>(r * n + c)] +=
                                  g[static_cast<std::size_t>(axis == 0 ? c : r)];
                        });
}

Tensor l1_norm(const Tensor& a) { return sum(abs_(a)); }

Tensor squared_norm(const Tensor& a) { return sum(mul(a, a)); }

// ---- matmul -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.shape().size() == 2 && b.shape().size() == 2, "matmul: tensors must be 2-D");
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Tape& t = tape_of(a, b);
  const std::int64_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(static_cast<std::size_t>(m * n));
  {
    ConstMatMap A(a.values().data(), m, k);
    ConstMatMap B(b.values().data(), k, n);
    MatMap C(out.data(), m, n);
    C.noalias() = A * B;
  }
  const int aid = a.id(), bid = b.id();
  return OpAccess::make(t, {m, n}, std::move(out), a.requires_grad() || b.requires_grad(),
                        [aid, bid, m, k, n](Tape& tp, int self) {
                          ConstMatMap G(OpAccess::grad(tp, self).data(), m, n);
                          if (OpAccess::needs(tp, aid)) {
                            ConstMatMap B(OpAccess::val(tp, bid).data(), k, n);
                            MatMap GA(OpAccess::grad_buf(tp, aid).data(), m, k);
                            GA.noalias() += G * B.transpose();
                          }
                          if (OpAccess::needs(tp, bid)) {
                            ConstMatMap A(OpAccess::val(tp, aid).data(), m, k);
                            MatMap GB(OpAccess::grad_buf(tp, bid).data(), k, n);
                            GB.noalias() += A.transpose() * G;
                          }
                        });
}

// ---- softmax ----------------------------------------------------------------

Tensor softmax_rows(const Tensor& a) {
  require(a.shape().size() == 2, "softmax_rows: tensor must be 2-D");
  Tape& t = tape_of(a);
  const std::int64_t m = a.rows(), n = a.cols();
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::int64_t r = 0; r < m; ++r) {
    const double* row = av.data() + r * n;
    double mx = row[0];
    for (std::int64_t c = 1; c < n; ++c) mx = std::max(mx, row[c]);
    double denom = 0.0;
    double* orow = out.data() + r * n;
    for (std::int64_t c = 0; c < n; ++c) {
      orow[c] = std::exp(row[c] - mx);
      denom += orow[c];
    }
    for (std::int64_t c = 0; c < n; ++c) orow[c] /= denom;
  }
  const int aid = a.id();
  return OpAccess::make(t, {m, n}, std::move(out), a.requires_grad(),
                        [aid, m, n](Tape& tp, int self) {
                          if (!OpAccess::needs(tp, aid)) return;
                          const auto& g = OpAccess::grad(tp, self);
                          const auto& p = OpAccess::val(tp, self);
                          auto& ga = OpAccess::grad_buf(tp, aid);
                          for (std::int64_t r = 0; r < m; ++r) {
                            const double* pr = p.data() + r * n;
                            const double* gr = g.data() + r * n;
                            double dot = 0.0;
                            for (std::int64_t c = 0; c < n; ++c) dot += pr[c] * gr[c];
                            double* gar = ga.data() + r * n;
                            for (std::int64_t c = 0; c < n; ++c)
                              gar[c] += pr[c] * (gr[c] - dot);
                          }
                        });
}

// ---- bilinear sampling -------------------------------------------------------

namespace {

struct BilinearTap {
  std::size_t i00, i01, i10, i11;
  double w00, w01, w10, w11;
  double fx, fy;
  double dfx, dfy;  // d(weight fraction)/d(coordinate)
  bool in_x, in_y;
};

BilinearTap bilinear_tap(double x, double y, std::int64_t h, std::int64_t w, std::int64_t ch,
                         std::int64_t c, bool smooth) {
  BilinearTap tap;
  tap.in_x = x > 0.0 && x < static_cast<double>(w - 1);
  tap.in_y = y > 0.0 && y < static_cast<double>(h - 1);
  x = std::min(std::max(x, 0.0), static_cast<double>(w - 1));
  y = std::min(std::max(y, 0.0), static_cast<double>(h - 1));
  const std::int64_t x0 = std::max(std::int64_t{0}, std::min(static_cast<std::int64_t>(x), w - 2));
  const std::int64_t y0 = std::max(std::int64_t{0}, std::min(static_cast<std::int64_t>(y), h - 2));
  const std::int64_t x1 = std::min(x0 + 1, w - 1);
  const std::int64_t y1 = std::min(y0 + 1, h - 1);
  const double tx = x - static_cast<double>(x0);
  const double ty = y - static_cast<double>(y0);
  if (smooth) {
    tap.fx = tx * tx * (3.0 - 2.0 * tx);
    tap.fy = ty * ty * (3.0 - 2.0 * ty);
    tap.dfx = 6.0 * tx * (1.0 - tx);
    tap.dfy = 6.0 * ty * (1.0 - ty);
  } else {
    tap.fx = tx;
    tap.fy = ty;
    tap.dfx = tap.dfy = 1.0;
  }
  tap.w00 = (1 - tap.fx) * (1 - tap.fy);
  tap.w01 = tap.fx * (1 - tap.fy);
  tap.w10 = (1 - tap.fx) * tap.fy;
  tap.w11 = tap.fx * tap.fy;
  tap.i00 = static_cast<std::size_t>((y0 * w + x0) * ch + c);
  tap.i01 = static_cast<std::size_t>((y0 * w + x1) * ch + c);
  tap.i10 = static_cast<std::size_t>((y1 * w + x0) * ch + c);
  tap.i11 = static_cast<std::size_t>((y1 * w + x1) * ch + c);
  return tap;
}

Tensor sample_impl(const Tensor& img, const Tensor& xy, bool smooth) {
  const Shape& is = img.shape();
  require(is.size() == 2 || is.size() == 3, "sample: image must be {H,W} or {H,W,C}");
  require(xy.shape().size() == 2 && xy.cols() == 2, "sample: xy must be {N,2}");
  Tape& t = tape_of(img, xy);
  const std::int64_t h = is[0], w = is[1];
  const std::int64_t ch = is.size() == 3 ? is[2] : 1;
  const std::int64_t n = xy.rows();
  const auto& iv = img.values();
  const auto& pv = xy.values();
  std::vector<double> out(static_cast<std::size_t>(n * ch));
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = pv[static_cast<std::size_t>(2 * i)];
    const double y = pv[static_cast<std::size_t>(2 * i + 1)];
    for (std::int64_t c = 0; c < ch; ++c) {
      const BilinearTap tap = bilinear_tap(x, y, h, w, ch, c, smooth);
      out[static_cast<std::size_t>(i * ch + c)] = tap.w00 * iv[tap.i00] + tap.w01 * iv[tap.i01] +
                                                  tap.w10 * iv[tap.i10] + tap.w11 * iv[tap.i11];
    }
  }
  const int iid = img.id(), pid = xy.id();
  return OpAccess::make(
      t, {n, ch}, std::move(out), img.requires_grad() || xy.requires_grad(),
      [iid, pid, n, h, w, ch, smooth](Tape& tp, int self) {
        const auto& g = OpAccess::grad(tp, self);
        const auto& pix = OpAccess::val(tp, pid);
        const auto& im = OpAccess::val(tp, iid);
        auto* gimg = OpAccess::needs(tp, iid) ? &OpAccess::grad_buf(tp, iid) : nullptr;
        auto* gxy = OpAccess::needs(tp, pid) ? &OpAccess::grad_buf(tp, pid) : nullptr;
        if (!gimg && !gxy) return;
        for (std::int64_t i = 0; i < n; ++i) {
          const double x = pix[static_cast<std::size_t>(2 * i)];
          const double y = pix[static_cast<std::size_t>(2 * i + 1)];
          for (std::int64_t c = 0; c < ch; ++c) {
            const BilinearTap tap = bilinear_tap(x, y, h, w, ch, c, smooth);
            const double go = g[static_cast<std::size_t>(i * ch + c)];
            if (gimg) {
              (*gimg)[tap.i00] += go * tap.w00;
              (*gimg)[tap.i01] += go * tap.w01;
              (*gimg)[tap.i10] += go * tap.w10;
              (*gimg)[tap.i11] += go * tap.w11;
            }
            if (gxy) {
              const double dvdx = tap.dfx * ((1 - tap.fy) * (im[tap.i01] - im[tap.i00]) +
                                             tap.fy * (im[tap.i11] - im[tap.i10]));
              const double dvdy = tap.dfy * ((1 - tap.fx) * (im[tap.i10] - im[tap.i00]) +
                                             tap.fx * (im[tap.i11] - im[tap.i01]));
              if (tap.in_x) (*gxy)[static_cast<std::size_t>(2 * i)] += go * dvdx;
              if (tap.in_y) (*gxy)[static_cast<std::size_t>(2 * i + 1)] += go * dvdy;
            }
          }
        }
      });
}

}  // namespace

Tensor bilinear_sample(const Tensor& img, const Tensor& xy) {
  return sample_impl(img, xy, false);
}

Tensor smoothstep_sample(const Tensor& img, const Tensor& xy) {
  return sample_impl(img, xy, true);
}

// ---- patch extraction ---------------------------------------------------------

Tensor patches(const Tensor& img, int p) {
  require(img.shape().size() == 2, "patches: image must be {H,W}");
  require(p >= 1 && p % 2 == 1, "patches: window size must be odd");
  Tape& t = tape_of(img);
  const std::int64_t h = img.shape()[0], w = img.shape()[1];
  const int half = p / 2;
  const auto& iv = img.values();
  const std::int64_t d = static_cast<std::int64_t>(p) * p;
  std::vector<double> out(static_cast<std::size_t>(h * w * d));
  auto src_index = [h, w](std::int64_t y, std::int64_t x, int dy, int dx) {
    const std::int64_t sy = std::min(std::max(y + dy, std::int64_t{0}), h - 1);
    const std::int64_t sx = std::min(std::max(x + dx, std::int64_t{0}), w - 1);
    return static_cast<std::size_t>(sy * w + sx);
  };
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      double* dst = out.data() + (y * w + x) * d;
      int k = 0;
      for (int dy = -half; dy <= half; ++dy)
        for (int dx = -half; dx <= half; ++dx) dst[k++] = iv[src_index(y, x, dy, dx)];
    }
  const int iid = img.id();
  return OpAccess::make(t, {h * w, d}, std::move(out), img.requires_grad(),
                        [iid, h, w, d, half, src_index](Tape& tp, int self) {
                          if (!OpAccess::needs(tp, iid)) return;
                          const auto& g = OpAccess::grad(tp, self);
                          auto& gi = OpAccess::grad_buf(tp, iid);
                          for (std::int64_t y = 0; y < h; ++y)
                            for (std::int64_t x = 0; x < w; ++x) {
                              const double* gr = g.data() + (y * w + x) * d;
                              int k = 0;
                              for (int dy = -half; dy <= half; ++dy)
                                for (int dx = -half; dx <= half; ++dx)
                                  gi[src_index(y, x, dy, dx)] += gr[k++];
                            }
                        });
}

Tensor splat_accumulate(const Tensor& centers, const Tensor& inv2s2,
                        std::vector<double> colors, std::vector<double> vis, int height,
                        int width, double cutoff) {
  Tape& t = tape_of(centers, inv2s2);
  require(centers.shape().size() == 2 && centers.cols() == 2,
          "splat_accumulate: centers must be {n,2}");
  const std::int64_t n = centers.rows();
  require(inv2s2.shape() == Shape{n, 1}, "splat_accumulate: inv2s2 must be {n,1}");
  require(static_cast<std::int64_t>(colors.size()) == 3 * n,
          "splat_accumulate: colors must have 3n entries");
  require(static_cast<std::int64_t>(vis.size()) == n,
          "splat_accumulate: vis must have n entries");
  require(height >= 1 && width >= 1 && cutoff > 0, "splat_accumulate: bad raster arguments");

  const std::int64_t h = height, w = width;
  // visits every in-footprint pixel of every visible splat
  auto for_each_splat = [n, h, w, cutoff](
                            const std::vector<double>& cv, const std::vector<double>& sv,
                            const std::vector<double>& vis_v, auto&& pixel_fn) {
    for (std::int64_t i = 0; i < n; ++i) {
      if (vis_v[static_cast<std::size_t>(i)] == 0.0) continue;
      const double cx = cv[static_cast<std::size_t>(2 * i)];
      const double cy = cv[static_cast<std::size_t>(2 * i) + 1];
      const double s = sv[static_cast<std::size_t>(i)];
      if (!(s > 0.0)) continue;
      const double r = cutoff / std::sqrt(2.0 * s);
      const auto x0 = static_cast<std::int64_t>(std::ceil(cx - r));
      const auto x1 = static_cast<std::int64_t>(std::floor(cx + r));
      const auto y0 = static_cast<std::int64_t>(std::ceil(cy - r));
      const auto y1 = static_cast<std::int64_t>(std::floor(cy + r));
      for (std::int64_t y = std::max<std::int64_t>(y0, 0); y <= std::min(y1, h - 1); ++y)
        for (std::int64_t x = std::max<std::int64_t>(x0, 0); x <= std::min(x1, w - 1); ++x) {
          const double dx = static_cast<double>(x) - cx;
          const double dy = static_cast<double>(y) - cy;
          const double d2 = dx * dx + dy * dy;
          pixel_fn(i, y * w + x, dx, dy, d2, std::exp(-d2 * s), s);
        }
    }
  };

  std::vector<double> out(static_cast<std::size_t>(h * w) * 4, 0.0);
  for_each_splat(centers.values(), inv2s2.values(), vis,
                 [&](std::int64_t i, std::int64_t p, double, double, double, double wgt,
                     double) {
                   const double* col = colors.data() + 3 * i;
                   double* dst = out.data() + 4 * p;
                   dst[0] += wgt * col[0];
                   dst[1] += wgt * col[1];
                   dst[2] += wgt * col[2];
                   dst[3] += wgt;
                 });

  const int cid = centers.id(), sid = inv2s2.id();
  const bool needs = centers.requires_grad() || inv2s2.requires_grad();
  return OpAccess::make(
      t, {h * w, 4}, std::move(out), needs,
      [cid, sid, colors = std::move(colors), vis = std::move(vis), for_each_splat](
          Tape& tp, int self) {
        const bool nc = OpAccess::needs(tp, cid);
        const bool ns = OpAccess::needs(tp, sid);
        if (!nc && !ns) return;
        const auto& g = OpAccess::grad(tp, self);
        auto* gc = nc ? &OpAccess::grad_buf(tp, cid) : nullptr;
        auto* gs = ns ? &OpAccess::grad_buf(tp, sid) : nullptr;
        for_each_splat(OpAccess::val(tp, cid), OpAccess::val(tp, sid), vis,
                       [&](std::int64_t i, std::int64_t p, double dx, double dy, double d2,
                           double wgt, double s) {
                         const double* col = colors.data() + 3 * i;
                         const double* gr = g.data() + 4 * p;
                         const double gw =
                             gr[0] * col[0] + gr[1] * col[1] + gr[2] * col[2] + gr[3];
                         if (gc) {
                           (*gc)[static_cast<std::size_t>(2 * i)] += gw * wgt * 2.0 * s * dx;
                           (*gc)[static_cast<std::size_t>(2 * i) + 1] +=
                               gw * wgt * 2.0 * s * dy;
                         }
                         if (gs) (*gs)[static_cast<std::size_t>(i)] -= gw * wgt * d2;
                       });
      });
}

}  // namespace epirefine::diffcore
