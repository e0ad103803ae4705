#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <epirefine/diffcore/tensor.hpp>

#include <cmath>
#include <random>

#include "fd_oracle.hpp"

using namespace epirefine::diffcore;
using epirefine::testing::fd_gradient;
using epirefine::testing::grad_rel_error;

namespace {

std::vector<double> random_vec(std::size_t n, unsigned seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

}  // namespace

TEST_CASE("primitive forward values") {
  Tape t;
  // matmul identity
  Tensor I3 = t.constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor v = t.constant({3, 1}, {2.0, -1.5, 7.0});
  Tensor mv = matmul(I3, v);
  CHECK(mv.values()[0] == doctest::Approx(2.0));
  CHECK(mv.values()[1] == doctest::Approx(-1.5));
  CHECK(mv.values()[2] == doctest::Approx(7.0));

  // softmax symmetry
  Tensor z = t.constant({1, 2}, {0.0, 0.0});
  Tensor s = softmax_rows(z);
  CHECK(s.values()[0] == doctest::Approx(0.5));
  CHECK(s.values()[1] == doctest::Approx(0.5));

  // bilinear sample at the center of a 2x2 image
  Tensor img = t.constant({2, 2}, {0.0, 1.0, 2.0, 3.0});
  Tensor xy = t.constant({1, 2}, {0.5, 0.5});
  Tensor sampled = bilinear_sample(img, xy);
  CHECK(sampled.values()[0] == doctest::Approx(1.5));
}

TEST_CASE("backward basics") {
  // loss = sum(z^2), z = [1,2] -> grad [2,4]
  Tape t;
  Tensor z = t.leaf({2}, {1.0, 2.0});
  Tensor loss = squared_norm(z);
  t.backward(loss);
  CHECK(z.grad()[0] == doctest::Approx(2.0));
  CHECK(z.grad()[1] == doctest::Approx(4.0));

  // constant loss -> zero grad
  Tape t2;
  Tensor z2 = t2.leaf({2}, {1.0, 2.0});
  Tensor c = t2.constant_scalar(3.0);
  Tensor loss2 = sum(c);
  t2.backward(loss2);
  CHECK(z2.grad()[0] == 0.0);
  CHECK(z2.grad()[1] == 0.0);

  // non-scalar loss rejected
  Tape t3;
  Tensor z3 = t3.leaf({2}, {1.0, 2.0});
  CHECK_THROWS(t3.backward(z3));
}

TEST_CASE("shape mismatch raises") {
  Tape t;
  Tensor a = t.constant({2, 2}, {1, 2, 3, 4});
  Tensor b = t.constant({3, 1}, {1, 2, 3});
  CHECK_THROWS_AS(add(a, b), epirefine::ShapeError);
  CHECK_THROWS_AS(matmul(a, b), epirefine::ShapeError);
}

namespace {

// Builds a pipeline from params, returns (loss value, leaf grad after backward).
struct RunResult {
  double loss;
  std::vector<double> grad;
};

template <typename Builder>
RunResult run_tape(const Builder& build, const std::vector<double>& x, Shape leaf_shape) {
  Tape t;
  Tensor leaf = t.leaf(leaf_shape, x);
  Tensor loss = build(t, leaf);
  t.backward(loss);
  return {loss.value(), leaf.grad()};
}

template <typename Builder>
void check_fd(const Builder& build, const std::vector<double>& x, Shape leaf_shape,
              double tol = 1e-6, double h = 1e-5) {
  auto f = [&](const std::vector<double>& p) {
    Tape t;
    Tensor leaf = t.leaf(leaf_shape, p);
    return build(t, leaf).value();
  };
  const auto ref = fd_gradient(f, x, h);
  const auto got = run_tape(build, x, leaf_shape).grad;
  CHECK(grad_rel_error(got, ref) < tol);
}

}  // namespace

TEST_CASE("per-primitive finite-difference checks") {
  const unsigned kSeeds = 10;
  for (unsigned seed = 0; seed < kSeeds; ++seed) {
    const auto x = random_vec(12, seed, 0.2, 1.8);  // positive, away from kinks

    check_fd([](Tape& t, Tensor z) { return sum(exp_(z)); }, x, {12});
    check_fd([](Tape& t, Tensor z) { return sum(sqrt_(z)); }, x, {12});
    check_fd([](Tape& t, Tensor z) { return l1_norm(z); }, x, {12});
    check_fd([](Tape& t, Tensor z) { return squared_norm(z); }, x, {12});
    check_fd([](Tape& t, Tensor z) { return sum(sin_(z)); }, x, {12});
    check_fd([](Tape& t, Tensor z) { return sum(cos_(z)); }, x, {12});
    check_fd([](Tape& t, Tensor z) { return sum(sigmoid(z)); }, x, {12});
    check_fd([](Tape& t, Tensor z) { return sum(clamp(z, 0.3, 1.6)); }, x, {12}, 1e-6, 1e-6);
    check_fd([](Tape& t, Tensor z) { return sum(huber(z, 1.0)); }, x, {12});
    check_fd(
        [](Tape& t, Tensor z) {
          Tensor m = reshape(z, {3, 4});
          Tensor w = t.constant({3, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
          return sum(mul(softmax_rows(m), w));
        },
        x, {12});
    check_fd(
        [](Tape& t, Tensor z) {
          Tensor m = reshape(z, {3, 4});
          Tensor w = t.constant({4, 2}, {0.3, -1.0, 0.7, 0.2, -0.4, 0.9, 1.1, -0.6});
          return squared_norm(matmul(m, w));
        },
        x, {12});
    check_fd(
        [](Tape& t, Tensor z) {
          Tensor m = reshape(z, {3, 4});
          Tensor row = t.constant({1, 4}, {0.5, -0.25, 1.5, 2.0});
          Tensor col = t.constant({3, 1}, {1.0, 2.0, 0.5});
          return sum(div(mul(add(m, row), col), scalar_add(abs_(m), 1.0)));
        },
        x, {12});
    check_fd(
        [](Tape& t, Tensor z) {
          Tensor m = reshape(z, {3, 4});
          Tensor a = slice_cols(m, 0, 2);
          Tensor b = slice_cols(m, 2, 4);
          Tensor cat = concat_cols(mul(a, b), sub(a, b));
          Tensor picked = gather_rows(cat, {2, 0, 2});
          return squared_norm(transpose(picked));
        },
        x, {12});
    check_fd(
        [](Tape& t, Tensor z) {
          Tensor img = reshape(z, {3, 4});
          Tensor xy = t.constant({3, 2}, {0.7, 1.1, 2.2, 0.4, 1.5, 1.5});
          return squared_norm(bilinear_sample(img, xy));
        },
        x, {12});
    check_fd(
        [](Tape& t, Tensor z) {
          Tensor img = reshape(z, {3, 4});
          return squared_norm(patches(img, 3));
        },
        x, {12});
  }
}

TEST_CASE("bilinear sample gradient w.r.t. coordinates") {
  const auto img_data = random_vec(16 * 16, 42, 0.0, 1.0);
  const std::vector<double> pts = {3.3, 4.7, 8.1, 2.9, 12.4, 13.6};
  auto build = [&](Tape& t, Tensor xy) {
    Tensor img = t.constant({16, 16}, img_data);
    return squared_norm(bilinear_sample(img, xy));
  };
  check_fd(build, pts, {3, 2}, 1e-5, 1e-6);
}

TEST_CASE("smoothstep sample") {
  const auto img_data = random_vec(16 * 16, 42, 0.0, 1.0);
  SUBCASE("gradient w.r.t. coordinates matches finite differences") {
    const std::vector<double> pts = {3.3, 4.7, 8.1, 2.9, 12.4, 13.6};
    auto build = [&](Tape& t, Tensor xy) {
      Tensor img = t.constant({16, 16}, img_data);
      return squared_norm(smoothstep_sample(img, xy));
    };
    check_fd(build, pts, {3, 2}, 1e-5, 1e-6);
  }
  SUBCASE("gradient w.r.t. the image matches finite differences") {
    auto build = [](Tape& t, Tensor z) {
      Tensor img = reshape(z, {3, 4});
      Tensor xy = t.constant({3, 2}, {0.7, 1.1, 2.2, 0.4, 1.5, 1.5});
      return squared_norm(smoothstep_sample(img, xy));
    };
    check_fd(build, random_vec(12, 9, 0.1, 0.9), {12});
  }
  SUBCASE("agrees with bilinear at integer coordinates") {
    Tape t;
    Tensor img = t.constant({16, 16}, img_data);
    Tensor xy = t.constant({3, 2}, {0.0, 0.0, 7.0, 3.0, 15.0, 15.0});
    CHECK(smoothstep_sample(img, xy).values() == bilinear_sample(img, xy).values());
  }
  SUBCASE("position gradient is continuous across a pixel boundary") {
    auto grad_at = [&](double xc) {
      Tape t;
      Tensor img = t.constant({16, 16}, img_data);
      Tensor xy = t.leaf({1, 2}, {xc, 5.3});
      t.backward(sum(smoothstep_sample(img, xy)));
      return xy.grad()[0];
    };
    CHECK(std::abs(grad_at(7.0 - 1e-7) - grad_at(7.0 + 1e-7)) < 1e-5);
  }
}

TEST_CASE("composed pipeline gradient matches finite differences on 16x16 input") {
  // Mixed pipeline over a 16x16 leaf, per the derived oracle example.
  const auto x = random_vec(256, 7, 0.1, 0.9);
  auto build = [](Tape& t, Tensor z) {
    Tensor img = reshape(z, {16, 16});
    Tensor p = patches(img, 3);
    Tensor corr = softmax_rows(scalar_mul(p, 4.0));
    Tensor xy = t.constant({2, 2}, {4.2, 7.7, 10.1, 3.3});
    Tensor s = bilinear_sample(img, xy);
    return add(sum(mul(corr, p)), l1_norm(s));
  };
  auto f = [&](const std::vector<double>& p) {
    Tape t;
    Tensor leaf = t.leaf({256}, p);
    return build(t, leaf).value();
  };
  const auto ref = fd_gradient(f, x, 1e-3);
  const auto got = run_tape(build, x, {256}).grad;
  CHECK(grad_rel_error(got, ref) < 1e-3);
}

TEST_CASE("gradient linearity") {
  const auto x = random_vec(9, 3, -2.0, 2.0);
  auto l1 = [](Tape& t, Tensor z) { return squared_norm(z); };
  auto l2 = [](Tape& t, Tensor z) { return sum(sin_(z)); };
  const double a = 1.7, b = -0.4;
  auto combo = [&](Tape& t, Tensor z) {
    return add(scalar_mul(l1(t, z), a), scalar_mul(l2(t, z), b));
  };
  const auto g1 = run_tape(l1, x, {9}).grad;
  const auto g2 = run_tape(l2, x, {9}).grad;
  const auto gc = run_tape(combo, x, {9}).grad;
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(std::abs(gc[i] - (a * g1[i] + b * g2[i])) < 1e-9);
}

TEST_CASE("replay stability: identical passes give bit-identical gradients") {
  const auto x = random_vec(64, 11, -1.0, 1.0);
  auto build = [](Tape& t, Tensor z) {
    Tensor m = reshape(z, {8, 8});
    return sum(mul(softmax_rows(m), exp_(scalar_mul(m, 0.5))));
  };
  const auto r1 = run_tape(build, x, {64});
  const auto r2 = run_tape(build, x, {64});
  CHECK(r1.loss == r2.loss);
  REQUIRE(r1.grad.size() == r2.grad.size());
  for (std::size_t i = 0; i < r1.grad.size(); ++i) CHECK(r1.grad[i] == r2.grad[i]);
}

TEST_CASE("gradients of unused tensors are zero") {
  Tape t;
  Tensor used = t.leaf({2}, {1.0, 2.0});
  Tensor unused = t.leaf({3}, {5.0, 6.0, 7.0});
  Tensor loss = squared_norm(used);
  t.backward(loss);
  for (double g : unused.grad()) CHECK(g == 0.0);
}

TEST_CASE("bilinear sampling clamps to the border") {
  Tape t;
  Tensor img = t.constant({2, 2}, {0.0, 1.0, 2.0, 3.0});
  Tensor xy = t.constant({2, 2}, {-5.0, -5.0, 10.0, 10.0});
  Tensor s = bilinear_sample(img, xy);
  CHECK(s.values()[0] == doctest::Approx(0.0));
  CHECK(s.values()[1] == doctest::Approx(3.0));
}
