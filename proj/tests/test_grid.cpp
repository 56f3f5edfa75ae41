#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fwa/grid.hpp"
#include "fwa/rng.hpp"

using namespace fwa;

namespace {

Matrix random_matrix(Rng& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
  Matrix A(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) A(i, j) = rng.uniform(lo, hi);
  return A;
}

Matrix softmax_vec(const Matrix& x, double beta) { return softmax_cols(x, beta); }

}  // namespace

TEST_CASE("range_clamp") {
  CHECK(range_clamp(-5, 0, 1) == 0.0);
  CHECK(range_clamp(0.5, 0, 1) == 0.5);
  CHECK(range_clamp(7, 0, 1) == 1.0);
  CHECK_THROWS_AS(range_clamp(0, 1, 0), std::domain_error);
}

TEST_CASE("make_grid") {
  InterpolationGrid g = make_grid(0, 1, 4);
  REQUIRE(g.points.size() == 5);
  const double want[] = {0, 0.25, 0.5, 0.75, 1};
  for (int i = 0; i < 5; ++i) CHECK(g.points[i] == want[i]);
  CHECK(g.delta == 0.25);

  InterpolationGrid s = make_grid(-1, 1, 2);
  CHECK(s.points[0] == -1.0);
  CHECK(s.points[1] == 0.0);
  CHECK(s.points[2] == 1.0);

  CHECK_THROWS(make_grid(1, 1, 4));
  CHECK_THROWS(make_grid(0, 1, 0));
}

TEST_CASE("plan_hardmax_beta formula") {
  HardmaxPlan p = plan_hardmax_beta(3, 1.0, 0.01, HardmaxCase::unique_max);
  CHECK(p.beta_min == doctest::Approx(std::log(200.0)).epsilon(1e-14));

  HardmaxPlan q = plan_hardmax_beta(2, 0.7, 0.05, HardmaxCase::unique_max);
  CHECK(q.beta_min == doctest::Approx(-std::log(0.05) / 0.7).epsilon(1e-14));

  HardmaxPlan a = plan_hardmax_beta(6, 0.5, 0.01, HardmaxCase::unique_max);
  HardmaxPlan b = plan_hardmax_beta(6, 1.0, 0.01, HardmaxCase::unique_max);
  CHECK(a.beta_min == doctest::Approx(2.0 * b.beta_min).epsilon(1e-14));

  CHECK_THROWS(plan_hardmax_beta(3, 0.0, 0.01, HardmaxCase::unique_max));
  CHECK_THROWS(plan_hardmax_beta(2, 1.0, 0.01, HardmaxCase::two_largest));
}

TEST_CASE("hardmax lemma, unique max: 1000 vectors at planner beta") {
  Rng rng(21, "hardmax-unique");
  int violations = 0;
  for (int t = 0; t < 1000; ++t) {
    const int n = 3 + int(rng.below(8));
    const double gap = rng.uniform(0.05, 1.0);
    const double eps = rng.uniform(0.005, 0.1);
    Matrix x(n, 1);
    x(0, 0) = rng.uniform(-1, 1);
    x(1, 0) = x(0, 0) - gap;  // realizes the minimal gap exactly
    for (int i = 2; i < n; ++i) x(i, 0) = x(1, 0) - rng.uniform(0.0, 2.0);
    const double beta = plan_hardmax_beta(n, gap, eps, HardmaxCase::unique_max).beta_min;
    Matrix s = softmax_vec(x, beta);
    Matrix e1 = Matrix::Zero(n, 1);
    e1(0, 0) = 1.0;
    if (sup_norm_diff(s, e1) > eps) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("hardmax lemma, two largest: mixture bound at planner beta") {
  Rng rng(22, "hardmax-two");
  int violations = 0;
  for (int t = 0; t < 1000; ++t) {
    const int n = 3 + int(rng.below(8));
    const double gap = rng.uniform(0.2, 1.0);           // x1 - x3
    const double delta = rng.uniform(0.0, gap * 0.5);   // x1 - x2
    const double eps = rng.uniform(0.01, 0.1);
    Matrix x(n, 1);
    x(0, 0) = rng.uniform(-1, 1);
    x(1, 0) = x(0, 0) - delta;
    for (int i = 2; i < n; ++i) x(i, 0) = x(0, 0) - gap - rng.uniform(0.0, 2.0);
    x(2, 0) = x(0, 0) - gap;
    const double beta = plan_hardmax_beta(n, gap, eps, HardmaxCase::two_largest).beta_min;
    Matrix s = softmax_vec(x, beta);
    const double sig = 1.0 / (1.0 + std::exp(-beta * delta));
    Matrix mix = Matrix::Zero(n, 1);
    mix(0, 0) = sig;
    mix(1, 0) = 1.0 - sig;
    if (sup_norm_diff(s, mix) > eps) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("classify_head_case and the lemma's dichotomy") {
  // n-2 = 4 slots per head, 3 reported heads, dyadic grid.
  const int n = 6;
  InterpolationGrid g = make_grid(0.0, 12.0, 12);
  const int H = 3, H_int = H + 1;

  CHECK(classify_head_case(g.point(2), 1, g, n) == HeadCase::case1);  // interior
  CHECK(classify_head_case(g.point(2), 3, g, n) == HeadCase::case2);  // far away

  // A value strictly between head 1's and head 2's value ranges.
  const double boundary = 0.5 * (g.point(3) + g.point(4));
  int c3 = 0;
  for (int h = 1; h <= H_int; ++h)
    if (classify_head_case(boundary, h, g, n) == HeadCase::case3) ++c3;
  CHECK(c3 == 2);
  CHECK(classify_head_case(boundary, 1, g, n) == HeadCase::case3);
  CHECK(classify_head_case(boundary, 2, g, n) == HeadCase::case3);

  // Dichotomy over a dense scan of [a, b]: either one case1 and the rest
  // case2, or exactly two adjacent case3 and the rest case2.
  Rng rng(23, "dichotomy");
  for (int t = 0; t < 2000; ++t) {
    const double a_val = rng.uniform(g.a, g.b);
    int n1 = 0, n3 = 0;
    int first3 = -1, last3 = -1;
    for (int h = 1; h <= H_int; ++h) {
      HeadCase c = classify_head_case(a_val, h, g, n);
      if (c == HeadCase::case1) ++n1;
      if (c == HeadCase::case3) {
        if (first3 < 0) first3 = h;
        last3 = h;
        ++n3;
      }
    }
    const bool mode1 = (n1 == 1 && n3 == 0);
    const bool mode3 = (n1 == 0 && n3 == 2 && last3 == first3 + 1);
    CHECK((mode1 || mode3));
  }
  CHECK_THROWS(classify_head_case(0.0, 0, g, n));
}

TEST_CASE("pad_grid_for rounds p up to a multiple of n-2") {
  InterpolationGrid g = make_grid(0, 1, 10);
  InterpolationGrid p = pad_grid_for(g, 6);  // m = 4 -> 12
  CHECK(p.p == 12);
  CHECK(p.a == 0.0);
  CHECK(p.b == 1.0);
  CHECK(pad_grid_for(p, 6).p == 12);
}

TEST_CASE("build_truncated_linear basics") {
  Rng rng(24, "trunc-basic");

  // Zero coefficient: output stays within budget of 0.
  {
    InterpolationGrid g = make_grid(-1, 1, 32);
    Matrix w = Matrix::Zero(2, 1);
    auto ap = build_truncated_linear(w, g, 6, -1, 0);
    Matrix X = random_matrix(rng, 2, 6);
    Matrix out = ap.forward(X);
    CHECK(sup_norm(out) <= ap.budget());
  }

  // d=1 identity coefficient at 0.3.
  {
    InterpolationGrid g = make_grid(-1, 1, 64);
    Matrix w(1, 1);
    w << 1.0;
    auto ap = build_truncated_linear(w, g, 8, -1, 0);
    Matrix X(1, 8);
    for (int i = 0; i < 8; ++i) X(0, i) = 0.3;
    Matrix out = ap.forward(X);
    for (int i = 0; i < 8; ++i) CHECK(std::abs(out(0, i) - 0.3) <= ap.budget());
  }

  CHECK_THROWS(build_truncated_linear(Matrix::Zero(1, 1), make_grid(0, 1, 4), 2, -1, 0));
}

TEST_CASE("fast forward equals the materialized attention layer") {
  Rng rng(25, "trunc-materialize");
  for (int t = 0; t < 20; ++t) {
    const int d = 1 + int(rng.below(3)), n = 3 + int(rng.below(4));
    InterpolationGrid g = make_grid(-double(d) - 0.5, double(d) + 0.5, 4 * (n - 2));
    Matrix w = random_matrix(rng, d, 1);
    auto ap = build_truncated_linear(w, g, n, -1, int(rng.below(3)), 3);
    Matrix X = random_matrix(rng, d, n);
    Matrix fast = ap.forward(X);
    Matrix slow = forward_multi(ap.materialize(), ap.encode(X));
    CHECK(sup_norm_diff(fast, slow) <= 1e-9);
  }
}

TEST_CASE("theorem bound holds on 500 random draws") {
  Rng rng(26, "trunc-bound");
  int violations = 0;
  double worst = 0.0;
  for (int t = 0; t < 500; ++t) {
    const int d = 1 + int(rng.below(3)), n = 3 + int(rng.below(6));
    const double lim = double(d) * 1.05;
    InterpolationGrid g = make_grid(-lim, lim, (n - 2) * (2 + int(rng.below(20))));
    Matrix w = random_matrix(rng, d, 1);
    auto ap = build_truncated_linear(w, g, n, -1, 0);
    Matrix X = random_matrix(rng, d, n);
    Matrix out = ap.forward(X);
    for (int c = 0; c < n; ++c) {
      double a_val = 0.0;
      for (int r = 0; r < d; ++r) a_val += w(r, 0) * X(r, c);
      const double err = std::abs(out(0, c) - range_clamp(a_val, g.a, g.b));
      worst = std::max(worst, err - ap.budget());
      if (err > ap.budget()) ++violations;
    }
  }
  CHECK(violations == 0);
}

TEST_CASE("doubling H halves the interpolation term and tightens error") {
  Rng rng(27, "trunc-doubling");
  const int d = 2, n = 6;
  const double lim = 2.2;
  Matrix w = random_matrix(rng, d, 1);
  Matrix X = random_matrix(rng, d, n);
  InterpolationGrid g1 = make_grid(-lim, lim, (n - 2) * 8);
  InterpolationGrid g2 = make_grid(-lim, lim, (n - 2) * 16);
  auto a1 = build_truncated_linear(w, g1, n, -1, 0);
  auto a2 = build_truncated_linear(w, g2, n, -1, 0);
  CHECK(a2.interp_term() == doctest::Approx(0.5 * a1.interp_term()).epsilon(1e-14));

  double e1 = 0.0, e2 = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Matrix Xi = random_matrix(rng, d, n);
    for (int c = 0; c < n; ++c) {
      double a_val = 0.0;
      for (int r = 0; r < d; ++r) a_val += w(r, 0) * Xi(r, c);
      const double target = range_clamp(a_val, -lim, lim);
      e1 = std::max(e1, std::abs(a1.forward(Xi)(0, c) - target));
      e2 = std::max(e2, std::abs(a2.forward(Xi)(0, c) - target));
    }
  }
  CHECK(e2 <= e1 + 2.0 * a1.eps0 * a1.mv());
}

TEST_CASE("rows other than k_G stay suppressed") {
  Rng rng(28, "trunc-sparse");
  InterpolationGrid g = make_grid(-2, 2, 32);
  Matrix w = random_matrix(rng, 2, 1);
  auto ap = build_truncated_linear(w, g, 6, -1, 1, 4);
  Matrix X = random_matrix(rng, 2, 6);
  Matrix out = ap.forward(X);
  for (int r = 0; r < 4; ++r)
    if (r != 1)
      for (int c = 0; c < 6; ++c)
        CHECK(std::abs(out(r, c)) <= double(ap.H - 1) * ap.mv() * ap.eps0 + 1e-300);
}

TEST_CASE("beta guard reports the smallest achievable leak") {
  InterpolationGrid g = make_grid(-1, 1, 4000);
  Matrix w(1, 1);
  w << 1.0;
  CHECK_THROWS_AS(build_truncated_linear(w, g, 6, 1e16, 0), std::domain_error);
}
