#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fwa/algorithms.hpp"
#include "fwa/rng.hpp"

using namespace fwa;

namespace {

Matrix random_matrix(Rng& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
  Matrix A(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) A(i, j) = rng.uniform(lo, hi);
  return A;
}

}  // namespace

TEST_CASE("f-map: trivial and hand-computed values") {
  const ScalarFn zero = named_scalar("zero");
  const ScalarFn ident = named_scalar("identity");

  Matrix X(1, 3), y(1, 3), w(1, 1);
  X << 0.4, 0.4, 0.4;
  y << 0, 0, 0;
  w << 1;
  FMapPlan pz = plan_f_map(zero, 1.0, 2.0, 3, 1, 0.01, 1e-9);
  CHECK(sup_norm(pz.forward(X, y, w)) <= 0.01);

  // f = identity: each output value is f(w^T x - y) x = 0.4 * 0.4
  FMapPlan pi = plan_f_map(ident, 1.0, 2.0, 3, 1, 0.01, 1.0);
  const Matrix out = pi.forward(X, y, w);
  for (int c = 0; c < 3; ++c) CHECK(out(0, c) == doctest::Approx(0.16).epsilon(0.05));
  CHECK(sup_norm_diff(out, per_sample_gradients(X, y, w, ident)) <= 0.01);
}

TEST_CASE("f-map: tanh targets within the planned tolerance") {
  Rng rng(50, "fmap-tanh");
  const ScalarFn th = named_scalar("tanh");
  for (int t = 0; t < 20; ++t) {
    const int d = 2, n = 5;
    Matrix X = random_matrix(rng, d, n), y = random_matrix(rng, 1, n),
           w = random_matrix(rng, d, 1);
    FMapPlan p = plan_f_map(th, 1.0, double(d) + 1.0, n, d, 0.02, 1.0);
    const Matrix emu = p.forward(X, y, w);
    const Matrix oracle = per_sample_gradients(X, y, w, th);
    CHECK(sup_norm_diff(emu, oracle) <= 0.02);
  }
}

TEST_CASE("f-map: fast path matches the explicit single head") {
  Rng rng(51, "fmap-head");
  const ScalarFn th = named_scalar("tanh");
  for (int t = 0; t < 3; ++t) {
    const int d = 2, n = 4;
    Matrix X = random_matrix(rng, d, n), y = random_matrix(rng, 1, n),
           w = random_matrix(rng, d, 1);
    FMapPlan p = build_f_emulator(th, make_geometry(-3.2, 3.2, 256), 1.0, n, d, 1e-3, 1.0, 1.0);
    const Matrix Z = p.tokens(X, y, w);
    const Matrix ref = forward_head(p.head(), Z).rightCols(n);
    CHECK(sup_norm_diff(p.forward(X, y, w), Matrix(ref)) <= 1e-6);
  }
  // too-coarse grid triggers the replan error
  CHECK_THROWS_AS(build_f_emulator(th, make_geometry(-3.0, 3.0, 4), 1.0, 4, 2, 1e-3, 1.0, 1.0,
                                   0.01),
                  std::domain_error);
}

TEST_CASE("per-sample gradients: oracle pins and emulated twin") {
  const ScalarFn sg = named_scalar("square_grad");
  Matrix X(2, 1), y(1, 1), w(2, 1);
  X << 1, 0;
  y << 1;
  w << 0, 0;
  const Matrix G = per_sample_gradients(X, y, w, sg);
  CHECK(G(0, 0) == -1.0);
  CHECK(G(1, 0) == 0.0);

  // at the least-squares solution of a consistent system all residuals vanish
  Matrix Xc(2, 2), yc(1, 2);
  Xc << 1, 0, 0, 1;
  yc << 2, 3;
  const Matrix ws = linear_regression(Xc, yc);
  CHECK(sup_norm(per_sample_gradients(Xc, yc, ws, sg)) <= 1e-12);

  Rng rng(52, "psg");
  Matrix Xr = random_matrix(rng, 3, 6), yr = random_matrix(rng, 1, 6),
         wr = random_matrix(rng, 3, 1);
  CHECK(sup_norm_diff(per_sample_gradients_emulated(Xr, yr, wr, sg, 0.02),
                      per_sample_gradients(Xr, yr, wr, sg)) <= 0.02);
}

TEST_CASE("per-sample gradient emulation across 200 random instances") {
  Rng rng(53, "psg-sweep");
  const ScalarFn sq = named_scalar("square_grad");
  const ScalarFn th = named_scalar("tanh");
  for (int t = 0; t < 200; ++t) {
    const int d = 1 + int(rng.below(4)), n = 2 + int(rng.below(6));
    Matrix X = random_matrix(rng, d, n), y = random_matrix(rng, 1, n),
           w = random_matrix(rng, d, 1);
    const ScalarFn& f = t % 2 == 0 ? sq : th;
    CHECK(sup_norm_diff(per_sample_gradients_emulated(X, y, w, f, 0.02),
                        per_sample_gradients(X, y, w, f)) <= 0.02);
  }
}

TEST_CASE("single GD step: analytic pins and emulated twin") {
  const ScalarFn sg = named_scalar("square_grad");
  Matrix X(2, 1), y(1, 1), w(2, 1);
  X << 1, 0;
  y << 1;
  w << 0, 0;
  const Matrix w1 = gd_step(X, y, w, 0.1, sg);
  CHECK(w1(0, 0) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(w1(1, 0) == 0.0);

  // stationary point: step is the identity
  Matrix Xc(2, 2), yc(1, 2);
  Xc << 1, 0, 0, 1;
  yc << 2, 3;
  const Matrix ws = linear_regression(Xc, yc);
  CHECK(sup_norm_diff(gd_step(Xc, yc, ws, 0.3, sg), ws) <= 1e-12);

  Rng rng(54, "gd-step");
  for (int t = 0; t < 100; ++t) {
    const int d = 1 + int(rng.below(3)), n = 2 + int(rng.below(6));
    Matrix Xr = random_matrix(rng, d, n), yr = random_matrix(rng, 1, n),
           wr = random_matrix(rng, d, 1);
    const double eta = rng.uniform(0.01, 0.5);
    CHECK(sup_norm_diff(gd_step_emulated(Xr, yr, wr, eta, sg, 0.02),
                        gd_step(Xr, yr, wr, eta, sg)) <= 0.02);
  }
}

TEST_CASE("multi-step GD: composition bound and certification") {
  Rng rng(55, "gd-multi");
  const ScalarFn sq = named_scalar("square_grad");
  const ScalarFn sl = named_scalar("square_loss");
  Matrix X = random_matrix(rng, 3, 10), y = random_matrix(rng, 1, 10),
         w0 = Matrix::Zero(3, 1);
  const double eta = 1.0 / smoothness_Lf(X);

  GDTrace zero_steps = gd_multi(X, y, w0, eta, sl, sq, 0);
  CHECK(zero_steps.iterates.size() == 1);
  CHECK(sup_norm_diff(zero_steps.iterates[0], w0) == 0.0);

  GDTrace one = gd_multi(X, y, w0, eta, sl, sq, 1);
  CHECK(sup_norm_diff(one.iterates[1], gd_step(X, y, w0, eta, sq)) == 0.0);
  CHECK(one.certified);
  CHECK_FALSE(gd_multi(X, y, w0, 10.0 / smoothness_Lf(X), sl, sq, 1).certified);

  // composition: per-step 2-norm deviations delta_t measured at the emulated
  // iterates; ||w_hat^l - w_GD^l||_inf <= l * max_t delta_t (eta <= 1/L_f
  // keeps the GD map non-expansive)
  const double eps_step = 0.01;
  GDTrace oracle = gd_multi(X, y, w0, eta, sl, sq, 10);
  GDTrace emu = gd_multi_emulated(X, y, w0, eta, sl, sq, 10, eps_step);
  double delta = 0.0;
  for (int l = 0; l < 10; ++l) {
    const Matrix exact_next = gd_step(X, y, emu.iterates[size_t(l)], eta, sq);
    delta = std::max(delta,
                     std::sqrt((emu.iterates[size_t(l) + 1] - exact_next).squaredNorm()));
  }
  CHECK(delta <= eps_step);
  for (int l = 1; l <= 10; ++l)
    CHECK(sup_norm_diff(emu.iterates[size_t(l)], oracle.iterates[size_t(l)]) <=
          double(l) * delta + 1e-15);
}

TEST_CASE("closed-form regression oracles") {
  Matrix X(2, 2), y(1, 2);
  X << 1, 0, 0, 1;
  y << 1, 1;
  const Matrix wr = ridge_regression(X, y, 1.0);
  CHECK(wr(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(wr(1, 0) == doctest::Approx(0.5).epsilon(1e-14));

  // consistent exactly-determined system: the interpolating solution
  Matrix Xe(2, 2), ye(1, 2);
  Xe << 2, 1, 0, 1;
  ye << 4, 3;
  const Matrix wl = linear_regression(Xe, ye);
  CHECK(sup_norm_diff(Matrix(Xe.transpose() * wl), Matrix(ye.transpose())) <= 1e-12);

  // first-order optimality at the returned points
  Rng rng(56, "reg");
  for (int t = 0; t < 20; ++t) {
    Matrix Xr = random_matrix(rng, 3, 12), yr = random_matrix(rng, 1, 12);
    const Matrix w1 = linear_regression(Xr, yr);
    Matrix g = Matrix::Zero(3, 1);
    for (int i = 0; i < 12; ++i) {
      double u = -yr(0, i);
      for (int r = 0; r < 3; ++r) u += w1(r, 0) * Xr(r, i);
      g += u * Xr.col(i);
    }
    CHECK(sup_norm(g) <= 1e-8);
    const double lam = rng.uniform(0.1, 2.0);
    const Matrix w2 = ridge_regression(Xr, yr, lam);
    Matrix g2 = lam * w2;
    for (int i = 0; i < 12; ++i) {
      double u = -yr(0, i);
      for (int r = 0; r < 3; ++r) u += w2(r, 0) * Xr(r, i);
      g2 += u * Xr.col(i);
    }
    CHECK(sup_norm(g2) <= 1e-8);
  }

  // rank-deficient Gram matrix is reported
  Matrix Xs(2, 3);
  Xs << 1, 2, 3, 1, 2, 3;
  Matrix ys(1, 3);
  ys << 1, 2, 3;
  CHECK_THROWS_AS(linear_regression(Xs, ys), std::runtime_error);
}

TEST_CASE("contraction rate of oracle GD on the ridge objective") {
  Rng rng(57, "contraction");
  for (int t = 0; t < 50; ++t) {
    const int d = 2 + int(rng.below(3)), n = 8 + int(rng.below(8));
    Matrix X = random_matrix(rng, d, n), y = random_matrix(rng, 1, n);
    const double lam = rng.uniform(0.2, 2.0);
    const ConvexConstants cc = ridge_constants(X, lam);
    const Matrix ws = ridge_regression(X, y, lam);
    GDTrace tr = ridge_gd(X, y, lam, Matrix::Zero(d, 1), 20);
    const double d0 = (tr.iterates[0] - ws).squaredNorm();
    for (int s = 1; s <= 20; ++s) {
      const double ds = (tr.iterates[size_t(s)] - ws).squaredNorm();
      CHECK(ds <= std::exp(-double(s) / cc.kappa) * d0 * (1.0 + 1e-9) + 1e-30);
    }
  }
}

TEST_CASE("emulated regression reaches the closed form") {
  Rng rng(58, "reg-emu");
  for (int t = 0; t < 5; ++t) {
    Matrix X = random_matrix(rng, 3, 20), y = random_matrix(rng, 1, 20);
    int L = 0;
    const Matrix w = regression_emulated(X, y, 0.0, 1e-3, &L);
    CHECK(L >= 1);
    CHECK(sup_norm_diff(w, linear_regression(X, y)) <= 1e-3);
  }
  Matrix X = random_matrix(rng, 3, 20), y = random_matrix(rng, 1, 20);
  CHECK(sup_norm_diff(regression_emulated(X, y, 0.7, 1e-3), ridge_regression(X, y, 0.7)) <=
        1e-3);
}

TEST_CASE("lasso oracle") {
  // scalar soft-threshold: x=1, y=1, lambda=0.5 -> w = 0.5
  Matrix X1(1, 1), y1(1, 1);
  X1 << 1;
  y1 << 1;
  CHECK(lasso_oracle(X1, y1, 0.5)(0, 0) == doctest::Approx(0.5).epsilon(1e-7));

  Rng rng(59, "lasso");
  Matrix X = random_matrix(rng, 3, 15), y = random_matrix(rng, 1, 15);
  // penalty off: matches least squares
  CHECK(sup_norm_diff(lasso_oracle(X, y, 0.0), linear_regression(X, y)) <= 1e-6);
  // huge penalty: full shrinkage
  CHECK(sup_norm(lasso_oracle(X, y, 1e6)) == 0.0);
  // subgradient stationarity at a moderate penalty
  const double lam = 0.8;
  const Matrix w = lasso_oracle(X, y, lam);
  Matrix g = Matrix::Zero(3, 1);
  for (int i = 0; i < 15; ++i) {
    double u = -y(0, i);
    for (int r = 0; r < 3; ++r) u += w(r, 0) * X(r, i);
    g += u * X.col(i);
  }
  for (int r = 0; r < 3; ++r) {
    if (w(r, 0) != 0.0)
      CHECK(std::abs(g(r, 0) + lam * (w(r, 0) > 0 ? 1.0 : -1.0)) <= 1e-6);
    else
      CHECK(std::abs(g(r, 0)) <= lam + 1e-6);
  }
}

TEST_CASE("power iteration eigenvalue estimates") {
  Matrix D = Matrix::Zero(3, 3);
  D(0, 0) = 5.0;
  D(1, 1) = 2.0;
  D(2, 2) = 0.5;
  CHECK(power_lambda_max(D) == doctest::Approx(5.0).epsilon(1e-9));
  CHECK(lambda_min_sym(D) == doctest::Approx(0.5).epsilon(1e-6));

  Rng rng(60, "power");
  Matrix M = random_matrix(rng, 4, 9);
  const Matrix A = matmul(M, M.transpose());
  const double lmax = power_lambda_max(A);
  // Rayleigh quotient of any vector is below the estimate
  for (int t = 0; t < 20; ++t) {
    Matrix v = random_matrix(rng, 4, 1);
    const double q = matmul(v.transpose(), matmul(A, v))(0, 0) / v.squaredNorm();
    CHECK(q <= lmax * (1.0 + 1e-9));
  }
}

TEST_CASE("algorithm spec json round trip") {
  AlgorithmSpec s;
  s.name = "ridge-demo";
  s.kind = "ridge_reg";
  s.lambda = 0.7;
  s.eta = 0.1;
  s.steps = 12;
  s.f = "square_grad";
  s.W_K = Matrix::Identity(2, 2);
  s.W_Q = 2.0 * Matrix::Identity(2, 2);
  s.W_V = Matrix::Zero(2, 2);
  AlgorithmSpec r = algorithm_spec_from_json(algorithm_spec_to_json(s));
  CHECK(r.name == s.name);
  CHECK(r.kind == s.kind);
  CHECK(r.lambda == s.lambda);
  CHECK(r.eta == s.eta);
  CHECK(r.steps == s.steps);
  CHECK(r.f == s.f);
  CHECK(sup_norm_diff(r.W_K, s.W_K) == 0.0);
  CHECK(sup_norm_diff(r.W_Q, s.W_Q) == 0.0);
  CHECK_THROWS_AS(named_scalar("nope"), std::invalid_argument);
}
