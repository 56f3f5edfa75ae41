#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fwa/hopfield.hpp"
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

TEST_CASE("hopfield forward: formula, single pattern, softmax columns") {
  Rng rng(70, "hopfield");
  for (int t = 0; t < 20; ++t) {
    const int dy = 2 + int(rng.below(3)), N = 1 + int(rng.below(6));
    const int dr = 2 + int(rng.below(3)), S = 1 + int(rng.below(4));
    const int d = 2 + int(rng.below(3)), dv = 1 + int(rng.below(3));
    Matrix Y = random_matrix(rng, dy, N), R = random_matrix(rng, dr, S);
    Matrix WK = random_matrix(rng, d, dy), WQ = random_matrix(rng, d, dr),
           WV = random_matrix(rng, dv, d);
    const double beta = rng.uniform(0.5, 3.0);

    // step-by-step composition oracle
    const Matrix K = matmul(WK, Y);
    const Matrix S_mat = softmax_cols(matmul(K.transpose(), matmul(WQ, R)), beta);
    const Matrix oracle = matmul(matmul(WV, K), S_mat);
    CHECK(sup_norm_diff(hopfield_forward(Y, WK, WQ, WV, beta, R), oracle) <= 1e-14);

    // softmax columns sum to one
    for (int c = 0; c < S; ++c) {
      double s = 0.0;
      for (int r = 0; r < S_mat.rows(); ++r) s += S_mat(r, c);
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }

  // single stored pattern: softmax of one score is 1
  Matrix Y1 = random_matrix(rng, 3, 1), R1 = random_matrix(rng, 3, 4);
  Matrix I3 = Matrix::Identity(3, 3);
  const Matrix out1 = hopfield_forward(Y1, I3, I3, I3, 2.0, R1);
  for (int c = 0; c < 4; ++c) CHECK(sup_norm_diff(Matrix(out1.col(c)), Y1) <= 1e-14);
}

TEST_CASE("retrieval sharpens as beta grows") {
  Rng rng(71, "retrieval");
  Matrix I3 = Matrix::Identity(3, 3);
  for (int t = 0; t < 20; ++t) {
    Matrix Y = random_matrix(rng, 3, 6);
    Matrix R = random_matrix(rng, 3, 1);
    double prev = -1.0;
    for (double beta : {10.0, 100.0, 1000.0}) {
      const Matrix out = hopfield_forward(Y, I3, I3, I3, beta, R);
      // distance to the nearest stored value
      double best = 1e300;
      for (int i = 0; i < 6; ++i)
        best = std::min(best, sup_norm_diff(Matrix(out.col(0)), Matrix(Y.col(i))));
      if (prev >= 0.0) CHECK(best <= prev + 1e-12);
      prev = best;
    }
    // argmax retrieval oracle at the largest beta
    const Matrix K = Y;
    int arg = 0;
    double sbest = -1e300;
    for (int i = 0; i < 6; ++i) {
      const double s = (K.col(i).transpose() * R.col(0))(0, 0);
      if (s > sbest) {
        sbest = s;
        arg = i;
      }
    }
    const Matrix sharp = hopfield_forward(Y, I3, I3, I3, 5000.0, R);
    CHECK(sup_norm_diff(Matrix(sharp.col(0)), Matrix(Y.col(arg))) <= 0.05);
  }
}

TEST_CASE("function approximation over the slot grid") {
  // f constant
  const auto fc = [](double) { return Matrix::Constant(2, 1, 0.7); };
  InterpolationGrid g = make_grid(-2.0, 2.0, 400);
  HopfieldLayer hc = build_hopfield_function_approx(fc, Matrix::Ones(1, 1), 0.0, g, -1.0, 1e-4);
  Matrix Z(1, 3);
  Z << -1.0, 0.0, 1.3;
  const Matrix outc = hc.forward(Z);
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 2; ++r) CHECK(outc(r, c) == doctest::Approx(0.7).epsilon(1e-9));

  // f identity, l identity: value 0.3 at z = 0.3
  const auto fi = [](double v) { return Matrix::Constant(1, 1, v); };
  HopfieldLayer hi = build_hopfield_function_approx(fi, Matrix::Ones(1, 1), 0.0, g, -1.0, 1e-4);
  Matrix z03(1, 1);
  z03 << 0.3;
  CHECK(hi.forward(z03)(0, 0) == doctest::Approx(0.3).epsilon(1e-2));

  // affine lift: f(a^T z + b)
  Rng rng(72, "hop-approx");
  Matrix a(2, 1);
  a << 0.5, -0.25;
  const auto ft = [](double v) { return Matrix::Constant(1, 1, std::tanh(v)); };
  HopfieldLayer ht = build_hopfield_function_approx(ft, a, 0.1, g, -1.0, 1e-4);
  for (int t = 0; t < 50; ++t) {
    Matrix z = random_matrix(rng, 2, 1);
    const double l = 0.5 * z(0, 0) - 0.25 * z(1, 0) + 0.1;
    CHECK(ht.forward(z)(0, 0) == doctest::Approx(std::tanh(l)).epsilon(0.02));
  }
}

TEST_CASE("function-approximation budget holds on 200 random tanh instances") {
  Rng rng(73, "hop-budget");
  const auto ft = [](double v) { return Matrix::Constant(1, 1, std::tanh(v)); };
  InterpolationGrid g = make_grid(-3.0, 3.0, 600);
  HopfieldLayer h = build_hopfield_function_approx(ft, Matrix::Ones(1, 1), 0.0, g, -1.0, 1e-5);
  const double eps1 = hopfield_tail_fraction(g, h.beta);
  double eps2 = 0.0;  // modulus at scale delta over two panels
  for (int i = 0; i + 1 <= g.p; ++i)
    eps2 = std::max(eps2, std::abs(std::tanh(g.points[size_t(i + 1)]) -
                                   std::tanh(g.points[size_t(i)])));
  const double budget = eps1 * 2.0 * 1.0 + 2.0 * eps2;
  for (int t = 0; t < 200; ++t) {
    Matrix z(1, 1);
    z << rng.uniform(-2.5, 2.5);
    CHECK(std::abs(h.forward(z)(0, 0) - std::tanh(z(0, 0))) <= budget);
  }
}

TEST_CASE("hopfield gradient map agrees with the oracle and the attention path") {
  Rng rng(74, "hop-gd");
  const ScalarFn sq = named_scalar("square_grad");

  // zero residuals: output vanishes
  Matrix Xc(2, 2), yc(1, 2);
  Xc << 1, 0, 0, 1;
  yc << 0.3, -0.2;
  Matrix wz(2, 1);
  wz << 0.3, -0.2;
  HopfieldGD hz = build_hopfield_gd(Xc, yc, sq, 0.02);
  CHECK(sup_norm(hz.forward(wz)) <= 0.02);

  for (int t = 0; t < 10; ++t) {
    const int d = 2, n = 5;
    Matrix X = random_matrix(rng, d, n), y = random_matrix(rng, 1, n),
           w = random_matrix(rng, d, 1);
    HopfieldGD hg = build_hopfield_gd(X, y, sq, 0.02);
    const Matrix out = hg.forward(w);
    CHECK(sup_norm_diff(out, per_sample_gradients(X, y, w, sq)) <= 0.02);
    // both constructions against the shared oracle: agreement within 2 eps
    const Matrix attn = per_sample_gradients_emulated(X, y, w, sq, 0.02);
    CHECK(sup_norm_diff(out, attn) <= 0.04);
  }
}

TEST_CASE("hopfield json round trip") {
  Rng rng(75, "hop-json");
  Matrix Y = random_matrix(rng, 3, 4);
  Matrix I3 = Matrix::Identity(3, 3);
  HopfieldLayer h = make_hopfield(Y, I3, 2.0 * I3, I3, 1.7);
  h.lift_query = false;
  HopfieldLayer r = hopfield_from_json(hopfield_to_json(h));
  CHECK(r.beta == h.beta);
  CHECK(sup_norm_diff(r.K, h.K) == 0.0);
  CHECK(sup_norm_diff(r.V, h.V) == 0.0);
  CHECK(sup_norm_diff(r.W_Q, h.W_Q) == 0.0);
  Matrix R = random_matrix(rng, 3, 2);
  CHECK(sup_norm_diff(r.forward(R), h.forward(R)) == 0.0);
  CHECK_THROWS_AS(hopfield_from_json("{\"kind\":\"attention\"}"), std::invalid_argument);
}
