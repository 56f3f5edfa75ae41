#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fwa/trainer.hpp"

using namespace fwa;

namespace {

Matrix random_matrix(Rng& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
  Matrix A(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) A(i, j) = rng.uniform(lo, hi);
  return A;
}

// from-scratch recomputation of the model loss with plain loops
double loss_oracle(const TrainableModel& m, const Matrix& X, const Matrix& Y) {
  const Matrix P = m.input_linear * X;
  Matrix A = Matrix::Zero(m.attention.heads[0].W_V.rows(), P.cols());
  for (const AttentionHead& h : m.attention.heads) {
    const Matrix S = (h.W_K * P).transpose() * (h.W_Q * P);
    Matrix Sm(S.rows(), S.cols());
    for (Eigen::Index c = 0; c < S.cols(); ++c) {
      const double mx = S.col(c).maxCoeff();
      double z = 0.0;
      for (Eigen::Index r = 0; r < S.rows(); ++r) z += std::exp(h.beta * (S(r, c) - mx));
      for (Eigen::Index r = 0; r < S.rows(); ++r)
        Sm(r, c) = std::exp(h.beta * (S(r, c) - mx)) / z;
    }
    A += (h.W_V * P) * Sm;
  }
  const Matrix pred = m.output_linear * A;
  return (pred - Y).squaredNorm() / double(pred.size());
}

Dataset linear_dataset(Rng& rng, int count, int d_in, int d_out, int n, const Matrix& C) {
  Dataset ds;
  for (int i = 0; i < count; ++i) {
    ds.X.push_back(random_matrix(rng, d_in, n));
    ds.Y.push_back(C * ds.X.back());
  }
  return ds;
}

}  // namespace

TEST_CASE("forward_loss: zero at target, unit offset, oracle match") {
  Rng rng(80, "fl");
  TrainableModel m = make_trainable(3, 4, 3, 2, 2, rng, 0.3);
  const Matrix X = random_matrix(rng, 3, 5);
  const Matrix pred = m.forward(X);

  CHECK(forward_loss(m, X, pred).first == 0.0);
  CHECK(forward_loss(m, X, Matrix(pred.array() + 1.0)).first == doctest::Approx(1.0).epsilon(1e-12));

  for (int t = 0; t < 10; ++t) {
    TrainableModel r = make_trainable(2, 3, 4, 3, 1 + int(rng.below(3)), rng, 0.5);
    const Matrix Xr = random_matrix(rng, 2, 4), Yr = random_matrix(rng, 3, 4);
    CHECK(forward_loss(r, Xr, Yr).first == doctest::Approx(loss_oracle(r, Xr, Yr)).epsilon(1e-12));
  }

  CHECK_THROWS_AS(forward_loss(m, X, random_matrix(rng, 2, 4)), std::invalid_argument);
}

TEST_CASE("backward: stationary point, residual linearity, stale cache") {
  Rng rng(81, "bw");
  TrainableModel m = make_trainable(3, 4, 3, 2, 2, rng, 0.3);
  const Matrix X = random_matrix(rng, 3, 5);
  const Matrix pred = m.forward(X);

  // prediction == target: every gradient vanishes
  auto [l0, c0] = forward_loss(m, X, pred);
  CHECK(l0 == 0.0);
  for (const Matrix& g : backward(m, c0)) CHECK(sup_norm(g) == 0.0);

  // doubling the residual doubles all gradients
  const Matrix Y = random_matrix(rng, 2, 5);
  const Matrix Y2 = pred - 2.0 * (pred - Y);
  auto [l1, c1] = forward_loss(m, X, Y);
  auto [l2, c2] = forward_loss(m, X, Y2);
  (void)l1;
  (void)l2;
  const auto g1 = backward(m, c1), g2 = backward(m, c2);
  for (std::size_t i = 0; i < g1.size(); ++i)
    CHECK(sup_norm_diff(Matrix(2.0 * g1[i]), g2[i]) <= 1e-12 * std::max(1.0, sup_norm(g2[i])));

  // mutating a parameter invalidates the cache
  auto [l3, c3] = forward_loss(m, X, Y);
  (void)l3;
  m.input_linear(0, 0) += 1.0;
  CHECK_THROWS_AS(backward(m, c3), std::logic_error);
}

TEST_CASE("gradient check on 20 random models") {
  Rng rng(82, "gc");
  double worst = 0.0;
  for (int t = 0; t < 14; ++t) {
    const int heads = 1 + int(rng.below(3));
    TrainableModel m = make_trainable(2 + int(rng.below(2)), 3, 2 + int(rng.below(2)),
                                      2, heads, rng, 0.6);
    const Matrix X = random_matrix(rng, int(m.input_linear.cols()), 3 + int(rng.below(3)));
    const Matrix Y = random_matrix(rng, 2, int(X.cols()));
    worst = std::max(worst, max_gradcheck_rel_error(m, X, Y));
  }
  for (int t = 0; t < 6; ++t) {
    const int d = 1 + int(rng.below(2));
    SimFModel m = make_sim_f(d, 4 + int(rng.below(4)), 1.5, 0.8, rng, 0.2);
    const Matrix X = random_matrix(rng, 2 * d + 1, 4);
    const Matrix Y = random_matrix(rng, d, 4);
    worst = std::max(worst, max_gradcheck_rel_error(m, X, Y));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("sim-f forward matches an explicit loop oracle") {
  Rng rng(83, "simf");
  const int d = 2, P = 5, n = 4;
  SimFModel m = make_sim_f(d, P, 1.5, 0.7, rng, 0.3);
  const Matrix X = random_matrix(rng, 2 * d + 1, n);
  const Matrix out = m.forward(X);
  CHECK(out.rows() == d);
  CHECK(out.cols() == n);
  for (int c = 0; c < n; ++c) {
    Matrix t(d + 1, 1), s(d + 1, 1);
    for (int r = 0; r < d; ++r) {
      t(r, 0) = X(r, c);
      s(r, 0) = X(d + r, c);
    }
    t(d, 0) = X(2 * d, c);
    s(d, 0) = 1.0;
    const Matrix q = m.Q * s;
    const double A = ((m.K1 * t).transpose() * q)(0, 0);
    const double B = (m.k2.transpose() * q)(0, 0);
    double z = 0.0, hv = 0.0, mx = -1e300;
    for (int j = 0; j < P; ++j) mx = std::max(mx, m.g(j, 0) * A + m.g(j, 0) * m.g(j, 0) * B);
    for (int j = 0; j < P; ++j) z += std::exp(m.g(j, 0) * A + m.g(j, 0) * m.g(j, 0) * B - mx);
    for (int j = 0; j < P; ++j)
      hv += m.a(j, 0) * std::exp(m.g(j, 0) * A + m.g(j, 0) * m.g(j, 0) * B - mx) / z;
    for (int r = 0; r < d; ++r) CHECK(out(r, c) == doctest::Approx(hv * X(r, c)).epsilon(1e-12));
  }
}

TEST_CASE("adam matches a hand-traced two-parameter run") {
  Matrix p1(1, 1), p2(1, 1);
  p1 << 1.0;
  p2 << -2.0;
  std::vector<ParamRef> ps = {{"p1", &p1}, {"p2", &p2}};
  AdamState st;
  st.m = {Matrix::Zero(1, 1), Matrix::Zero(1, 1)};
  st.v = {Matrix::Zero(1, 1), Matrix::Zero(1, 1)};
  TrainConfig cfg;
  const std::vector<char> mask = {1, 1};
  const double steps[2][2] = {{0.5, -1.0}, {0.1, 0.2}};

  // scalar reference trace of the bias-corrected update
  double rm1 = 0, rv1 = 0, rm2 = 0, rv2 = 0, rp1 = 1.0, rp2 = -2.0;
  for (int t = 1; t <= 2; ++t) {
    Matrix g1(1, 1), g2(1, 1);
    g1 << steps[t - 1][0];
    g2 << steps[t - 1][1];
    adam_step(ps, {g1, g2}, st, cfg, mask);

    rm1 = 0.9 * rm1 + 0.1 * steps[t - 1][0];
    rv1 = 0.999 * rv1 + 0.001 * steps[t - 1][0] * steps[t - 1][0];
    rm2 = 0.9 * rm2 + 0.1 * steps[t - 1][1];
    rv2 = 0.999 * rv2 + 0.001 * steps[t - 1][1] * steps[t - 1][1];
    const double c1 = 1.0 - std::pow(0.9, t), c2 = 1.0 - std::pow(0.999, t);
    rp1 -= 0.001 * (rm1 / c1) / (std::sqrt(rv1 / c2) + 1e-8);
    rp2 -= 0.001 * (rm2 / c1) / (std::sqrt(rv2 / c2) + 1e-8);
    CHECK(p1(0, 0) == doctest::Approx(rp1).epsilon(1e-15));
    CHECK(p2(0, 0) == doctest::Approx(rp2).epsilon(1e-15));
  }
  CHECK(st.t == 2);
}

TEST_CASE("train: lr=0 no-op, determinism, frozen prefixes, divergence") {
  Rng rng(84, "train");
  const Matrix C = random_matrix(rng, 2, 3, -0.3, 0.3);
  Dataset ds = linear_dataset(rng, 24, 3, 2, 3, C);

  Rng init(85, "init");
  TrainableModel m = make_trainable(3, 4, 3, 2, 1, init, 0.3);
  const std::uint64_t before = model_checksum(m);

  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.epochs = 3;
  cfg.seed = 7;
  TrainResult r0 = train(m, ds, Dataset{}, cfg);
  CHECK(model_checksum(m) == before);
  CHECK(r0.train_mse[0] == r0.train_mse[1]);
  CHECK(r0.train_mse[1] == r0.train_mse[2]);

  // same seed twice: bit-identical histories and parameters
  Rng i2(85, "init");
  TrainableModel a = make_trainable(3, 4, 3, 2, 1, i2, 0.3);
  Rng i3(85, "init");
  TrainableModel b = make_trainable(3, 4, 3, 2, 1, i3, 0.3);
  cfg.lr = 0.001;
  cfg.epochs = 5;
  TrainResult ra = train(a, ds, ds, cfg);
  TrainResult rb = train(b, ds, ds, cfg);
  CHECK(model_checksum(a) == model_checksum(b));
  for (int e = 0; e < 5; ++e) {
    CHECK(ra.train_mse[std::size_t(e)] == rb.train_mse[std::size_t(e)]);
    CHECK(ra.test_mse[std::size_t(e)] == rb.test_mse[std::size_t(e)]);
  }

  // freezing the attention prefix leaves head weights untouched
  Rng i4(85, "init");
  TrainableModel f = make_trainable(3, 4, 3, 2, 1, i4, 0.3);
  const Matrix wk = f.attention.heads[0].W_K, in = f.input_linear;
  cfg.freeze = {"head"};
  train(f, ds, Dataset{}, cfg);
  CHECK(sup_norm_diff(f.attention.heads[0].W_K, wk) == 0.0);
  CHECK(sup_norm_diff(f.input_linear, in) > 0.0);

  CHECK_THROWS_AS(train(f, Dataset{}, Dataset{}, cfg), std::invalid_argument);
}

TEST_CASE("train fits a tiny linear-target task") {
  Rng rng(86, "fit");
  const Matrix C = random_matrix(rng, 2, 2, -0.3, 0.3);
  Dataset tr = linear_dataset(rng, 64, 2, 2, 3, C);
  Dataset te = linear_dataset(rng, 16, 2, 2, 3, C);

  TrainableModel m = make_trainable(2, 4, 3, 2, 2, rng, 0.3);
  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.batch = 16;
  cfg.epochs = 200;
  cfg.seed = 11;
  TrainResult r = train(m, tr, te, cfg);
  CHECK(r.train_mse.back() <= 1e-3);
  CHECK(r.train_mse.back() < r.train_mse.front());

  const std::string csv = loss_history_csv(r);
  CHECK(csv.rfind("epoch,train_mse,test_mse\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 201);
}

TEST_CASE("freeze: stable evaluation handle") {
  Rng rng(87, "frz");
  TrainableModel m = make_trainable(3, 4, 3, 2, 2, rng, 0.3);
  const Matrix X = random_matrix(rng, 3, 4);
  FrozenModel f = freeze(m);
  CHECK(f.checksum == model_checksum(m));
  const Matrix first = f.forward(X);
  for (int t = 0; t < 100; ++t) {
    CHECK(sup_norm_diff(f.forward(X), first) == 0.0);
    CHECK(model_checksum(*f.model) == f.checksum);
  }
}

TEST_CASE("checkpoint json round trips") {
  Rng rng(88, "ckpt");
  TrainableModel m = make_trainable(3, 4, 3, 2, 2, rng, 0.3);
  AdamState st;
  for (const ParamRef& p : parameters(m)) {
    st.m.push_back(random_matrix(rng, int(p.value->rows()), int(p.value->cols())));
    st.v.push_back(random_matrix(rng, int(p.value->rows()), int(p.value->cols()), 0.0, 1.0));
  }
  st.t = 17;

  AdamState back;
  TrainableModel r = model_from_json(model_to_json(m, &st), &back);
  CHECK(model_checksum(r) == model_checksum(m));
  CHECK(back.t == 17);
  for (std::size_t i = 0; i < st.m.size(); ++i) {
    CHECK(sup_norm_diff(back.m[i], st.m[i]) == 0.0);
    CHECK(sup_norm_diff(back.v[i], st.v[i]) == 0.0);
  }

  SimFModel s = make_sim_f(2, 5, 1.5, 0.7, rng, 0.3);
  SimFModel s2 = sim_f_from_json(sim_f_to_json(s));
  CHECK(model_checksum(s2) == model_checksum(s));

  CHECK_THROWS_AS(model_from_json("{\"kind\":\"sim_f\"}", nullptr), std::invalid_argument);
  CHECK_THROWS_AS(sim_f_from_json("{\"kind\":\"trainable\"}"), std::invalid_argument);
}
