#include "fwa/hopfield.hpp"

#include <cmath>
#include <stdexcept>

#include "fwa/serialize.hpp"

namespace fwa {

Matrix HopfieldLayer::forward(const Matrix& R) const {
  Matrix Q = R;
  if (lift_query) {
    Matrix lifted(R.rows() + 1, R.cols());
    lifted.topRows(R.rows()) = R;
    lifted.row(R.rows()).setOnes();
    Q = std::move(lifted);
  }
  if (W_Q.size()) {
    if (W_Q.cols() != Q.rows())
      throw std::invalid_argument("HopfieldLayer::forward: query projection shape mismatch");
    Q = matmul(W_Q, Q);
  }
  if (K.rows() != Q.rows())
    throw std::invalid_argument("HopfieldLayer::forward: key/query dim mismatch");
  return matmul(V, softmax_cols(matmul(K.transpose(), Q), beta));
}

HopfieldLayer make_hopfield(const Matrix& Y, const Matrix& W_K, const Matrix& W_Q,
                            const Matrix& W_V, double beta) {
  if (W_K.cols() != Y.rows())
    throw std::invalid_argument("make_hopfield: W_K does not project the stored patterns");
  HopfieldLayer h;
  h.K = matmul(W_K, Y);
  if (W_V.cols() != h.K.rows())
    throw std::invalid_argument("make_hopfield: W_V does not project the stored keys");
  h.V = matmul(W_V, h.K);
  h.W_Q = W_Q;
  h.beta = beta;
  return h;
}

Matrix hopfield_forward(const Matrix& Y, const Matrix& W_K, const Matrix& W_Q,
                        const Matrix& W_V, double beta, const Matrix& R) {
  return make_hopfield(Y, W_K, W_Q, W_V, beta).forward(R);
}

double hopfield_tail_fraction(const InterpolationGrid& grid, double beta) {
  return double(grid.p) * std::exp(-0.75 * beta * grid.delta * grid.delta);
}

HopfieldLayer build_hopfield_function_approx(const std::function<Matrix(double)>& f,
                                             const Matrix& a, double b,
                                             const InterpolationGrid& grid, double beta,
                                             double eps1) {
  if (a.cols() != 1) throw std::invalid_argument("build_hopfield_function_approx: a must be m x 1");
  const Matrix f0 = f(grid.points[0]);
  if (f0.cols() != 1)
    throw std::invalid_argument("build_hopfield_function_approx: f must return o x 1");
  const Eigen::Index m = a.rows(), o = f0.rows();
  const long P = grid.p;
  HopfieldLayer h;
  h.lift_query = true;
  if (beta > 0.0) {
    h.beta = beta;
  } else {
    if (!(eps1 > 0.0))
      throw std::invalid_argument("build_hopfield_function_approx: eps1 must be positive");
    h.beta = 4.0 / (3.0 * grid.delta * grid.delta) *
             std::log(std::max(double(P) / eps1, std::exp(1.0)));
  }
  h.K = Matrix::Zero(m + 1, P + 1);
  h.V = Matrix::Zero(o, P + 1);
  for (long i = 0; i <= P; ++i) {
    const double L = grid.point(i);
    h.K.block(0, i, m, 1) = 2.0 * L * a;
    h.K(m, i) = 2.0 * L * b - L * L;
    h.V.col(i) = f(L);
  }
  return h;
}

HopfieldGD build_hopfield_gd(const Matrix& X, const Matrix& y, const ScalarFn& grad,
                             double eps) {
  const double B = std::max({sup_norm(X), sup_norm(y), 1.0});
  const double U = double(X.rows()) * B * B + B;
  HopfieldGD hg;
  hg.plan = plan_f_map(grad, B, U, int(X.cols()), X.rows(), eps);
  // stored patterns: the f-map token columns for (X, y); w enters via queries
  const Matrix Z = hg.plan.tokens(X, y, Matrix::Zero(X.rows(), 1));
  const long stored = long(hg.plan.n) * (hg.plan.grid.P + 1);
  hg.layer.K = Z.leftCols(stored);
  hg.layer.V = Z.block(hg.plan.d + 1, 0, hg.plan.d, stored);
  hg.layer.beta = hg.plan.beta;
  return hg;
}

Matrix HopfieldGD::forward(const Matrix& w) const {
  if (w.rows() != plan.d || w.cols() != 1)
    throw std::invalid_argument("HopfieldGD::forward: w must be d x 1");
  const Eigen::Index D = 2 * plan.d + 2 + plan.n;
  Matrix R = Matrix::Zero(D, plan.n);
  for (int c = 0; c < plan.n; ++c) {
    for (Eigen::Index r = 0; r < plan.d; ++r) R(r, c) = w(r, 0);
    R(plan.d, c) = -1.0;
    R(2 * plan.d + 1, c) = -1.0;
    R(2 * plan.d + 2 + c, c) = 1.0;
  }
  return layer.forward(R);
}

std::string hopfield_to_json(const HopfieldLayer& h) {
  Json j;
  j["kind"] = "hopfield";
  j["beta"] = h.beta;
  j["lift_query"] = h.lift_query;
  j["K"] = matrix_to_json(h.K);
  j["V"] = matrix_to_json(h.V);
  if (h.W_Q.size()) j["W_Q"] = matrix_to_json(h.W_Q);
  return j.dump(2);
}

HopfieldLayer hopfield_from_json(const std::string& text) {
  const Json j = Json::parse(text);
  if (j.value("kind", "") != "hopfield")
    throw std::invalid_argument("hopfield_from_json: kind must be hopfield");
  HopfieldLayer h;
  h.beta = j.at("beta").get<double>();
  h.lift_query = j.value("lift_query", false);
  h.K = json_to_matrix(j.at("K"));
  h.V = json_to_matrix(j.at("V"));
  if (j.contains("W_Q")) h.W_Q = json_to_matrix(j["W_Q"]);
  return h;
}

}  // namespace fwa
