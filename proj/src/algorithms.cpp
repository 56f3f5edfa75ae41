#include "fwa/algorithms.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "fwa/serialize.hpp"

namespace fwa {

namespace {

constexpr long kMaxSlots = 200000000;
constexpr int kSampleCap = 4096;

double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

// Max |f| and max adjacent-slot difference over (a sample of) the grid.
void sample_f(const ScalarFn& f, const GridGeometry& g, double& B_f, double& mod) {
  const long step = std::max(1l, g.P / kSampleCap);
  B_f = 0.0;
  mod = 0.0;
  double prev = f(g.point(0));
  B_f = std::abs(prev);
  for (long j = step; j <= g.P; j += step) {
    const double cur = f(g.point(j));
    B_f = std::max(B_f, std::abs(cur));
    // sample the panel right before j for the modulus
    const double left = f(g.point(j - 1));
    B_f = std::max(B_f, std::abs(left));
    mod = std::max(mod, std::abs(cur - left));
    prev = cur;
  }
}

Matrix residuals(const Matrix& X, const Matrix& y, const Matrix& w) {
  const Eigen::Index n = X.cols();
  Matrix u(1, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double v = -y(0, i);
    for (Eigen::Index r = 0; r < X.rows(); ++r) v += w(r, 0) * X(r, i);
    u(0, i) = v;
  }
  return u;
}

void check_xyw(const Matrix& X, const Matrix& y, const Matrix& w) {
  if (y.rows() != 1 || y.cols() != X.cols())
    throw std::invalid_argument("labels must be 1 x n");
  if (w.rows() != X.rows() || w.cols() != 1)
    throw std::invalid_argument("weights must be d x 1");
}

}  // namespace

GridGeometry make_geometry(double a, double b, long P) {
  if (!(a < b)) throw std::invalid_argument("make_geometry: need a < b");
  if (P < 1) throw std::invalid_argument("make_geometry: need P >= 1");
  GridGeometry g;
  g.a = a;
  g.b = b;
  g.P = P;
  g.delta = (b - a) / double(P);
  return g;
}

FMapPlan build_f_emulator(const ScalarFn& f, const GridGeometry& grid, double B, int n,
                          Eigen::Index d, double eps0, double B_f, double lip,
                          double eps_check) {
  if (!(eps0 > 0.0)) throw std::invalid_argument("build_f_emulator: eps0 must be positive");
  if (n < 1 || d < 1) throw std::invalid_argument("build_f_emulator: need n, d >= 1");
  if (!(B > 0.0)) throw std::invalid_argument("build_f_emulator: need B > 0");
  double Bf_s = 0.0, mod_s = 0.0;
  sample_f(f, grid, Bf_s, mod_s);
  FMapPlan p;
  p.grid = grid;
  p.d = d;
  p.n = n;
  p.B = B;
  p.B_f = B_f > 0.0 ? std::max(B_f, Bf_s) : Bf_s;
  p.eps0 = eps0;
  p.f = f;
  const double mod = lip > 0.0 ? lip * grid.delta : 2.0 * mod_s;
  if (eps_check > 0.0 && mod * std::max(B, 1.0) > eps_check / 2.0) {
    std::ostringstream os;
    os << "build_f_emulator: grid too coarse for eps " << eps_check << " (modulus " << mod
       << "); replan with more slots";
    throw std::domain_error(os.str());
  }
  const double dL = grid.delta;
  const double U = std::max(std::abs(grid.a), std::abs(grid.b));
  const double scale = std::max(p.B_f * B, 1.0);
  p.beta = 4.0 / (3.0 * dL * dL) *
           std::log(std::max(8.0 * double(grid.P + 1) * scale / eps0, std::exp(1.0)));
  const double count = double(n) * double(grid.P + 1) + double(n);
  p.C = std::max(U * U, double(d) * B * B + 3.0) + dL * dL / 4.0 +
        (std::log(count) + std::log(1.0 / eps0)) / p.beta;
  // score rounding (long double evaluation) must stay well below one slot of
  // exponent decay
  if ((p.C + U * U + double(d) * B * B + 3.0) * 1e-18 > dL * dL / 2.0)
    throw std::domain_error("build_f_emulator: slot width below score resolution");
  return p;
}

FMapPlan plan_f_map(const ScalarFn& f, double B, double U, int n, Eigen::Index d, double eps,
                    double lip) {
  if (!(eps > 0.0)) throw std::invalid_argument("plan_f_map: eps must be positive");
  B = std::max(B, 1e-9);
  const double Uw = 1.05 * std::max(U, 1e-9);
  // preliminary sampling for the bound / modulus when not supplied
  GridGeometry probe = make_geometry(-Uw, Uw, kSampleCap);
  double Bf_s = 0.0, mod_s = 0.0;
  sample_f(f, probe, Bf_s, mod_s);
  const double lip_use =
      lip > 0.0 ? lip : std::max(2.0 * mod_s / probe.delta, 1e-9);
  const double dL_target = eps / (2.0 * lip_use * std::max(B, 1.0));
  const long P = std::max(2l, long(std::ceil(2.0 * Uw / dL_target)));
  if (P > kMaxSlots) {
    std::ostringstream os;
    os << "plan_f_map: eps " << eps << " needs " << P << " slots; smallest supported eps ~ "
       << eps * double(P) / double(kMaxSlots);
    throw std::domain_error(os.str());
  }
  const double eps0 = eps / (4.0 * std::max(Bf_s * B, 1.0));
  return build_f_emulator(f, make_geometry(-Uw, Uw, P), B, n, d, eps0, Bf_s, lip_use, 0.0);
}

Matrix FMapPlan::forward(const Matrix& X, const Matrix& y, const Matrix& w) const {
  check_xyw(X, y, w);
  if (X.rows() != d || X.cols() != n)
    throw std::invalid_argument("FMapPlan::forward: shape differs from the plan");
  // Scores are evaluated in extended precision: at fine slot widths the
  // double rounding of 2 L u - L^2 + C would exceed one slot of exponent
  // decay (the algebra is identical to the explicit head's).
  const long double dL = grid.delta;
  const long reach = long(std::sqrt(800.0 / beta) / grid.delta) + 3;
  std::vector<long double> u(static_cast<size_t>(n), 0.0L);
  for (int i = 0; i < n; ++i) {
    long double v = -(long double)y(0, i);
    for (Eigen::Index r = 0; r < d; ++r) v += (long double)w(r, 0) * (long double)X(r, i);
    u[size_t(i)] = v;
  }
  long double ww = 0.0;
  for (Eigen::Index r = 0; r < d; ++r) ww += (long double)w(r, 0) * (long double)w(r, 0);
  Matrix out = Matrix::Zero(d, n);
  std::vector<long double> sc;
  std::vector<double> fv;
  std::vector<int> tok;
  for (int c = 0; c < n; ++c) {
    sc.clear();
    fv.clear();
    tok.clear();
    for (int i = 0; i < n; ++i) {
      const long double base = i == c ? (long double)C : 0.0L;
      const long kstar = long(std::floor((double(u[size_t(i)]) - grid.a) / grid.delta));
      const long lo = std::max(0l, kstar - reach), hi = std::min(grid.P, kstar + reach);
      for (long j = lo; j <= hi; ++j) {
        const long double L = (long double)grid.a + (long double)j * dL;
        sc.push_back(base + 2.0L * L * u[size_t(i)] - L * L);
        fv.push_back(f(double(L)));
        tok.push_back(i);
      }
    }
    // query columns also act as keys; their value rows are zero
    const long double sw_other = ww + 2.0L, sw_self = ww + 3.0L;
    long double smax = std::max(sw_other, sw_self);
    for (long double s : sc) smax = std::max(smax, s);
    const long double lbeta = beta;
    long double z = (long double)(n - 1) * expl(lbeta * (sw_other - smax)) +
                    expl(lbeta * (sw_self - smax));
    for (size_t t = 0; t < sc.size(); ++t) {
      const long double wgt = expl(lbeta * (sc[t] - smax));
      z += wgt;
      out.col(c) += double(wgt) * fv[t] * X.col(tok[t]);
    }
    out.col(c) /= double(z);
  }
  return out;
}

Matrix FMapPlan::tokens(const Matrix& X, const Matrix& y, const Matrix& w) const {
  check_xyw(X, y, w);
  const Eigen::Index D = 2 * d + 2 + n;
  const long cols = long(n) * (grid.P + 1) + n;
  Matrix Z = Matrix::Zero(D, cols);
  long col = 0;
  for (int i = 0; i < n; ++i)
    for (long j = 0; j <= grid.P; ++j, ++col) {
      const double L = grid.point(j);
      for (Eigen::Index r = 0; r < d; ++r) {
        Z(r, col) = 2.0 * L * X(r, i);
        Z(d + 1 + r, col) = f(L) * X(r, i);
      }
      Z(d, col) = 2.0 * L * y(0, i);
      Z(2 * d + 1, col) = L * L;
      Z(2 * d + 2 + i, col) = C;
    }
  for (int c = 0; c < n; ++c, ++col) {
    for (Eigen::Index r = 0; r < d; ++r) Z(r, col) = w(r, 0);
    Z(d, col) = -1.0;
    Z(2 * d + 1, col) = -1.0;
    Z(2 * d + 2 + c, col) = 1.0;
  }
  return Z;
}

AttentionHead FMapPlan::head() const {
  const Eigen::Index D = 2 * d + 2 + n;
  AttentionHead h;
  h.beta = beta;
  h.W_K = Matrix::Identity(D, D);
  h.W_Q = Matrix::Identity(D, D);
  h.W_V = Matrix::Zero(d, D);
  for (Eigen::Index r = 0; r < d; ++r) h.W_V(r, d + 1 + r) = 1.0;
  return h;
}

Matrix per_sample_gradients(const Matrix& X, const Matrix& y, const Matrix& w,
                            const ScalarFn& grad) {
  check_xyw(X, y, w);
  const Matrix u = residuals(X, y, w);
  Matrix out(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.cols(); ++i) out.col(i) = grad(u(0, i)) * X.col(i);
  return out;
}

Matrix per_sample_gradients_emulated(const Matrix& X, const Matrix& y, const Matrix& w,
                                     const ScalarFn& grad, double eps) {
  check_xyw(X, y, w);
  const double B = std::max({sup_norm(X), sup_norm(y), sup_norm(w), 1e-9});
  const double U = double(X.rows()) * B * B + B;
  FMapPlan p = plan_f_map(grad, B, U, int(X.cols()), X.rows(), eps);
  return p.forward(X, y, w);
}

Matrix gd_step(const Matrix& X, const Matrix& y, const Matrix& w, double eta,
               const ScalarFn& grad) {
  if (!(eta > 0.0)) throw std::invalid_argument("gd_step: eta must be positive");
  const Matrix G = per_sample_gradients(X, y, w, grad);
  return w - (eta / double(X.cols())) * G.rowwise().sum();
}

Matrix gd_step_emulated(const Matrix& X, const Matrix& y, const Matrix& w, double eta,
                        const ScalarFn& grad, double eps) {
  if (!(eta > 0.0)) throw std::invalid_argument("gd_step_emulated: eta must be positive");
  const ScalarFn f = [eta, &grad](double v) { return -eta * grad(v); };
  const double B = std::max({sup_norm(X), sup_norm(y), sup_norm(w), 1e-9});
  const double U = double(X.rows()) * B * B + B;
  FMapPlan p = plan_f_map(f, B, U, int(X.cols()), X.rows(), eps);
  const Matrix out = p.forward(X, y, w);
  return w + Matrix(out.rowwise().mean());
}

double empirical_loss(const Matrix& X, const Matrix& y, const Matrix& w, const ScalarFn& loss) {
  const Matrix u = residuals(X, y, w);
  double s = 0.0;
  for (Eigen::Index i = 0; i < u.cols(); ++i) s += loss(u(0, i));
  return s / double(u.cols());
}

double smoothness_Lf(const Matrix& X) {
  return power_lambda_max(matmul(X, X.transpose())) / double(X.cols());
}

GDTrace gd_multi(const Matrix& X, const Matrix& y, const Matrix& w0, double eta,
                 const ScalarFn& loss, const ScalarFn& grad, int steps) {
  if (steps < 0) throw std::invalid_argument("gd_multi: negative step count");
  GDTrace tr;
  tr.eta = eta;
  tr.certified = eta <= 2.0 / std::max(smoothness_Lf(X), 1e-300);
  Matrix w = w0;
  tr.iterates.push_back(w);
  tr.loss_values.push_back(empirical_loss(X, y, w, loss));
  for (int t = 0; t < steps; ++t) {
    w = gd_step(X, y, w, eta, grad);
    tr.iterates.push_back(w);
    tr.loss_values.push_back(empirical_loss(X, y, w, loss));
  }
  return tr;
}

GDTrace gd_multi_emulated(const Matrix& X, const Matrix& y, const Matrix& w0, double eta,
                          const ScalarFn& loss, const ScalarFn& grad, int steps,
                          double eps_step) {
  if (steps < 0) throw std::invalid_argument("gd_multi_emulated: negative step count");
  GDTrace tr;
  tr.eta = eta;
  tr.certified = eta <= 2.0 / std::max(smoothness_Lf(X), 1e-300);
  Matrix w = w0;
  tr.iterates.push_back(w);
  tr.loss_values.push_back(empirical_loss(X, y, w, loss));
  for (int t = 0; t < steps; ++t) {
    w = gd_step_emulated(X, y, w, eta, grad, eps_step);
    tr.iterates.push_back(w);
    tr.loss_values.push_back(empirical_loss(X, y, w, loss));
  }
  return tr;
}

Matrix solve_linear_system(Matrix A, Matrix b) {
  const Eigen::Index m = A.rows();
  if (A.cols() != m || b.rows() != m)
    throw std::invalid_argument("solve_linear_system: shape mismatch");
  const double scale = std::max(sup_norm(A), 1e-300);
  for (Eigen::Index k = 0; k < m; ++k) {
    Eigen::Index piv = k;
    for (Eigen::Index r = k + 1; r < m; ++r)
      if (std::abs(A(r, k)) > std::abs(A(piv, k))) piv = r;
    if (std::abs(A(piv, k)) <= 1e-12 * scale)
      throw std::runtime_error("solve_linear_system: matrix is singular or rank deficient");
    if (piv != k) {
      A.row(piv).swap(A.row(k));
      b.row(piv).swap(b.row(k));
    }
    for (Eigen::Index r = k + 1; r < m; ++r) {
      const double fac = A(r, k) / A(k, k);
      A.row(r).tail(m - k) -= fac * A.row(k).tail(m - k);
      b.row(r) -= fac * b.row(k);
    }
  }
  Matrix x = Matrix::Zero(m, b.cols());
  for (Eigen::Index k = m - 1; k >= 0; --k) {
    x.row(k) = b.row(k);
    for (Eigen::Index j = k + 1; j < m; ++j) x.row(k) -= A(k, j) * x.row(j);
    x.row(k) /= A(k, k);
  }
  return x;
}

Matrix linear_regression(const Matrix& X, const Matrix& y) {
  if (y.rows() != 1 || y.cols() != X.cols())
    throw std::invalid_argument("linear_regression: labels must be 1 x n");
  return solve_linear_system(matmul(X, X.transpose()), matmul(X, y.transpose()));
}

Matrix ridge_regression(const Matrix& X, const Matrix& y, double lambda) {
  if (y.rows() != 1 || y.cols() != X.cols())
    throw std::invalid_argument("ridge_regression: labels must be 1 x n");
  if (!(lambda > 0.0)) throw std::invalid_argument("ridge_regression: lambda must be positive");
  Matrix A = matmul(X, X.transpose());
  A += lambda * Matrix::Identity(X.rows(), X.rows());
  return solve_linear_system(std::move(A), matmul(X, y.transpose()));
}

ConvexConstants ridge_constants(const Matrix& X, double lambda) {
  Matrix A = matmul(X, X.transpose());
  A += lambda * Matrix::Identity(X.rows(), X.rows());
  ConvexConstants c;
  c.beta_smooth = power_lambda_max(A);
  c.mu = lambda_min_sym(A);
  if (!(c.mu > 0.0))
    throw std::runtime_error("ridge_constants: objective is not strongly convex");
  c.kappa = c.beta_smooth / c.mu;
  c.eta = 1.0 / c.beta_smooth;
  return c;
}

GDTrace ridge_gd(const Matrix& X, const Matrix& y, double lambda, const Matrix& w0, int steps) {
  const ConvexConstants cc = ridge_constants(X, lambda);
  GDTrace tr;
  tr.eta = cc.eta;
  Matrix w = w0;
  const auto obj = [&](const Matrix& wv) {
    const Matrix u = residuals(X, y, wv);
    double s = 0.0;
    for (Eigen::Index i = 0; i < u.cols(); ++i) s += 0.5 * u(0, i) * u(0, i);
    for (Eigen::Index r = 0; r < wv.rows(); ++r) s += 0.5 * lambda * wv(r, 0) * wv(r, 0);
    return s;
  };
  tr.iterates.push_back(w);
  tr.loss_values.push_back(obj(w));
  for (int t = 0; t < steps; ++t) {
    const Matrix u = residuals(X, y, w);
    Matrix g = lambda * w;
    for (Eigen::Index i = 0; i < X.cols(); ++i) g += u(0, i) * X.col(i);
    w -= cc.eta * g;
    tr.iterates.push_back(w);
    tr.loss_values.push_back(obj(w));
  }
  return tr;
}

Matrix regression_emulated(const Matrix& X, const Matrix& y, double lambda, double eps,
                           int* steps_used) {
  if (!(eps > 0.0)) throw std::invalid_argument("regression_emulated: eps must be positive");
  const Matrix wstar =
      lambda > 0.0 ? ridge_regression(X, y, lambda) : linear_regression(X, y);
  const ConvexConstants cc = ridge_constants(X, lambda);
  const double dist0 = std::sqrt(wstar.squaredNorm());
  // ||w^t - w*||_2 <= exp(-t/(2 kappa)) ||w*||_2: push the GD term under eps/2
  int L = 1;
  if (dist0 > eps / 2.0)
    L = int(std::ceil(2.0 * cc.kappa * std::log(2.0 * dist0 / (eps / 2.0)))) + 1;
  if (steps_used) *steps_used = L;
  const double eps_step = (eps / 2.0) / double(L);
  const double etan = cc.eta * double(X.cols());
  Matrix w = Matrix::Zero(X.rows(), 1);
  // step w' = (1 - eta lambda) w + (1/n) sum f(u_i) x_i with f(u) = -eta n u,
  // i.e. GD on the ridge objective with the penalty term applied exactly
  const ScalarFn fs = [etan](double v) { return -etan * v; };
  for (int t = 0; t < L; ++t) {
    const double B = std::max({sup_norm(X), sup_norm(y), sup_norm(w), 1e-9});
    const double U = double(X.rows()) * B * B + B;
    FMapPlan p = plan_f_map(fs, B, U, int(X.cols()), X.rows(), eps_step, etan);
    const Matrix out = p.forward(X, y, w);
    w = (1.0 - cc.eta * lambda) * w + Matrix(out.rowwise().mean());
  }
  return w;
}

Matrix lasso_oracle(const Matrix& X, const Matrix& y, double lambda_l1) {
  if (y.rows() != 1 || y.cols() != X.cols())
    throw std::invalid_argument("lasso_oracle: labels must be 1 x n");
  if (lambda_l1 < 0.0) throw std::invalid_argument("lasso_oracle: negative penalty");
  const double lmax = power_lambda_max(matmul(X, X.transpose()));
  const double step = 1.0 / std::max(lmax, 1e-12);
  Matrix w = Matrix::Zero(X.rows(), 1);
  double update = 0.0;
  for (int it = 0; it < 200000; ++it) {
    const Matrix u = residuals(X, y, w);
    Matrix g = Matrix::Zero(X.rows(), 1);
    for (Eigen::Index i = 0; i < X.cols(); ++i) g += u(0, i) * X.col(i);
    Matrix z = w - step * g;
    update = 0.0;
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      const double nw = soft_threshold(z(r, 0), step * lambda_l1);
      update = std::max(update, std::abs(nw - w(r, 0)));
      w(r, 0) = nw;
    }
    if (update <= 1e-8) return w;
  }
  std::ostringstream os;
  os << "lasso_oracle: no convergence within 200000 iterations (last update " << update << ")";
  throw std::runtime_error(os.str());
}

double power_lambda_max(const Matrix& A) {
  const Eigen::Index m = A.rows();
  if (A.cols() != m) throw std::invalid_argument("power_lambda_max: square input required");
  if (m == 0) return 0.0;
  Matrix v(m, 1);
  for (Eigen::Index r = 0; r < m; ++r) v(r, 0) = 1.0 + 1e-3 * double(r);
  v /= std::sqrt(v.squaredNorm());
  double lam = 0.0;
  for (int it = 0; it < 2000; ++it) {
    Matrix Av = matmul(A, v);
    const double nrm = std::sqrt(Av.squaredNorm());
    if (nrm <= 1e-300) return 0.0;
    Av /= nrm;
    const double next = matmul(Av.transpose(), matmul(A, Av))(0, 0);
    const bool done = std::abs(next - lam) <= 1e-13 * std::max(1.0, std::abs(next));
    lam = next;
    v = Av;
    if (done && it > 16) break;
  }
  return lam;
}

double lambda_min_sym(const Matrix& A) {
  const double s = power_lambda_max(A);
  Matrix S = s * Matrix::Identity(A.rows(), A.rows());
  S -= A;
  return s - power_lambda_max(S);
}

ScalarFn named_scalar(const std::string& name) {
  if (name == "zero") return [](double) { return 0.0; };
  if (name == "identity") return [](double v) { return v; };
  if (name == "tanh") return [](double v) { return std::tanh(v); };
  if (name == "square_grad") return [](double v) { return v; };
  if (name == "square_loss") return [](double v) { return 0.5 * v * v; };
  throw std::invalid_argument("named_scalar: unknown handle " + name);
}

std::string algorithm_spec_to_json(const AlgorithmSpec& s) {
  Json j;
  j["name"] = s.name;
  j["kind"] = s.kind;
  Json params;
  params["eta"] = s.eta;
  params["lambda"] = s.lambda;
  params["L"] = s.steps;
  if (!s.f.empty()) params["f"] = s.f;
  if (s.W_K.size()) {
    params["weights"] = {{"W_K", matrix_to_json(s.W_K)},
                         {"W_Q", matrix_to_json(s.W_Q)},
                         {"W_V", matrix_to_json(s.W_V)}};
  }
  j["params"] = params;
  return j.dump(2);
}

AlgorithmSpec algorithm_spec_from_json(const std::string& text) {
  const Json j = Json::parse(text);
  AlgorithmSpec s;
  s.name = j.value("name", "");
  s.kind = j.value("kind", "target_head");
  const Json params = j.value("params", Json::object());
  s.eta = params.value("eta", 0.0);
  s.lambda = params.value("lambda", 0.0);
  s.steps = params.value("L", 0l);
  s.f = params.value("f", "");
  if (params.contains("weights")) {
    s.W_K = json_to_matrix(params["weights"].at("W_K"));
    s.W_Q = json_to_matrix(params["weights"].at("W_Q"));
    s.W_V = json_to_matrix(params["weights"].at("W_V"));
  }
  return s;
}

}  // namespace fwa
