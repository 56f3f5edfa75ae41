#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fwa/emulator.hpp"
#include "fwa/grid.hpp"

// Algorithms the frozen network emulates plus independent reference oracles:
// f(w^T x - y) x maps, per-sample gradients, single/multi-step GD, linear and
// ridge regression, and a Lasso oracle.
//
// Conventions: gd_step / gd_multi descend the mean empirical loss
// (1/n) sum l(w^T x_i - y_i); the regression oracles minimize the
// design-matrix objective 1/2 ||X^T w - y||^2 (+ penalty), no 1/n factor.
namespace fwa {

using ScalarFn = std::function<double(double)>;

// Grid geometry without the materialized point vector (slot counts here can
// reach 1e8; only windowed slots are ever touched).
struct GridGeometry {
  double a = 0.0, b = 1.0;
  long P = 1;
  double delta = 1.0;
  double point(long j) const { return a + double(j) * delta; }
};

GridGeometry make_geometry(double a, double b, long P);

// Single-head emulator of X, y, w -> [f(w^T x_c - y_c) x_c]_c. Token columns
// carry per-slot blocks [2 L_j x_i; 2 L_j y_i; f(L_j) x_i; L_j^2; C e_i];
// query columns carry [w; -1; 0_d; -1; e_c], so the raw inner product is
// 2 L_j (x_i^T w - y_i) - L_j^2 + C 1{i=c}.
struct FMapPlan {
  GridGeometry grid;
  Eigen::Index d = 0;
  int n = 0;
  double B = 0.0;    // bound on |x|, |y|, |w| entries
  double B_f = 0.0;  // bound on |f| over the grid
  double beta = 0.0;
  double C = 0.0;    // token-selector bias
  double eps0 = 0.0; // off-token selector slack
  ScalarFn f;

  // Windowed evaluation; matches the explicit head up to score rounding.
  Matrix forward(const Matrix& X, const Matrix& y, const Matrix& w) const;

  // Explicit token matrix [Linear_x(X,y) | Linear_w(w)], small P only.
  Matrix tokens(const Matrix& X, const Matrix& y, const Matrix& w) const;
  AttentionHead head() const;  // identity K/Q selectors, f-row value selector
};

// Assembles the head for a caller-chosen grid. B_f < 0 or lip < 0 request a
// sampled estimate of the bound / modulus. eps_check > 0 additionally demands
// modulus * max(B,1) <= eps_check/2 (throws domain_error: replan).
FMapPlan build_f_emulator(const ScalarFn& f, const GridGeometry& grid, double B, int n,
                          Eigen::Index d, double eps0, double B_f = -1.0, double lip = -1.0,
                          double eps_check = 0.0);

// Plans grid resolution, beta and C so the output sup error is <= eps over
// inputs bounded by B (inner products covered by [-U, U]).
FMapPlan plan_f_map(const ScalarFn& f, double B, double U, int n, Eigen::Index d, double eps,
                    double lip = -1.0);

// Oracle: column i = grad(w^T x_i - y_i) x_i.
Matrix per_sample_gradients(const Matrix& X, const Matrix& y, const Matrix& w,
                            const ScalarFn& grad);
Matrix per_sample_gradients_emulated(const Matrix& X, const Matrix& y, const Matrix& w,
                                     const ScalarFn& grad, double eps);

// w' = w - eta * (1/n) sum grad(u_i) x_i.
Matrix gd_step(const Matrix& X, const Matrix& y, const Matrix& w, double eta,
               const ScalarFn& grad);
Matrix gd_step_emulated(const Matrix& X, const Matrix& y, const Matrix& w, double eta,
                        const ScalarFn& grad, double eps);

struct GDTrace {
  std::vector<Matrix> iterates;     // w^0 .. w^L
  std::vector<double> loss_values;  // mean empirical loss at each iterate
  double eta = 0.0;
  bool certified = true;  // false when eta > 2/L_f (bound not guaranteed)
};

double empirical_loss(const Matrix& X, const Matrix& y, const Matrix& w, const ScalarFn& loss);
double smoothness_Lf(const Matrix& X);  // lambda_max(X X^T) / n

GDTrace gd_multi(const Matrix& X, const Matrix& y, const Matrix& w0, double eta,
                 const ScalarFn& loss, const ScalarFn& grad, int steps);
GDTrace gd_multi_emulated(const Matrix& X, const Matrix& y, const Matrix& w0, double eta,
                          const ScalarFn& loss, const ScalarFn& grad, int steps,
                          double eps_step);

// Closed forms via Gaussian elimination with partial pivoting.
Matrix solve_linear_system(Matrix A, Matrix b);
Matrix linear_regression(const Matrix& X, const Matrix& y);
Matrix ridge_regression(const Matrix& X, const Matrix& y, double lambda);

struct ConvexConstants {
  double beta_smooth = 0.0;  // lambda_max(X X^T + lambda I)
  double mu = 0.0;           // lambda_min
  double kappa = 0.0;
  double eta = 0.0;  // 1 / beta_smooth
};
ConvexConstants ridge_constants(const Matrix& X, double lambda);

// Oracle GD on the ridge objective at eta = 1/beta_smooth, w^0 = w0.
GDTrace ridge_gd(const Matrix& X, const Matrix& y, double lambda, const Matrix& w0, int steps);

// Emulated-GD regression: eps/2 to GD-vs-optimum (step count from the
// contraction rate), eps/2 split across the per-step emulations. lambda = 0
// gives plain least squares.
Matrix regression_emulated(const Matrix& X, const Matrix& y, double lambda, double eps,
                           int* steps_used = nullptr);

// ISTA with step-size 1/lambda_max(X X^T), update tolerance 1e-8.
Matrix lasso_oracle(const Matrix& X, const Matrix& y, double lambda_l1);

double power_lambda_max(const Matrix& A);  // symmetric PSD input
double lambda_min_sym(const Matrix& A);

ScalarFn named_scalar(const std::string& name);  // zero|identity|tanh|square_grad|square_loss

std::string algorithm_spec_to_json(const AlgorithmSpec& s);
AlgorithmSpec algorithm_spec_from_json(const std::string& text);

}  // namespace fwa
