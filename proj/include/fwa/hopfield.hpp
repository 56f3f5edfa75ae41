#pragma once

#include <functional>
#include <string>

#include "fwa/algorithms.hpp"
#include "fwa/grid.hpp"

// Modern Hopfield layer and its in-context constructions: function
// approximation over a slot grid and the gradient map shared with the
// attention f-map construction.
namespace fwa {

struct HopfieldLayer {
  Matrix K;           // d x N stored keys (key projection applied at build time)
  Matrix V;           // d_v x N stored values
  Matrix W_Q;         // query projection; empty means identity
  double beta = 1.0;
  bool lift_query = false;  // append a constant-1 row to queries first

  Matrix forward(const Matrix& R) const;  // V softmax(beta K^T W_Q [R; 1?])
};

// Stored patterns materialized: K = W_K Y, V = W_V W_K Y.
HopfieldLayer make_hopfield(const Matrix& Y, const Matrix& W_K, const Matrix& W_Q,
                            const Matrix& W_V, double beta);

Matrix hopfield_forward(const Matrix& Y, const Matrix& W_K, const Matrix& W_Q,
                        const Matrix& W_V, double beta, const Matrix& R);

// Keys [2 L_i a; 2 L_i b - L_i^2], values f(L_i), queries lifted to [z; 1]:
// column c approximates f(a^T z_c + b). beta <= 0 requests planning at the
// given tail budget eps1.
HopfieldLayer build_hopfield_function_approx(const std::function<Matrix(double)>& f,
                                             const Matrix& a, double b,
                                             const InterpolationGrid& grid, double beta,
                                             double eps1 = 1e-3);

// Tail fraction bound P exp(-(3/4) beta dL^2) for a slot grid at this beta.
double hopfield_tail_fraction(const InterpolationGrid& grid, double beta);

// Gradient map as a Hopfield lookup: stored keys/values are the f-map token
// columns for (X, y); queries encode w. Output approximates
// [grad(w^T x_i - y_i) x_i]_i.
struct HopfieldGD {
  FMapPlan plan;
  HopfieldLayer layer;

  Matrix forward(const Matrix& w) const;
};

HopfieldGD build_hopfield_gd(const Matrix& X, const Matrix& y, const ScalarFn& grad,
                             double eps);

// JSON: {"kind":"hopfield","beta":..,"lift_query":..,"K":..,"V":..}
std::string hopfield_to_json(const HopfieldLayer& h);
HopfieldLayer hopfield_from_json(const std::string& text);

}  // namespace fwa
