#pragma once

#include <vector>

#include "fwa/attention.hpp"

// Interpolation grids, finite-temperature hardmax bounds, and the multi-head
// construction that evaluates a truncated linear map in-context.
namespace fwa {

struct InterpolationGrid {
  double a = 0.0, b = 1.0;
  int p = 1;              // interval count; points are L_0..L_p
  double delta = 1.0;     // (b-a)/p
  std::vector<double> points;
  // Grid formula extended to any integer index.
  double point(long k) const { return a + double(k) * delta; }
};

InterpolationGrid make_grid(double a, double b, int p);

double range_clamp(double x, double a, double b);

enum class HardmaxCase { unique_max, two_largest };

struct HardmaxPlan {
  int n = 0;
  double eps = 0.0;
  double gap = 0.0;       // x1-x2 (unique_max) or x1-x3 (two_largest)
  double beta_min = 0.0;
  HardmaxCase kind = HardmaxCase::unique_max;
};

HardmaxPlan plan_hardmax_beta(int n, double gap, double eps, HardmaxCase kind);

enum class HeadCase { case1 = 1, case2 = 2, case3 = 3 };

// Which of the lemma's interval cases head h (1-based) is in for input a_val,
// given n-2 value slots per head.
HeadCase classify_head_case(double a_val, int h, const InterpolationGrid& grid, int n);

// Round p up to the next multiple of n-2 (the construction splits grid points
// evenly across heads).
InterpolationGrid pad_grid_for(const InterpolationGrid& grid, int n);

// Smallest beta that keeps the per-head softmax leak within eps0 (split
// across the internal heads).
double plan_truncated_beta(const InterpolationGrid& padded, int n, double eps0);

struct TruncatedLinearApproximator {
  Matrix w_s;             // d x 1 coefficient
  InterpolationGrid grid; // padded
  int n = 0;              // token count
  int H = 0;              // reported head count = p/(n-2)
  int H_int = 0;          // H+1: one extra head extends value coverage past b
  double beta = 0.0;
  double eps0 = 0.0;      // softmax-leak budget implied by beta
  double t = 0.0;         // optional affine shift from the proof
  int k_G = 0;            // output row carrying the result
  int d_o = 1;
  bool padded = false;    // p was rounded up

  double mv() const;                 // max(|a|,|b|)
  double interp_term() const;        // (b-a)/((n-2)H)
  double budget() const;             // mv()*eps0 + interp_term()

  // Prompt encoding A(X) = [X; W_s; I_n] with W_s = [i*w_s; w_s] per token.
  Matrix encode(const Matrix& X) const;

  // Output of the head sum on A(X), evaluated with the windowed fast path
  // (terms below double-precision underflow are skipped).
  Matrix forward(const Matrix& X) const;

  // Scalar core of the fast path for one inner product value.
  double forward_scalar(double a_val) const;

  // Explicit Def-2.1 heads acting on encode(X); small cases only.
  MultiHeadAttention materialize() const;
};

// Builds the approximator; pads p when needed; n >= 3 required. beta <= 0
// requests planning at eps0 = default 1e-3 leak budget.
TruncatedLinearApproximator build_truncated_linear(const Matrix& w_s,
                                                   const InterpolationGrid& grid,
                                                   int n, double beta, int k_G,
                                                   int d_o = 1, double t = 0.0);

}  // namespace fwa
