#include "fwa/grid.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fwa {

InterpolationGrid make_grid(double a, double b, int p) {
  if (!(a < b)) throw std::invalid_argument("make_grid: need a < b");
  if (p < 1) throw std::invalid_argument("make_grid: need p >= 1");
  InterpolationGrid g;
  g.a = a;
  g.b = b;
  g.p = p;
  g.delta = (b - a) / double(p);
  g.points.resize(size_t(p) + 1);
  for (int i = 0; i <= p; ++i) g.points[size_t(i)] = a + double(i) * (b - a) / double(p);
  g.points.back() = b;
  return g;
}

double range_clamp(double x, double a, double b) {
  if (a > b) throw std::domain_error("range_clamp: a > b");
  return x <= a ? a : (x >= b ? b : x);
}

HardmaxPlan plan_hardmax_beta(int n, double gap, double eps, HardmaxCase kind) {
  if (!(gap > 0.0)) throw std::invalid_argument("plan_hardmax_beta: gap must be positive");
  if (!(eps > 0.0)) throw std::invalid_argument("plan_hardmax_beta: eps must be positive");
  const int least = kind == HardmaxCase::unique_max ? 2 : 3;
  if (n < least) throw std::invalid_argument("plan_hardmax_beta: n too small for case");
  HardmaxPlan plan;
  plan.n = n;
  plan.eps = eps;
  plan.gap = gap;
  plan.kind = kind;
  const double count = kind == HardmaxCase::unique_max ? double(n - 1) : double(n - 2);
  plan.beta_min = (std::log(count) - std::log(eps)) / gap;
  return plan;
}

HeadCase classify_head_case(double a_val, int h, const InterpolationGrid& grid, int n) {
  if (n < 3) throw std::invalid_argument("classify_head_case: n must be >= 3");
  if (h < 1) throw std::out_of_range("classify_head_case: head index is 1-based");
  const long m = n - 2;
  const double lo1 = grid.point((long(h) - 1) * m);
  const double hi1 = grid.point(long(h) * m - 1);
  if (a_val >= lo1 && a_val <= hi1) return HeadCase::case1;
  const double lo2 = grid.point((long(h) - 1) * m - 1);
  const double hi2 = grid.point(long(h) * m);
  if (a_val < lo2 || a_val > hi2) return HeadCase::case2;
  return HeadCase::case3;
}

InterpolationGrid pad_grid_for(const InterpolationGrid& grid, int n) {
  if (n < 3) throw std::invalid_argument("pad_grid_for: n must be >= 3");
  const int m = n - 2;
  const int rem = grid.p % m;
  if (rem == 0) return grid;
  return make_grid(grid.a, grid.b, grid.p + (m - rem));
}

double plan_truncated_beta(const InterpolationGrid& padded, int n, double eps0) {
  if (!(eps0 > 0.0)) throw std::invalid_argument("plan_truncated_beta: eps0 must be positive");
  const int m = n - 2;
  if (m < 1 || padded.p % m != 0)
    throw std::invalid_argument("plan_truncated_beta: grid not padded for n");
  const int H_int = padded.p / m + 1;
  const double eps_head = eps0 / (2.0 * double(H_int));
  return (std::log(double(m)) - std::log(eps_head)) / padded.delta;
}

double TruncatedLinearApproximator::mv() const {
  return std::max(std::abs(grid.a), std::abs(grid.b));
}

double TruncatedLinearApproximator::interp_term() const {
  return (grid.b - grid.a) / (double(n - 2) * double(H));
}

double TruncatedLinearApproximator::budget() const { return mv() * eps0 + interp_term(); }

Matrix TruncatedLinearApproximator::encode(const Matrix& X) const {
  const Eigen::Index d = w_s.rows();
  if (X.rows() != d) throw std::invalid_argument("encode: X rows != coefficient dim");
  if (X.cols() != n) throw std::invalid_argument("encode: X cols != n");
  Matrix A = Matrix::Zero(3 * d + n, n);
  A.topRows(d) = X;
  for (int i = 0; i < n; ++i) {
    A.block(d, i, d, 1) = double(i) * w_s;
    A.block(2 * d, i, d, 1) = w_s;
    A(3 * d + i, i) = 1.0;
  }
  return A;
}

double TruncatedLinearApproximator::forward_scalar(double a_val) const {
  const int m = n - 2;
  const double u = a_val - grid.a + t;  // peak position in grid units * delta
  const double dL = grid.delta;
  // Heads whose value-slot weights all underflow are skipped; the skipped
  // weight is < exp(-800) relative.
  const double kstar = u / dL;
  const double reach = 405.0 / (beta * dL) + 2.0 * double(n);  // in slot units
  long h_lo = long(std::floor((kstar - reach) / double(m))) + 1;
  long h_hi = long(std::floor((kstar + reach) / double(m))) + 2;
  if (h_lo < 1) h_lo = 1;
  if (h_hi > H_int) h_hi = H_int;
  double out = 0.0;
  for (long h = h_lo; h <= h_hi; ++h) {
    const long k0 = (h - 1) * m - 1;
    double smax = -std::numeric_limits<double>::infinity();
    double s[64];
    double* sp = n <= 64 ? s : nullptr;
    std::vector<double> sv;
    if (!sp) {
      sv.resize(size_t(n));
      sp = sv.data();
    }
    for (int i = 0; i < n; ++i) {
      const double diff = u - double(k0 + i) * dL;
      sp[i] = -diff * diff / dL;
      if (sp[i] > smax) smax = sp[i];
    }
    double z = 0.0, acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const double w = std::exp(beta * (sp[i] - smax));
      z += w;
      if (i > 0 && i < n - 1) acc += w * grid.point(k0 + i);
    }
    out += acc / z;
  }
  return out;
}

Matrix TruncatedLinearApproximator::forward(const Matrix& X) const {
  const Eigen::Index d = w_s.rows();
  if (X.rows() != d) throw std::invalid_argument("forward: X rows != coefficient dim");
  if (X.cols() != n) throw std::invalid_argument("forward: X cols != n");
  Matrix out = Matrix::Zero(d_o, n);
  for (int c = 0; c < n; ++c) {
    double a_val = 0.0;
    for (Eigen::Index r = 0; r < d; ++r) a_val += w_s(r, 0) * X(r, c);
    out(k_G, c) = forward_scalar(a_val);
  }
  return out;
}

MultiHeadAttention TruncatedLinearApproximator::materialize() const {
  const Eigen::Index d = w_s.rows();
  const Eigen::Index rows = 3 * d + n;
  const int m = n - 2;
  MultiHeadAttention mh;
  for (int h = 1; h <= H_int; ++h) {
    const long k0 = long(h - 1) * m - 1;
    AttentionHead head;
    head.beta = beta;
    head.W_K = Matrix::Zero(d + 1, rows);
    for (Eigen::Index r = 0; r < d; ++r) {
      head.W_K(r, d + r) = 2.0;
      head.W_K(r, 2 * d + r) = 2.0 * double(k0);
    }
    for (int i = 0; i < n; ++i) {
      const long k = k0 + i;
      const double ell = double(k) * (grid.point(k) + grid.a) - 2.0 * double(k) * t;
      head.W_K(d, 3 * d + i) = -ell;
    }
    head.W_Q = Matrix::Zero(d + 1, rows);
    for (Eigen::Index r = 0; r < d; ++r) head.W_Q(r, r) = 1.0;
    for (int i = 0; i < n; ++i) head.W_Q(d, 3 * d + i) = 1.0;
    head.W_V = Matrix::Zero(d_o, rows);
    for (int i = 1; i < n - 1; ++i) head.W_V(k_G, 3 * d + i) = grid.point(k0 + i);
    mh.heads.push_back(std::move(head));
  }
  return mh;
}

TruncatedLinearApproximator build_truncated_linear(const Matrix& w_s,
                                                   const InterpolationGrid& grid,
                                                   int n, double beta, int k_G,
                                                   int d_o, double t) {
  if (n < 3)
    throw std::invalid_argument(
        "build_truncated_linear: n must be >= 3 (each head needs n-2 value slots)");
  if (w_s.cols() != 1) throw std::invalid_argument("build_truncated_linear: w_s must be d x 1");
  if (k_G < 0 || k_G >= d_o) throw std::out_of_range("build_truncated_linear: k_G out of range");
  TruncatedLinearApproximator ap;
  ap.w_s = w_s;
  ap.grid = pad_grid_for(grid, n);
  ap.padded = ap.grid.p != grid.p;
  ap.n = n;
  const int m = n - 2;
  ap.H = ap.grid.p / m;
  ap.H_int = ap.H + 1;
  ap.t = t;
  ap.k_G = k_G;
  ap.d_o = d_o;
  ap.beta = beta > 0.0 ? beta : plan_truncated_beta(ap.grid, n, 1e-3);
  // Leak implied by the beta in use (inverse of plan_truncated_beta).
  ap.eps0 = 2.0 * double(ap.H_int) * double(m) * std::exp(-ap.beta * ap.grid.delta);
  const double range = ap.grid.b - ap.grid.a;
  if (ap.beta / ap.grid.delta * range * range > 1e14) {
    const double beta_max = 1e14 * ap.grid.delta / (range * range);
    const double eps_min = 2.0 * double(ap.H_int) * double(m) * std::exp(-beta_max * ap.grid.delta);
    std::ostringstream os;
    os << "build_truncated_linear: beta " << ap.beta
       << " exceeds the double-precision score guard; smallest achievable leak eps0 ~ "
       << eps_min;
    throw std::domain_error(os.str());
  }
  return ap;
}

}  // namespace fwa
