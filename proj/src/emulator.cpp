#include "fwa/emulator.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "fwa/serialize.hpp"

namespace fwa {

namespace {

constexpr double kBetaGuard32 = 1e14;  // beta/dL * range^2 cap (score precision)
constexpr double kBetaGuard33 = 1e13;  // beta * max(mv^2,1) cap
constexpr long kMaxGridIntervals = 200000000;

double chain_eps1(double eps, double B) { return std::log1p(eps / 2.0) / (2.0 * B + 1.0); }

struct PlanGeometry {
  bool feasible = false;
  InterpolationPlan plan;
};

PlanGeometry try_plan32(double eps, double a, double b, Eigen::Index n, double B) {
  PlanGeometry g;
  InterpolationPlan& pl = g.plan;
  pl.eps = eps;
  pl.B_KQV = B;
  pl.a = a;
  pl.b = b;
  pl.eps1 = chain_eps1(eps, B);
  pl.eps0 = chain_eps1(pl.eps1, B);
  const long m = long(n) - 2;
  pl.H = long(std::ceil(2.0 * (b - a) / (double(m) * pl.eps0)));
  if (pl.H < 1) pl.H = 1;
  pl.P = pl.H * m;
  if (pl.P > kMaxGridIntervals) return g;
  const InterpolationGrid grid = make_grid(a, b, int(pl.P));
  const double mv = std::max(std::abs(a), std::abs(b));
  // Split the budget: leak * mv <= eps0/2, interpolation <= eps0/2.
  const double leak = pl.eps0 / (2.0 * std::max(mv, 1.0));
  pl.beta = plan_truncated_beta(grid, int(n), leak);
  const double range = b - a;
  if (pl.beta / grid.delta * range * range > kBetaGuard32) return g;
  g.feasible = true;
  return g;
}

[[noreturn]] void throw_infeasible(const char* what, double eps,
                                   const std::function<bool(double)>& feasible) {
  double hi = eps;
  for (int i = 0; i < 200 && !feasible(hi); ++i) hi *= 2.0;
  double lo = eps;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (feasible(mid) ? hi : lo) = mid;
  }
  std::ostringstream os;
  os << what << ": eps " << eps << " infeasible under the precision guard; smallest achievable eps ~ "
     << hi;
  throw std::domain_error(os.str());
}

void decode_groups(const PromptEncoding& p, Matrix& wk, Matrix& wq, Matrix& wv) {
  if (p.layout == PromptLayout::def31)
    decode_target_head(p, wk, wq, wv);
  else if (p.layout == PromptLayout::thm33_rowstack)
    decode_rowstack(p, wk, wq, wv);
  else
    throw std::invalid_argument("emulator: prompt layout carries no attention target");
}

AttentionHead make_readout(Eigen::Index rk, Eigen::Index rq, Eigen::Index rv) {
  const Eigen::Index total = rk + rq + rv;
  AttentionHead h;
  h.beta = 1.0;
  h.W_K = Matrix::Zero(rk, total);
  h.W_K.block(0, 0, rk, rk) = Matrix::Identity(rk, rk);
  h.W_Q = Matrix::Zero(rq, total);
  h.W_Q.block(0, rk, rq, rq) = Matrix::Identity(rq, rq);
  h.W_V = Matrix::Zero(rv, total);
  h.W_V.block(0, rk + rq, rv, rv) = Matrix::Identity(rv, rv);
  return h;
}

struct Checksum {
  std::uint64_t h = 1469598103934665603ull;
  void bytes(const void* p, size_t len) {
    const unsigned char* c = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < len; ++i) {
      h ^= c[i];
      h *= 1099511628211ull;
    }
  }
  void real(double x) { bytes(&x, sizeof x); }
  void mat(const Matrix& M) {
    real(double(M.rows()));
    real(double(M.cols()));
    if (M.size()) bytes(M.data(), sizeof(double) * size_t(M.size()));
  }
};

}  // namespace

InterpolationPlan plan_parameters(double eps, double a, double b, Eigen::Index /*d*/,
                                  Eigen::Index n, Eigen::Index /*d_h*/, double B_KQV) {
  if (!(eps > 0.0)) throw std::invalid_argument("plan_parameters: eps must be positive");
  if (!(a < b)) throw std::invalid_argument("plan_parameters: need a < b");
  if (n < 3) throw std::invalid_argument("plan_parameters: need n >= 3");
  const double B = std::max(B_KQV, 1e-6);
  PlanGeometry g = try_plan32(eps, a, b, n, B);
  if (!g.feasible)
    throw_infeasible("plan_parameters", eps,
                     [&](double e) { return try_plan32(e, a, b, n, B).feasible; });
  return g.plan;
}

double measure_B_KQV(const PromptEncoding& p) {
  Matrix wk, wq, wv;
  decode_groups(p, wk, wq, wv);
  const Matrix K = matmul(wk, p.X), Q = matmul(wq, p.X), V = matmul(wv, p.X);
  double B = std::max({sup_norm(K), sup_norm(Q), sup_norm(V), sup_norm(matmul(K.transpose(), Q))});
  return std::max(B, 1e-6);
}

Matrix target_attention_forward(const PromptEncoding& p) {
  Matrix wk, wq, wv;
  decode_groups(p, wk, wq, wv);
  const Matrix K = matmul(wk, p.X), Q = matmul(wq, p.X), V = matmul(wv, p.X);
  return matmul(V, softmax_cols(matmul(K.transpose(), Q), 1.0));
}

FrozenEmulator build_thm32(const PromptEncoding& prompt, double eps) {
  if (prompt.layout != PromptLayout::def31)
    throw std::invalid_argument("build_thm32: prompt layout must be def31");
  if (prompt.n < 3) throw std::invalid_argument("build_thm32: need n >= 3");
  FrozenEmulator em;
  em.construction = "thm32";
  em.d = prompt.d;
  em.n = prompt.n;
  em.d_h = prompt.d_h;
  em.d_o = prompt.d_o;
  em.plan = plan_parameters(eps, prompt.bound_a, prompt.bound_b, prompt.d, prompt.n,
                            prompt.d_h, measure_B_KQV(prompt));
  em.plan.B_entry = std::max(sup_norm(prompt.X), sup_norm(prompt.W));
  em.proto = build_truncated_linear(Matrix::Zero(prompt.d, 1),
                                    make_grid(em.plan.a, em.plan.b, int(em.plan.P)),
                                    int(prompt.n), em.plan.beta, 0, 1, 0.0);
  em.readout = make_readout(em.d_h, em.d_h, em.d_o);
  return em;
}

FrozenEmulator build_thm33(const PromptEncoding& prompt, double eps) {
  if (prompt.layout != PromptLayout::thm33_rowstack)
    throw std::invalid_argument("build_thm33: prompt layout must be thm33_rowstack");
  if (!(eps > 0.0)) throw std::invalid_argument("build_thm33: eps must be positive");
  FrozenEmulator em;
  em.construction = "thm33";
  em.d = prompt.d;
  em.n = prompt.n;
  em.d_h = prompt.n;
  em.d_o = prompt.n;
  const double B = measure_B_KQV(prompt);
  const double Be = std::max({sup_norm(prompt.X), sup_norm(prompt.W), 1e-6});
  const double a = prompt.bound_a, b = prompt.bound_b, range = b - a;
  const double mv = std::max(std::abs(a), std::abs(b));

  auto geometry = [&](double e, InterpolationPlan& pl, double& beta, long& P) {
    pl.eps = e;
    pl.B_KQV = B;
    pl.B_entry = Be;
    pl.a = a;
    pl.b = b;
    pl.eps1 = chain_eps1(e, B);
    pl.eps0 = chain_eps1(pl.eps1, B);
    P = std::max({long(std::ceil(2.0 * range / pl.eps0)),
                  long(std::ceil(4.0 * double(prompt.d) * Be * Be / pl.eps1)),
                  long(prompt.n) - 1, 1l});
    if (P > kMaxGridIntervals) return false;
    const double dL = range / double(P);
    const double arg = std::max({4.0 * double(prompt.d) * Be * Be * double(P) / pl.eps0,
                                 4.0 * (mv + 1.0) * double(P) / pl.eps0, std::exp(1.0)});
    beta = 4.0 / (3.0 * dL * dL) * std::log(arg);
    pl.beta = beta;
    pl.P = P;
    pl.H = prompt.n;  // heads per group
    return beta * std::max(mv * mv, 1.0) <= kBetaGuard33;
  };
  long P = 0;
  if (!geometry(eps, em.plan, em.beta33, P))
    throw_infeasible("build_thm33", eps, [&](double e) {
      InterpolationPlan pl;
      double bb;
      long pp;
      return geometry(e, pl, bb, pp);
    });
  em.grid33 = make_grid(a, b, int(P));
  em.readout = make_readout(em.n, em.n, em.n);
  return em;
}

double FrozenEmulator::forward_scalar33(double u) const {
  const double dL = grid33.delta;
  const double kstar = (u - grid33.a) / dL;
  const double reach = std::sqrt(800.0 / beta33) / dL + 3.0;
  long lo = long(std::floor(kstar - reach)), hi = long(std::ceil(kstar + reach));
  if (lo < 0) lo = 0;
  if (hi > grid33.p) hi = grid33.p;
  double smax = -std::numeric_limits<double>::infinity();
  for (long r = lo; r <= hi; ++r) {
    const double L = grid33.point(r);
    smax = std::max(smax, 2.0 * L * u - L * L);
  }
  double z = 0.0, acc = 0.0;
  for (long r = lo; r <= hi; ++r) {
    const double L = grid33.point(r);
    const double w = std::exp(beta33 * (2.0 * L * u - L * L - smax));
    z += w;
    acc += w * L;
  }
  return acc / z;
}

Matrix FrozenEmulator::first_layer(const PromptEncoding& prompt) const {
  Matrix wk, wq, wv;
  decode_groups(prompt, wk, wq, wv);
  const Matrix* groups[3] = {&wk, &wq, &wv};
  if (construction == "thm32") {
    if (wk.rows() != d_h || wv.rows() != d_o || wk.cols() != d)
      throw std::invalid_argument("first_layer: prompt dims differ from the build");
    Matrix Y = Matrix::Zero(2 * d_h + d_o, n);
    Eigen::Index off = 0;
    for (int g = 0; g < 3; ++g) {
      const Matrix& M = *groups[g];
      for (Eigen::Index j = 0; j < M.rows(); ++j)
        for (Eigen::Index c = 0; c < n; ++c) {
          double a_val = 0.0;
          for (Eigen::Index r = 0; r < d; ++r) a_val += M(j, r) * prompt.X(r, c);
          Y(off + j, c) = proto.forward_scalar(a_val);
        }
      off += M.rows();
    }
    return Y;
  }
  if (wk.rows() != n || wk.cols() != d)
    throw std::invalid_argument("first_layer: prompt dims differ from the build");
  Matrix Y = Matrix::Zero(3 * n, n);
  for (int g = 0; g < 3; ++g)
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index c = 0; c < n; ++c) {
        double u = 0.0;
        for (Eigen::Index r = 0; r < d; ++r) u += (*groups[g])(j, r) * prompt.X(r, c);
        Y(g * n + j, c) = forward_scalar33(u);
      }
  return Y;
}

Matrix FrozenEmulator::forward(const PromptEncoding& prompt) const {
  return forward_head(readout, first_layer(prompt));
}

MultiHeadAttention FrozenEmulator::materialize_first_layer(const PromptEncoding& prompt) const {
  if (construction != "thm32")
    throw std::logic_error("materialize_first_layer: token-dimension build only");
  Matrix wk, wq, wv;
  decode_target_head(prompt, wk, wq, wv);
  const Eigen::Index len = (2 * d_h + d_o) * d;
  const Eigen::Index prompt_rows = d + 2 * len + n;
  const Matrix* groups[3] = {&wk, &wq, &wv};
  MultiHeadAttention mh;
  Eigen::Index off_row = 0;
  for (int g = 0; g < 3; ++g) {
    const Matrix& M = *groups[g];
    const Eigen::Index grp = g == 0 ? 0 : (g == 1 ? d_h * d : 2 * d_h * d);
    for (Eigen::Index j = 0; j < M.rows(); ++j) {
      TruncatedLinearApproximator blk = proto;
      blk.w_s = M.row(j).transpose();
      blk.k_G = int(off_row + j);
      blk.d_o = int(2 * d_h + d_o);
      // Selector from the full prompt onto [x; i*w_gj; w_gj; positions].
      Matrix S = Matrix::Zero(3 * d + n, prompt_rows);
      const Eigen::Index off_w = grp + j * d;
      for (Eigen::Index r = 0; r < d; ++r) {
        S(r, r) = 1.0;
        S(d + r, d + off_w + r) = 1.0;
        S(2 * d + r, d + len + off_w + r) = 1.0;
      }
      for (Eigen::Index i = 0; i < n; ++i) S(3 * d + i, d + 2 * len + i) = 1.0;
      for (const AttentionHead& h : blk.materialize().heads)
        mh.heads.push_back(compose_linear_prefix(h, S));
    }
    off_row += M.rows();
  }
  return mh;
}

EmulationReport measure_emulation(const FrozenEmulator& em, const PromptEncoding& prompt,
                                  const Matrix& target_out) {
  EmulationReport r;
  const auto t0 = std::chrono::steady_clock::now();
  const Matrix out = em.forward(prompt);
  r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (out.rows() != target_out.rows() || out.cols() != target_out.cols())
    throw std::invalid_argument("measure_emulation: output shape mismatch");
  r.measured_error = sup_norm_diff(out, target_out);
  r.theoretical_budget = em.plan.eps0 + double(em.n) * em.plan.B_KQV * em.plan.eps1;
  r.beta = em.plan.beta;
  r.P = em.plan.P;
  r.H = em.plan.H;
  r.N = em.construction == "thm32" ? em.plan.H * long(em.d_h) : long(em.n);
  return r;
}

Matrix linear33(const PromptEncoding& p, const InterpolationGrid& grid, int g, int j) {
  Matrix wk, wq, wv;
  decode_rowstack(p, wk, wq, wv);
  const Matrix& M = g == 0 ? wk : (g == 1 ? wq : wv);
  const Eigen::Index d = p.d, n = p.n;
  const long P = grid.p;
  Matrix Z = Matrix::Zero(2 * d + 3, P + 1);
  for (long r = 0; r <= P; ++r) {
    const double L = grid.point(r);
    if (r < n)
      for (Eigen::Index k = 0; k < d; ++k) Z(k, r) = p.X(k, r);
    for (Eigen::Index k = 0; k < d; ++k) Z(d + k, r) = 2.0 * L * M(j, k);
    if (r < n) Z(2 * d, r) = 1.0;
    Z(2 * d + 1, r) = L;
    Z(2 * d + 2, r) = -L * L;
  }
  return Z;
}

AttentionHead head33(const FrozenEmulator& em, int g, int j) {
  const Eigen::Index d = em.d, n = em.n;
  AttentionHead h;
  h.beta = em.beta33;
  h.W_K = Matrix::Zero(d + 1, 2 * d + 3);
  for (Eigen::Index r = 0; r < d; ++r) h.W_K(r, d + r) = 1.0;
  h.W_K(d, 2 * d + 2) = 1.0;
  h.W_Q = Matrix::Zero(d + 1, 2 * d + 3);
  for (Eigen::Index r = 0; r < d; ++r) h.W_Q(r, r) = 1.0;
  h.W_Q(d, 2 * d) = 1.0;
  h.W_V = Matrix::Zero(3 * n, 2 * d + 3);
  h.W_V(g * n + j, 2 * d + 1) = 1.0;
  return h;
}

Matrix first_layer_reference33(const FrozenEmulator& em, const PromptEncoding& prompt) {
  Matrix Y = Matrix::Zero(3 * em.n, em.grid33.p + 1);
  for (int g = 0; g < 3; ++g)
    for (int j = 0; j < em.n; ++j)
      Y += forward_head(head33(em, g, j), linear33(prompt, em.grid33, g, j));
  return Y.leftCols(em.n);
}

FrozenEmulator build_for_library(const std::vector<AlgorithmSpec>& library, const Matrix& X,
                                 double eps) {
  if (library.empty()) throw std::invalid_argument("build_for_library: empty library");
  double a = 0.0, b = 0.0, B = 0.0;
  bool first = true;
  for (const AlgorithmSpec& s : library) {
    const PromptEncoding p = encode_target_head(X, s.W_K, s.W_Q, s.W_V);
    if (p.d_h != library.front().W_K.rows() || p.d_o != library.front().W_V.rows())
      throw std::invalid_argument("build_for_library: members must share padded dims");
    a = first ? p.bound_a : std::min(a, p.bound_a);
    b = first ? p.bound_b : std::max(b, p.bound_b);
    B = std::max(B, measure_B_KQV(p));
    first = false;
  }
  PromptEncoding p0 =
      encode_target_head(X, library.front().W_K, library.front().W_Q, library.front().W_V);
  p0.bound_a = a;  // widen the representative prompt to the library-wide range
  p0.bound_b = b;
  FrozenEmulator em;
  em.construction = "thm32";
  em.d = p0.d;
  em.n = p0.n;
  em.d_h = p0.d_h;
  em.d_o = p0.d_o;
  em.plan = plan_parameters(eps, a, b, p0.d, p0.n, p0.d_h, B);
  em.plan.B_entry = std::max(sup_norm(p0.X), sup_norm(p0.W));
  em.proto = build_truncated_linear(Matrix::Zero(p0.d, 1),
                                    make_grid(em.plan.a, em.plan.b, int(em.plan.P)),
                                    int(p0.n), em.plan.beta, 0, 1, 0.0);
  em.readout = make_readout(em.d_h, em.d_h, em.d_o);
  return em;
}

std::vector<EmulationReport> swap_algorithm(const FrozenEmulator& em,
                                            const std::vector<AlgorithmSpec>& library,
                                            const Matrix& X) {
  std::vector<EmulationReport> reports;
  const std::uint64_t before = emulator_checksum(em);
  for (const AlgorithmSpec& s : library) {
    const PromptEncoding p = encode_target_head(X, s.W_K, s.W_Q, s.W_V);
    if (p.bound_a < em.plan.a || p.bound_b > em.plan.b) {
      std::ostringstream os;
      os << "swap_algorithm: replan required; " << s.name << " range [" << p.bound_a << ", "
         << p.bound_b << "] exceeds the planned grid [" << em.plan.a << ", " << em.plan.b << "]";
      throw std::runtime_error(os.str());
    }
    EmulationReport r = measure_emulation(em, p, target_attention_forward(p));
    r.algorithm = s.name;
    reports.push_back(std::move(r));
    if (emulator_checksum(em) != before)
      throw std::logic_error("swap_algorithm: frozen weights changed");
  }
  return reports;
}

std::uint64_t emulator_checksum(const FrozenEmulator& em) {
  Checksum c;
  c.bytes(em.construction.data(), em.construction.size());
  for (double v : {double(em.d), double(em.n), double(em.d_h), double(em.d_o)}) c.real(v);
  for (double v : {em.plan.eps, em.plan.eps0, em.plan.eps1, em.plan.B_KQV, em.plan.a, em.plan.b,
                   em.plan.beta, double(em.plan.H), double(em.plan.P)})
    c.real(v);
  c.real(em.proto.beta);
  c.real(em.proto.t);
  c.real(double(em.proto.H_int));
  if (!em.proto.grid.points.empty())
    c.bytes(em.proto.grid.points.data(), sizeof(double) * em.proto.grid.points.size());
  c.real(em.beta33);
  if (!em.grid33.points.empty())
    c.bytes(em.grid33.points.data(), sizeof(double) * em.grid33.points.size());
  c.mat(em.readout.W_K);
  c.mat(em.readout.W_Q);
  c.mat(em.readout.W_V);
  c.real(em.readout.beta);
  return c.h;
}

std::string report_to_json(const EmulationReport& r, const InterpolationPlan& plan) {
  Json j;
  j["algorithm"] = r.algorithm;
  j["measured_error"] = r.measured_error;
  j["theoretical_budget"] = r.theoretical_budget;
  j["params"] = {{"beta", r.beta}, {"P", r.P}, {"H", r.H}, {"N", r.N}};
  j["runtime_seconds"] = r.runtime_seconds;
  j["plan"] = {{"eps", plan.eps},   {"eps0", plan.eps0}, {"eps1", plan.eps1},
               {"B_KQV", plan.B_KQV}, {"a", plan.a},     {"b", plan.b},
               {"beta", plan.beta}, {"H", plan.H},       {"P", plan.P}};
  return j.dump(2);
}

}  // namespace fwa
