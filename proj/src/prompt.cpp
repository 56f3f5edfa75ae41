#include "fwa/prompt.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fwa/serialize.hpp"

namespace fwa {

namespace {

void widen(double& lo, double& hi) {
  const double span = hi - lo;
  if (span < 1e-9) {
    lo -= 0.1;
    hi += 0.1;
  } else {
    lo -= 0.05 * span;
    hi += 0.05 * span;
  }
}

// min/max of all row-of-A dot column-of-X inner products.
void measure_bounds(const Matrix& A, const Matrix& X, double& lo, double& hi) {
  for (Eigen::Index j = 0; j < A.rows(); ++j)
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      double v = 0.0;
      for (Eigen::Index r = 0; r < A.cols(); ++r) v += A(j, r) * X(r, c);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
}

}  // namespace

Matrix PromptEncoding::full() const {
  std::vector<Matrix> blocks{X, W};
  if (position) blocks.push_back(Matrix::Identity(n, n));
  return stack_rows(blocks);
}

PromptEncoding encode_target_head(const Matrix& X, const Matrix& W_K,
                                  const Matrix& W_Q, const Matrix& W_V) {
  const Eigen::Index d = X.rows(), n = X.cols();
  if (n < 3) throw std::invalid_argument("encode_target_head: need n >= 3");
  if (W_K.cols() != d || W_Q.cols() != d || W_V.cols() != d)
    throw std::invalid_argument("encode_target_head: weight cols != d");
  if (W_K.rows() != W_Q.rows())
    throw std::invalid_argument("encode_target_head: W_K/W_Q row mismatch");
  PromptEncoding p;
  p.layout = PromptLayout::def31;
  p.X = X;
  p.position = true;
  p.d = d;
  p.n = n;
  p.d_h = W_K.rows();
  p.d_o = W_V.rows();
  const Matrix w = stack_rows({vec(W_K), vec(W_Q), vec(W_V)});
  const Eigen::Index len = w.rows();
  p.W = Matrix::Zero(2 * len, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    p.W.block(0, i, len, 1) = double(i) * w;
    p.W.block(len, i, len, 1) = w;
  }
  double lo = 0.0, hi = 0.0;
  measure_bounds(W_K, X, lo, hi);
  measure_bounds(W_Q, X, lo, hi);
  measure_bounds(W_V, X, lo, hi);
  widen(lo, hi);
  p.bound_a = lo;
  p.bound_b = hi;
  return p;
}

void decode_target_head(const PromptEncoding& p, Matrix& W_K, Matrix& W_Q, Matrix& W_V) {
  if (p.layout != PromptLayout::def31)
    throw std::invalid_argument("decode_target_head: wrong layout");
  const Eigen::Index len = p.W.rows() / 2;
  const Matrix w = p.W.block(len, 0, len, 1);
  const Eigen::Index kq = p.d_h * p.d;
  W_K = unvec(w.topRows(kq), p.d_h, p.d);
  W_Q = unvec(w.middleRows(kq, kq), p.d_h, p.d);
  W_V = unvec(w.bottomRows(p.d_o * p.d), p.d_o, p.d);
}

PromptEncoding encode_gd_input(const Matrix& X, const Matrix& y, const Matrix& w) {
  const Eigen::Index d = X.rows(), n = X.cols();
  if (n < 1) throw std::invalid_argument("encode_gd_input: empty pairs");
  if (y.rows() != 1 || y.cols() != n)
    throw std::invalid_argument("encode_gd_input: y must be 1 x n");
  if (w.rows() != d || w.cols() != 1)
    throw std::invalid_argument("encode_gd_input: w must be d x 1");
  PromptEncoding p;
  p.layout = PromptLayout::gd_input;
  p.X = stack_rows({X, y});
  p.d = d;
  p.n = n;
  p.d_h = 0;
  p.d_o = d;
  p.W = Matrix::Zero(d, n);
  for (Eigen::Index i = 0; i < n; ++i) p.W.col(i) = w.col(0);
  // Range of w^T x_i - y_i drives the downstream grid.
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (Eigen::Index i = 0; i < n; ++i) {
    double u = -y(0, i);
    for (Eigen::Index r = 0; r < d; ++r) u += w(r, 0) * X(r, i);
    if (first) {
      lo = hi = u;
      first = false;
    } else {
      lo = std::min(lo, u);
      hi = std::max(hi, u);
    }
  }
  widen(lo, hi);
  p.bound_a = lo;
  p.bound_b = hi;
  return p;
}

void decode_gd_input(const PromptEncoding& p, Matrix& X, Matrix& y, Matrix& w) {
  if (p.layout != PromptLayout::gd_input)
    throw std::invalid_argument("decode_gd_input: wrong layout");
  X = p.X.topRows(p.d);
  y = p.X.bottomRows(1);
  w = p.W.col(0);
}

PromptEncoding encode_rowstack(const Matrix& X, const Matrix& W_K,
                               const Matrix& W_Q, const Matrix& W_V) {
  const Eigen::Index d = X.rows(), n = X.cols();
  auto check = [&](const Matrix& M, const char* name) {
    if (M.cols() != d)
      throw std::invalid_argument(std::string("encode_rowstack: ") + name + " cols != d");
    if (M.rows() > n)
      throw std::invalid_argument(std::string("encode_rowstack: ") + name +
                                  " has more rows than tokens (cannot pad down)");
  };
  check(W_K, "W_K");
  check(W_Q, "W_Q");
  check(W_V, "W_V");
  if (W_K.rows() != W_Q.rows() || W_K.rows() != W_V.rows())
    throw std::invalid_argument("encode_rowstack: weight row counts differ");
  PromptEncoding p;
  p.layout = PromptLayout::thm33_rowstack;
  p.X = X;
  p.d = d;
  p.n = n;
  p.d_h = n;  // effective hidden dim after padding
  p.d_o = n;
  p.pad_rows = int(n - W_K.rows());
  auto padT = [&](const Matrix& M) {
    Matrix P = Matrix::Zero(n, d);
    P.topRows(M.rows()) = M;
    return Matrix(P.transpose());
  };
  p.W = stack_rows({padT(W_K), padT(W_Q), padT(W_V)});
  double lo = 0.0, hi = 0.0;  // padded rows contribute 0, keep it in range
  measure_bounds(Matrix(p.W.topRows(d).transpose()), X, lo, hi);
  measure_bounds(Matrix(p.W.middleRows(d, d).transpose()), X, lo, hi);
  measure_bounds(Matrix(p.W.bottomRows(d).transpose()), X, lo, hi);
  widen(lo, hi);
  p.bound_a = lo;
  p.bound_b = hi;
  return p;
}

void decode_rowstack(const PromptEncoding& p, Matrix& W_K, Matrix& W_Q, Matrix& W_V) {
  if (p.layout != PromptLayout::thm33_rowstack)
    throw std::invalid_argument("decode_rowstack: wrong layout");
  W_K = p.W.topRows(p.d).transpose();
  W_Q = p.W.middleRows(p.d, p.d).transpose();
  W_V = p.W.bottomRows(p.d).transpose();
}

namespace {

const char* layout_name(PromptLayout l) {
  switch (l) {
    case PromptLayout::def31: return "def31";
    case PromptLayout::gd_input: return "gd_input";
    case PromptLayout::thm33_rowstack: return "thm33_rowstack";
  }
  return "?";
}

}  // namespace

std::string prompt_to_json(const PromptEncoding& p) {
  Json j;
  j["layout"] = layout_name(p.layout);
  j["meta"] = {{"d", p.d},       {"n", p.n},           {"d_h", p.d_h},
               {"d_o", p.d_o},   {"pad_rows", p.pad_rows},
               {"bound_a", p.bound_a}, {"bound_b", p.bound_b}};
  switch (p.layout) {
    case PromptLayout::def31: {
      Matrix wk, wq, wv;
      decode_target_head(p, wk, wq, wv);
      j["X"] = matrix_to_json(p.X);
      j["W_K"] = matrix_to_json(wk);
      j["W_Q"] = matrix_to_json(wq);
      j["W_V"] = matrix_to_json(wv);
      break;
    }
    case PromptLayout::gd_input: {
      Matrix X, y, w;
      decode_gd_input(p, X, y, w);
      j["X"] = matrix_to_json(X);
      j["y"] = matrix_to_json(y);
      j["w"] = matrix_to_json(w);
      break;
    }
    case PromptLayout::thm33_rowstack: {
      Matrix wk, wq, wv;
      decode_rowstack(p, wk, wq, wv);
      j["X"] = matrix_to_json(p.X);
      j["W_K"] = matrix_to_json(wk);
      j["W_Q"] = matrix_to_json(wq);
      j["W_V"] = matrix_to_json(wv);
      break;
    }
  }
  return j.dump(2);
}

PromptEncoding prompt_from_json(const std::string& text) {
  Json j = Json::parse(text);
  const std::string layout = j.at("layout").get<std::string>();
  if (layout == "def31")
    return encode_target_head(json_to_matrix(j.at("X")), json_to_matrix(j.at("W_K")),
                              json_to_matrix(j.at("W_Q")), json_to_matrix(j.at("W_V")));
  if (layout == "gd_input")
    return encode_gd_input(json_to_matrix(j.at("X")), json_to_matrix(j.at("y")),
                           json_to_matrix(j.at("w")));
  if (layout == "thm33_rowstack") {
    // Stored weights are padded to n rows; strip the recorded padding so the
    // re-encode reproduces the original.
    const int pad = j.contains("meta") ? j["meta"].value("pad_rows", 0) : 0;
    Matrix wk = json_to_matrix(j.at("W_K")), wq = json_to_matrix(j.at("W_Q")),
           wv = json_to_matrix(j.at("W_V"));
    const Eigen::Index keep = wk.rows() - pad;
    return encode_rowstack(json_to_matrix(j.at("X")), Matrix(wk.topRows(keep)),
                           Matrix(wq.topRows(keep)), Matrix(wv.topRows(keep)));
  }
  throw std::runtime_error("prompt_from_json: unknown layout " + layout);
}

void save_prompt(const PromptEncoding& p, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << prompt_to_json(p);
}

PromptEncoding load_prompt(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return prompt_from_json(os.str());
}

}  // namespace fwa
