#include "fwa/linalg.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fwa {

namespace {

[[noreturn]] void shape_error(const char* op, const Matrix& A, const Matrix& B) {
  std::ostringstream os;
  os << op << ": incompatible shapes " << A.rows() << "x" << A.cols()
     << " and " << B.rows() << "x" << B.cols();
  throw std::invalid_argument(os.str());
}

}  // namespace

void require_finite(const Matrix& A, const char* what) {
  if (!A.allFinite()) throw std::domain_error(std::string(what) + ": non-finite entry");
}

Matrix matmul(const Matrix& A, const Matrix& B) {
  if (A.cols() != B.rows()) shape_error("matmul", A, B);
  Matrix C = Matrix::Zero(A.rows(), B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index k = 0; k < A.cols(); ++k) {
      const double a = A(i, k);
      for (Eigen::Index j = 0; j < B.cols(); ++j) C(i, j) += a * B(k, j);
    }
  return C;
}

Matrix softmax_cols(const Matrix& S, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("softmax_cols: beta must be positive");
  require_finite(S, "softmax_cols");
  Matrix P(S.rows(), S.cols());
  for (Eigen::Index c = 0; c < S.cols(); ++c) {
    double m = S(0, c);
    for (Eigen::Index r = 1; r < S.rows(); ++r) m = std::max(m, S(r, c));
    double z = 0.0;
    for (Eigen::Index r = 0; r < S.rows(); ++r) {
      const double e = std::exp(beta * (S(r, c) - m));
      P(r, c) = e;
      z += e;
    }
    for (Eigen::Index r = 0; r < S.rows(); ++r) P(r, c) /= z;
  }
  return P;
}

double sup_norm(const Matrix& A) {
  return A.size() == 0 ? 0.0 : A.cwiseAbs().maxCoeff();
}

double sup_norm_diff(const Matrix& A, const Matrix& B) {
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("sup_norm_diff", A, B);
  return sup_norm(A - B);
}

Matrix vec(const Matrix& W) {
  Matrix v(W.size(), 1);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < W.rows(); ++i)
    for (Eigen::Index j = 0; j < W.cols(); ++j) v(k++, 0) = W(i, j);
  return v;
}

Matrix unvec(const Matrix& v, Eigen::Index rows, Eigen::Index cols) {
  if (v.cols() != 1 || v.rows() != rows * cols)
    throw std::invalid_argument("unvec: length does not match target shape");
  Matrix W(rows, cols);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) W(i, j) = v(k++, 0);
  return W;
}

Matrix one_hot(Eigen::Index j, Eigen::Index n) {
  if (j < 0 || j >= n) throw std::out_of_range("one_hot: index out of range");
  Matrix e = Matrix::Zero(n, 1);
  e(j, 0) = 1.0;
  return e;
}

Matrix stack_rows(const std::vector<Matrix>& blocks) {
  if (blocks.empty()) throw std::invalid_argument("stack_rows: no blocks");
  const Eigen::Index cols = blocks.front().cols();
  Eigen::Index rows = 0;
  for (const Matrix& b : blocks) {
    if (b.cols() != cols) shape_error("stack_rows", blocks.front(), b);
    rows += b.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Matrix& b : blocks) {
    out.middleRows(at, b.rows()) = b;
    at += b.rows();
  }
  return out;
}

std::string format_double(double x) {
  // Shortest decimal that parses back to the same bits.
  for (int prec = 1; prec <= 17; ++prec) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    if (back == x || (std::isnan(back) && std::isnan(x))) return buf;
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string to_csv(const Matrix& A) {
  std::ostringstream os;
  os << A.rows() << "," << A.cols() << "\n";
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      if (j) os << ",";
      os << format_double(A(i, j));
    }
    os << "\n";
  }
  return os.str();
}

Matrix from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("csv: empty input");
  Eigen::Index rows = 0, cols = 0;
  if (std::sscanf(line.c_str(), "%ld,%ld", &rows, &cols) != 2 || rows < 0 || cols < 0)
    throw std::runtime_error("csv: bad header record: " + line);
  Matrix A(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (!std::getline(is, line))
      throw std::runtime_error("csv: missing row " + std::to_string(i));
    const char* p = line.c_str();
    const char* end = p + line.size();
    for (Eigen::Index j = 0; j < cols; ++j) {
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc())
        throw std::runtime_error("csv: bad value at row " + std::to_string(i) +
                                 " col " + std::to_string(j));
      A(i, j) = v;
      p = next;
      if (j + 1 < cols) {
        if (p >= end || *p != ',')
          throw std::runtime_error("csv: expected ',' at row " + std::to_string(i));
        ++p;
      }
    }
  }
  return A;
}

void save_csv(const Matrix& A, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << to_csv(A);
}

Matrix load_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return from_csv(os.str());
}

}  // namespace fwa
