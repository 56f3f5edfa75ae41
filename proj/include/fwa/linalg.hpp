#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

// Dense double-precision building blocks. All token indices in this library
// are 0-based (the source material counts from 1).
namespace fwa {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Product with a pinned row-major accumulation order (bit-reproducible and
// equal to the naive triple loop to the last ulp).
Matrix matmul(const Matrix& A, const Matrix& B);

// Column-wise softmax of beta*S, stabilized by subtracting each column max
// before exponentiation.
Matrix softmax_cols(const Matrix& S, double beta = 1.0);

double sup_norm(const Matrix& A);
double sup_norm_diff(const Matrix& A, const Matrix& B);

// Row-major flatten to a column vector and its exact inverse.
Matrix vec(const Matrix& W);
Matrix unvec(const Matrix& v, Eigen::Index rows, Eigen::Index cols);

// Column vector e_j of length n (0-based j).
Matrix one_hot(Eigen::Index j, Eigen::Index n);

// Vertical concatenation; all blocks must share a column count.
Matrix stack_rows(const std::vector<Matrix>& blocks);

void require_finite(const Matrix& A, const char* what);

// Shortest decimal rendering that round-trips to the same double.
std::string format_double(double x);

// CSV matrix format: first record "rows,cols", then one record per row.
std::string to_csv(const Matrix& A);
Matrix from_csv(const std::string& text);
void save_csv(const Matrix& A, const std::string& path);
Matrix load_csv(const std::string& path);

}  // namespace fwa
