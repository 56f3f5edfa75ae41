#pragma once

#include <json.hpp>

#include "fwa/linalg.hpp"

namespace fwa {

using Json = nlohmann::json;

inline Json matrix_to_json(const Matrix& A) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < A.cols(); ++j) row.push_back(A(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix json_to_matrix(const Json& j) {
  if (!j.is_array() || j.empty()) return Matrix(0, 0);
  const Eigen::Index rows = Eigen::Index(j.size());
  const Eigen::Index cols = Eigen::Index(j[0].size());
  Matrix A(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (Eigen::Index(j[r].size()) != cols)
      throw std::runtime_error("json matrix: ragged rows");
    for (Eigen::Index c = 0; c < cols; ++c) A(r, c) = j[r][c].get<double>();
  }
  return A;
}

}  // namespace fwa
