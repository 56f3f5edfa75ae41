#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fwa/linalg.hpp"

// Softmax attention layers: out = W_V Z Softmax_beta((W_K Z)^T W_Q Z) W_O,
// summed over heads. Each head may carry a prepended token-wise linear map A
// (evaluated as Z = A X); folding A into the weights gives the same layer.
namespace fwa {

struct AttentionHead {
  Matrix W_K;  // d_h x d
  Matrix W_Q;  // d_h x d
  Matrix W_V;  // d_o x d
  std::optional<Matrix> W_O;               // n x n_o, identity when absent
  double beta = 1.0;                       // softmax temperature
  std::shared_ptr<const Matrix> prefix;    // optional prepended linear map
};

struct MultiHeadAttention {
  std::vector<AttentionHead> heads;
};

Matrix forward_head(const AttentionHead& h, const Matrix& X);

// Sum of per-head outputs, fixed left-to-right. Prefix products A*X are
// computed once per distinct prefix object.
Matrix forward_multi(const MultiHeadAttention& m, const Matrix& X);

// New head with W_K A, W_Q A, W_V A; forward(new, Z) == forward(h, A Z).
AttentionHead compose_linear_prefix(const AttentionHead& h, const Matrix& A);

// JSON layer format: {"beta": b, "heads": [{"W_K":..,"W_Q":..,"W_V":..,"W_O"?:..,"beta"?:..}]}
std::string layer_to_json(const MultiHeadAttention& m);
MultiHeadAttention layer_from_json(const std::string& text);
void save_layer(const MultiHeadAttention& m, const std::string& path);
MultiHeadAttention load_layer(const std::string& path);

// FNV-1a over the exact bytes of all weights (frozen-weights invariant).
std::uint64_t layer_checksum(const MultiHeadAttention& m);

}  // namespace fwa
