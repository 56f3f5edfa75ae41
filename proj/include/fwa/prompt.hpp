#pragma once

#include <string>

#include "fwa/linalg.hpp"

// Prompt encodings: the target algorithm's parameters packed into input
// tokens, plus exact decoders (the encoders are injective).
namespace fwa {

enum class PromptLayout { def31, gd_input, thm33_rowstack };

struct PromptEncoding {
  PromptLayout layout = PromptLayout::def31;
  Matrix X;  // data block: d x n (def31/rowstack) or (d+1) x n with y appended (gd_input)
  Matrix W;  // weight block, layout-specific
  bool position = false;  // I_n appended by full()

  // Dims of the packed target.
  Eigen::Index d = 0, n = 0, d_h = 0, d_o = 0;
  int pad_rows = 0;  // zero rows added to reach n x d weights (rowstack)

  // Measured range of the inner products the downstream grids must cover,
  // inflated by a 5% margin.
  double bound_a = -1.0, bound_b = 1.0;

  Matrix full() const;  // the stacked prompt matrix
};

// X_p = [X; W; I_n]; W = [0*w .. (n-1)*w; w .. w], w = [vec(W_K); vec(W_Q); vec(W_V)].
PromptEncoding encode_target_head(const Matrix& X, const Matrix& W_K,
                                  const Matrix& W_Q, const Matrix& W_V);
void decode_target_head(const PromptEncoding& p, Matrix& W_K, Matrix& W_Q, Matrix& W_V);

// Z = [X; y; w .. w].
PromptEncoding encode_gd_input(const Matrix& X, const Matrix& y, const Matrix& w);
void decode_gd_input(const PromptEncoding& p, Matrix& X, Matrix& y, Matrix& w);

// [X; W_K^T; W_Q^T; W_V^T] with weights padded by zero rows to n x d.
PromptEncoding encode_rowstack(const Matrix& X, const Matrix& W_K,
                               const Matrix& W_Q, const Matrix& W_V);
void decode_rowstack(const PromptEncoding& p, Matrix& W_K, Matrix& W_Q, Matrix& W_V);

std::string prompt_to_json(const PromptEncoding& p);
PromptEncoding prompt_from_json(const std::string& text);
void save_prompt(const PromptEncoding& p, const std::string& path);
PromptEncoding load_prompt(const std::string& path);

}  // namespace fwa
