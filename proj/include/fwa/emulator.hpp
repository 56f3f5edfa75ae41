#pragma once

#include <string>
#include <vector>

#include "fwa/grid.hpp"
#include "fwa/prompt.hpp"

// Frozen two-layer emulators: a grid first layer reconstructing [K'; Q'; V']
// from the prompt, then a fixed selector readout head. The weights never
// depend on the packed target, only on the planned bounds.
namespace fwa {

struct InterpolationPlan {
  double eps = 0.0;          // requested output tolerance
  double eps0 = 0.0;         // intermediate-stack budget
  double eps1 = 0.0;         // softmax-perturbation budget
  double B_KQV = 0.0;        // measured bound on K, Q, V, K^T Q entries
  double B_entry = 0.0;      // max |entry| of prompt data/weights (slot-count bound)
  double a = 0.0, b = 0.0;   // planned inner-product range
  double beta = 0.0;
  long H = 0;                // heads per hidden row per group (token-dim build)
  long P = 0;                // grid interval count
};

struct EmulationReport {
  std::string algorithm;
  double measured_error = 0.0;
  double theoretical_budget = 0.0;  // eps0 + n * B_KQV * eps1
  double beta = 0.0;
  long P = 0, H = 0, N = 0;         // N: first-layer heads per group
  double runtime_seconds = 0.0;
};

struct FrozenEmulator {
  std::string construction;  // "thm32" or "thm33"
  Eigen::Index d = 0, n = 0, d_h = 0, d_o = 0;
  InterpolationPlan plan;

  // thm32: shared scalar evaluation plan (w_s placeholder; the coefficient
  // rows are read from each prompt at forward time).
  TruncatedLinearApproximator proto;

  // thm33: slot grid and its temperature.
  InterpolationGrid grid33;
  double beta33 = 0.0;

  AttentionHead readout;  // fixed block selectors, beta 1

  // Intermediate stack [K'; Q'; V'] (rows d_h, d_h, d_o; thm33: n, n, n).
  Matrix first_layer(const PromptEncoding& prompt) const;
  Matrix forward(const PromptEncoding& prompt) const;

  // Windowed scalar core of the thm33 slot softmax.
  double forward_scalar33(double u) const;

  // Explicit first-layer heads acting on prompt.full() (thm32, small cases).
  MultiHeadAttention materialize_first_layer(const PromptEncoding& prompt) const;
};

// Budget chain eps -> eps1 -> eps0 plus grid geometry for the token-dimension
// construction. Throws domain_error with the smallest achievable eps when the
// request is infeasible under the precision guard.
InterpolationPlan plan_parameters(double eps, double a, double b, Eigen::Index d,
                                  Eigen::Index n, Eigen::Index d_h, double B_KQV);

// Max |entry| over K, Q, V and K^T Q computed from the packed target.
double measure_B_KQV(const PromptEncoding& prompt);

// Direct oracle: W_V X Softmax((W_K X)^T W_Q X) with the prompt's weights.
Matrix target_attention_forward(const PromptEncoding& prompt);

FrozenEmulator build_thm32(const PromptEncoding& prompt, double eps);
FrozenEmulator build_thm33(const PromptEncoding& prompt, double eps);

EmulationReport measure_emulation(const FrozenEmulator& em, const PromptEncoding& prompt,
                                  const Matrix& target_out);

// Reference (unwindowed) thm33 pieces, for validating the fast path.
Matrix linear33(const PromptEncoding& prompt, const InterpolationGrid& grid, int g, int j);
AttentionHead head33(const FrozenEmulator& em, int g, int j);
Matrix first_layer_reference33(const FrozenEmulator& em, const PromptEncoding& prompt);

struct AlgorithmSpec {
  std::string name;
  Matrix W_K, W_Q, W_V;             // target_head payload
  std::string kind = "target_head"; // f_map|gd_step|gd_multi|linear_reg|ridge_reg|lasso_oracle|target_head
  double eta = 0.0, lambda = 0.0;
  long steps = 0;
  std::string f;                    // named scalar handle
};

// One emulator planned over the library-wide worst-case bounds.
FrozenEmulator build_for_library(const std::vector<AlgorithmSpec>& library,
                                 const Matrix& X, double eps);

// Evaluates every library member with the same frozen weights; throws if the
// weights change (checksum) or a member's range needs replanning.
std::vector<EmulationReport> swap_algorithm(const FrozenEmulator& em,
                                            const std::vector<AlgorithmSpec>& library,
                                            const Matrix& X);

std::uint64_t emulator_checksum(const FrozenEmulator& em);

std::string report_to_json(const EmulationReport& r, const InterpolationPlan& plan);

}  // namespace fwa
