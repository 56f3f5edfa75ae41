#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fwa/attention.hpp"
#include "fwa/rng.hpp"

// Reverse-mode-differentiated training of single-layer multi-head attention
// with linear connections, plus the slot-expanded single-head model used for
// the scalar-map experiment. Optimizer is Adam; all gradients are manual and
// validated by finite differences.
namespace fwa {

struct ParamRef {
  std::string name;
  Matrix* value;
};

// pred = output_linear * sum_h W_V P softmax((W_K P)^T W_Q P) with
// P = input_linear * X. Head betas stay at 1: any temperature is absorbed
// into the trainable key/query scales.
struct TrainableModel {
  Matrix input_linear;   // hidden x d_in
  MultiHeadAttention attention;
  Matrix output_linear;  // d_out x d_v

  Matrix forward(const Matrix& X) const;
};

TrainableModel make_trainable(int d_in, int hidden, int d_v, int d_out, int heads,
                              Rng& rng, double scale = 0.1);

// Registry with stable ordering: input_linear, head{h}.{W_K,W_Q,W_V}, output_linear.
std::vector<ParamRef> parameters(TrainableModel& m);

struct TrainCache {
  Matrix X, Y, P, A, pred;
  std::vector<Matrix> K, Q, V, Sm;
  double loss = 0.0;
  std::uint64_t stamp = 0;  // model checksum at forward time
};

// MSE over all output entries plus the intermediates backward needs.
std::pair<double, TrainCache> forward_loss(const TrainableModel& m, const Matrix& X,
                                           const Matrix& Y);

// Gradients aligned with parameters(m); throws std::logic_error on a stale cache.
std::vector<Matrix> backward(const TrainableModel& m, const TrainCache& cache);

// Slot-expanded single-head model for labels f(w^T x - y) x. One input column
// is [x; w; y]; slot j scores g_j (K1 [x;y])^T Q [w;1] + g_j^2 k2^T Q [w;1],
// and the prediction is (a^T softmax) x. Slot scalars g and value scales a
// are trained alongside the key/query maps.
struct SimFModel {
  int d = 0;
  Matrix g, a;  // P x 1 slot scalars / value scales
  Matrix K1;    // (d+2) x (d+1)
  Matrix k2;    // (d+2) x 1
  Matrix Q;     // (d+2) x (d+1)

  Matrix forward(const Matrix& X) const;  // X is (2d+1) x n, output d x n
};

// Construction-shaped init: slot grid uniform on [-U, U], key/query maps at
// the selector values scaled by sharp (effective temperature sharp^2), value
// scales near zero; everything jittered by noise * N(0,1).
SimFModel make_sim_f(int d, int slots, double U, double sharp, Rng& rng,
                     double noise = 0.01);

std::vector<ParamRef> parameters(SimFModel& m);

struct SimFCache {
  Matrix X, Y, xs, T, S, Qs, KT, Arow, Brow, P, h, pred;
  double loss = 0.0;
  std::uint64_t stamp = 0;
};

std::pair<double, SimFCache> forward_loss(const SimFModel& m, const Matrix& X,
                                          const Matrix& Y);
std::vector<Matrix> backward(const SimFModel& m, const SimFCache& cache);

std::uint64_t model_checksum(const TrainableModel& m);
std::uint64_t model_checksum(const SimFModel& m);

struct Dataset {
  std::vector<Matrix> X, Y;  // per-sample input/target pairs
};

struct TrainConfig {
  double lr = 0.001;
  int batch = 32;
  int epochs = 50;
  std::uint64_t seed = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<std::string> freeze;  // name prefixes excluded from updates
};

struct TrainResult {
  std::vector<double> train_mse, test_mse;  // per epoch (test echoes train when absent)
};

struct AdamState {
  std::vector<Matrix> m, v;
  long t = 0;
};

// One bias-corrected Adam update; frozen entries (mask 0) keep value and moments.
void adam_step(std::vector<ParamRef>& params, const std::vector<Matrix>& grads,
               AdamState& state, const TrainConfig& cfg,
               const std::vector<char>& update_mask);

namespace detail {
inline void check_train_args(const Dataset& tr, const TrainConfig& cfg) {
  if (tr.X.empty() || tr.X.size() != tr.Y.size())
    throw std::invalid_argument("train: dataset empty or X/Y size mismatch");
  if (!(cfg.lr >= 0.0) || cfg.batch <= 0 || cfg.epochs < 0)
    throw std::invalid_argument("train: lr must be >= 0, batch > 0, epochs >= 0");
}
}  // namespace detail

template <class ModelT>
double dataset_mse(const ModelT& model, const Dataset& ds) {
  double total = 0.0;
  for (std::size_t i = 0; i < ds.X.size(); ++i) {
    const Matrix r = model.forward(ds.X[i]) - ds.Y[i];
    total += r.squaredNorm() / double(r.size());
  }
  return ds.X.empty() ? 0.0 : total / double(ds.X.size());
}

// Deterministic in (model, dataset, config): single-threaded, pinned matmul,
// shuffling from the seeded substream. Divergence (non-finite loss) throws
// with the epoch index.
template <class ModelT>
TrainResult train(ModelT& model, const Dataset& tr, const Dataset& te,
                  const TrainConfig& cfg) {
  detail::check_train_args(tr, cfg);
  std::vector<ParamRef> params = parameters(model);
  std::vector<char> mask(params.size(), 1);
  for (std::size_t i = 0; i < params.size(); ++i)
    for (const std::string& pre : cfg.freeze)
      if (params[i].name.rfind(pre, 0) == 0) mask[i] = 0;

  AdamState state;
  for (const ParamRef& p : params) {
    state.m.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
    state.v.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
  }

  Rng rng(cfg.seed, "train-shuffle");
  std::vector<std::size_t> order(tr.X.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult res;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch)) {
      const std::size_t stop = std::min(order.size(), start + std::size_t(cfg.batch));
      std::vector<Matrix> grads;
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t i = order[k];
        auto [loss, cache] = forward_loss(model, tr.X[i], tr.Y[i]);
        (void)loss;
        std::vector<Matrix> g = backward(model, cache);
        if (grads.empty())
          grads = std::move(g);
        else
          for (std::size_t j = 0; j < grads.size(); ++j) grads[j] += g[j];
      }
      const double inv = 1.0 / double(stop - start);
      for (Matrix& g : grads) g *= inv;
      adam_step(params, grads, state, cfg, mask);
    }
    const double trm = dataset_mse(model, tr);
    if (!std::isfinite(trm))
      throw std::runtime_error("train: diverged (non-finite loss) at epoch " +
                               std::to_string(epoch));
    res.train_mse.push_back(trm);
    res.test_mse.push_back(te.X.empty() ? trm : dataset_mse(model, te));
  }
  return res;
}

// Max relative central-difference error over every parameter entry; entries
// where both gradients are below 1e-8 in magnitude count as exact.
template <class ModelT>
double max_gradcheck_rel_error(ModelT& model, const Matrix& X, const Matrix& Y,
                               double h = 1e-5) {
  std::vector<ParamRef> params = parameters(model);
  auto [loss0, cache] = forward_loss(model, X, Y);
  (void)loss0;
  const std::vector<Matrix> grads = backward(model, cache);
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& W = *params[p].value;
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c) {
        const double keep = W(r, c);
        W(r, c) = keep + h;
        const double lp = forward_loss(model, X, Y).first;
        W(r, c) = keep - h;
        const double lm = forward_loss(model, X, Y).first;
        W(r, c) = keep;
        const double fd = (lp - lm) / (2.0 * h);
        const double an = grads[p](r, c);
        const double denom = std::max(std::abs(fd), std::abs(an));
        if (denom < 1e-8) continue;
        worst = std::max(worst, std::abs(fd - an) / denom);
      }
  }
  return worst;
}

// Evaluation-only handle over a copied model; the checksum certifies the
// frozen-weights invariant.
struct FrozenModel {
  std::shared_ptr<const TrainableModel> model;
  std::uint64_t checksum = 0;

  Matrix forward(const Matrix& X) const { return model->forward(X); }
};

FrozenModel freeze(const TrainableModel& m);

// Checkpoint: the attention-kernel layer format nested under "attention",
// plus the linear maps and optional optimizer state.
std::string model_to_json(const TrainableModel& m, const AdamState* opt = nullptr);
TrainableModel model_from_json(const std::string& text, AdamState* opt = nullptr);
std::string sim_f_to_json(const SimFModel& m);
SimFModel sim_f_from_json(const std::string& text);

// CSV loss history: "epoch,train_mse,test_mse".
std::string loss_history_csv(const TrainResult& r);

}  // namespace fwa
