#include "fwa/trainer.hpp"

#include <sstream>

#include "fwa/serialize.hpp"

namespace fwa {

namespace {

void hash_bytes(std::uint64_t& h, const void* data, std::size_t len) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
}

void hash_matrix(std::uint64_t& h, const Matrix& A) {
  const Eigen::Index r = A.rows(), c = A.cols();
  hash_bytes(h, &r, sizeof r);
  hash_bytes(h, &c, sizeof c);
  hash_bytes(h, A.data(), sizeof(double) * std::size_t(A.size()));
}

std::uint64_t checksum_over(const std::vector<ParamRef>& params) {
  std::uint64_t h = 1469598103934665603ull;
  for (const ParamRef& p : params) {
    hash_bytes(h, p.name.data(), p.name.size());
    hash_matrix(h, *p.value);
  }
  return h;
}

Matrix random_like(Rng& rng, Eigen::Index r, Eigen::Index c, double scale) {
  Matrix A(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) A(i, j) = scale * rng.gaussian();
  return A;
}

// dM for Sm = softmax_cols(M, beta): per column beta * Sm .* (dSm - <Sm,dSm>).
Matrix softmax_backward(const Matrix& Sm, const Matrix& dSm, double beta) {
  Matrix dM(Sm.rows(), Sm.cols());
  for (Eigen::Index c = 0; c < Sm.cols(); ++c) {
    const double dot = Sm.col(c).dot(dSm.col(c));
    dM.col(c) = beta * Sm.col(c).cwiseProduct(Matrix((dSm.col(c).array() - dot).matrix()));
  }
  return dM;
}

void check_plain_heads(const MultiHeadAttention& a) {
  if (a.heads.empty()) throw std::invalid_argument("trainer: model needs at least one head");
  for (const AttentionHead& h : a.heads)
    if (h.W_O || h.prefix)
      throw std::invalid_argument("trainer: heads with W_O or prefix are not trainable");
}

}  // namespace

Matrix TrainableModel::forward(const Matrix& X) const {
  check_plain_heads(attention);
  const Matrix P = matmul(input_linear, X);
  Matrix A = Matrix::Zero(attention.heads[0].W_V.rows(), P.cols());
  for (const AttentionHead& h : attention.heads) {
    const Matrix K = matmul(h.W_K, P), Q = matmul(h.W_Q, P), V = matmul(h.W_V, P);
    A += matmul(V, softmax_cols(matmul(K.transpose(), Q), h.beta));
  }
  return matmul(output_linear, A);
}

TrainableModel make_trainable(int d_in, int hidden, int d_v, int d_out, int heads,
                              Rng& rng, double scale) {
  if (d_in <= 0 || hidden <= 0 || d_v <= 0 || d_out <= 0 || heads <= 0)
    throw std::invalid_argument("make_trainable: all dimensions must be positive");
  TrainableModel m;
  m.input_linear = random_like(rng, hidden, d_in, scale);
  for (int h = 0; h < heads; ++h) {
    AttentionHead head;
    head.W_K = random_like(rng, hidden, hidden, scale);
    head.W_Q = random_like(rng, hidden, hidden, scale);
    head.W_V = random_like(rng, d_v, hidden, scale);
    head.beta = 1.0;
    m.attention.heads.push_back(std::move(head));
  }
  m.output_linear = random_like(rng, d_out, d_v, scale);
  return m;
}

std::vector<ParamRef> parameters(TrainableModel& m) {
  check_plain_heads(m.attention);
  std::vector<ParamRef> ps;
  ps.push_back({"input_linear", &m.input_linear});
  for (std::size_t h = 0; h < m.attention.heads.size(); ++h) {
    const std::string base = "head" + std::to_string(h) + ".";
    ps.push_back({base + "W_K", &m.attention.heads[h].W_K});
    ps.push_back({base + "W_Q", &m.attention.heads[h].W_Q});
    ps.push_back({base + "W_V", &m.attention.heads[h].W_V});
  }
  ps.push_back({"output_linear", &m.output_linear});
  return ps;
}

std::uint64_t model_checksum(const TrainableModel& m) {
  return checksum_over(parameters(const_cast<TrainableModel&>(m)));
}

std::uint64_t model_checksum(const SimFModel& m) {
  return checksum_over(parameters(const_cast<SimFModel&>(m)));
}

std::pair<double, TrainCache> forward_loss(const TrainableModel& m, const Matrix& X,
                                           const Matrix& Y) {
  check_plain_heads(m.attention);
  if (m.input_linear.cols() != X.rows())
    throw std::invalid_argument("forward_loss: input_linear does not accept X");
  if (m.output_linear.rows() != Y.rows() || X.cols() != Y.cols())
    throw std::invalid_argument("forward_loss: target shape mismatch");
  TrainCache c;
  c.X = X;
  c.Y = Y;
  c.P = matmul(m.input_linear, X);
  c.A = Matrix::Zero(m.attention.heads[0].W_V.rows(), c.P.cols());
  for (const AttentionHead& h : m.attention.heads) {
    c.K.push_back(matmul(h.W_K, c.P));
    c.Q.push_back(matmul(h.W_Q, c.P));
    c.V.push_back(matmul(h.W_V, c.P));
    c.Sm.push_back(softmax_cols(matmul(c.K.back().transpose(), c.Q.back()), h.beta));
    c.A += matmul(c.V.back(), c.Sm.back());
  }
  c.pred = matmul(m.output_linear, c.A);
  c.loss = (c.pred - Y).squaredNorm() / double(c.pred.size());
  c.stamp = model_checksum(m);
  return {c.loss, std::move(c)};
}

std::vector<Matrix> backward(const TrainableModel& m, const TrainCache& cache) {
  if (cache.stamp != model_checksum(m))
    throw std::logic_error("backward: stale cache (model changed since forward)");
  const double inv = 2.0 / double(cache.pred.size());
  const Matrix G = inv * (cache.pred - cache.Y);
  const Matrix dOut = matmul(G, Matrix(cache.A.transpose()));
  const Matrix dA = matmul(Matrix(m.output_linear.transpose()), G);
  Matrix dP = Matrix::Zero(cache.P.rows(), cache.P.cols());

  std::vector<Matrix> head_grads;
  for (std::size_t h = 0; h < m.attention.heads.size(); ++h) {
    const AttentionHead& hd = m.attention.heads[h];
    const Matrix dV = matmul(dA, Matrix(cache.Sm[h].transpose()));
    const Matrix dSm = matmul(Matrix(cache.V[h].transpose()), dA);
    const Matrix dM = softmax_backward(cache.Sm[h], dSm, hd.beta);
    const Matrix dK = matmul(cache.Q[h], Matrix(dM.transpose()));
    const Matrix dQ = matmul(cache.K[h], dM);
    head_grads.push_back(matmul(dK, Matrix(cache.P.transpose())));
    head_grads.push_back(matmul(dQ, Matrix(cache.P.transpose())));
    head_grads.push_back(matmul(dV, Matrix(cache.P.transpose())));
    dP += matmul(Matrix(hd.W_K.transpose()), dK) + matmul(Matrix(hd.W_Q.transpose()), dQ) +
          matmul(Matrix(hd.W_V.transpose()), dV);
  }

  std::vector<Matrix> grads;
  grads.push_back(matmul(dP, Matrix(cache.X.transpose())));
  for (Matrix& g : head_grads) grads.push_back(std::move(g));
  grads.push_back(dOut);
  return grads;
}

Matrix SimFModel::forward(const Matrix& X) const {
  return forward_loss(*this, X, Matrix::Zero(d, X.cols())).second.pred;
}

SimFModel make_sim_f(int d, int slots, double U, double sharp, Rng& rng, double noise) {
  if (d <= 0 || slots < 2 || !(U > 0.0) || !(sharp > 0.0))
    throw std::invalid_argument("make_sim_f: need d > 0, slots >= 2, U > 0, sharp > 0");
  SimFModel m;
  m.d = d;
  m.g = Matrix(slots, 1);
  for (int j = 0; j < slots; ++j) m.g(j, 0) = -U + 2.0 * U * j / double(slots - 1);
  m.a = random_like(rng, slots, 1, noise);
  m.K1 = random_like(rng, d + 2, d + 1, noise);
  m.K1.block(0, 0, d, d) += 2.0 * sharp * Matrix::Identity(d, d);
  m.K1(d, d) += -2.0 * sharp;
  m.Q = random_like(rng, d + 2, d + 1, noise);
  m.Q.block(0, 0, d, d) += sharp * Matrix::Identity(d, d);
  m.Q(d, d) += sharp;
  m.Q(d + 1, d) += sharp;
  m.k2 = random_like(rng, d + 2, 1, noise);
  m.k2(d + 1, 0) += -sharp;
  return m;
}

std::vector<ParamRef> parameters(SimFModel& m) {
  return {{"g", &m.g}, {"a", &m.a}, {"K1", &m.K1}, {"k2", &m.k2}, {"Q", &m.Q}};
}

std::pair<double, SimFCache> forward_loss(const SimFModel& m, const Matrix& X,
                                          const Matrix& Y) {
  const int d = m.d;
  if (X.rows() != 2 * d + 1)
    throw std::invalid_argument("forward_loss: SimF input must stack [x; w; y]");
  if (Y.rows() != d || Y.cols() != X.cols())
    throw std::invalid_argument("forward_loss: SimF target must be d x n");
  const Eigen::Index n = X.cols();
  SimFCache c;
  c.X = X;
  c.Y = Y;
  c.xs = X.topRows(d);
  c.T = Matrix(d + 1, n);
  c.T.topRows(d) = c.xs;
  c.T.row(d) = X.row(2 * d);
  c.S = Matrix(d + 1, n);
  c.S.topRows(d) = X.middleRows(d, d);
  c.S.row(d).setOnes();
  c.Qs = matmul(m.Q, c.S);
  c.KT = matmul(m.K1, c.T);
  c.Arow = c.KT.cwiseProduct(c.Qs).colwise().sum();
  c.Brow = matmul(Matrix(m.k2.transpose()), c.Qs);
  const Matrix g2 = m.g.cwiseProduct(m.g);
  c.P = softmax_cols(matmul(m.g, c.Arow) + matmul(g2, c.Brow), 1.0);
  c.h = matmul(Matrix(m.a.transpose()), c.P);
  c.pred = c.xs.cwiseProduct(c.h.replicate(d, 1));
  c.loss = (c.pred - Y).squaredNorm() / double(c.pred.size());
  c.stamp = model_checksum(m);
  return {c.loss, std::move(c)};
}

std::vector<Matrix> backward(const SimFModel& m, const SimFCache& cache) {
  if (cache.stamp != model_checksum(m))
    throw std::logic_error("backward: stale cache (model changed since forward)");
  const double inv = 2.0 / double(cache.pred.size());
  const Matrix R = cache.pred - cache.Y;
  const Matrix e = inv * R.cwiseProduct(cache.xs).colwise().sum();  // 1 x n
  const Matrix da = matmul(cache.P, Matrix(e.transpose()));
  const Matrix dPmat = matmul(m.a, e);
  const Matrix dScore = softmax_backward(cache.P, dPmat, 1.0);
  const Matrix g2 = m.g.cwiseProduct(m.g);
  const Matrix dg = matmul(dScore, Matrix(cache.Arow.transpose())) +
                    2.0 * m.g.cwiseProduct(matmul(dScore, Matrix(cache.Brow.transpose())));
  const Matrix dArow = matmul(Matrix(m.g.transpose()), dScore);  // 1 x n
  const Matrix dBrow = matmul(Matrix(g2.transpose()), dScore);   // 1 x n
  const Matrix dKT = cache.Qs.cwiseProduct(dArow.replicate(cache.Qs.rows(), 1));
  Matrix dQs = cache.KT.cwiseProduct(dArow.replicate(cache.KT.rows(), 1));
  dQs += matmul(m.k2, dBrow);
  const Matrix dk2 = matmul(cache.Qs, Matrix(dBrow.transpose()));
  const Matrix dK1 = matmul(dKT, Matrix(cache.T.transpose()));
  const Matrix dQ = matmul(dQs, Matrix(cache.S.transpose()));
  return {dg, da, dK1, dk2, dQ};
}

void adam_step(std::vector<ParamRef>& params, const std::vector<Matrix>& grads,
               AdamState& state, const TrainConfig& cfg,
               const std::vector<char>& update_mask) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      update_mask.size() != params.size())
    throw std::invalid_argument("adam_step: registry size mismatch");
  state.t += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!update_mask[i]) continue;
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i].cwiseProduct(grads[i]);
    const Matrix mhat = state.m[i] / c1;
    const Matrix vhat = state.v[i] / c2;
    *params[i].value -=
        cfg.lr * mhat.cwiseQuotient(Matrix((vhat.cwiseSqrt().array() + cfg.eps).matrix()));
  }
}

FrozenModel freeze(const TrainableModel& m) {
  FrozenModel f;
  f.model = std::make_shared<const TrainableModel>(m);
  f.checksum = model_checksum(m);
  return f;
}

static Json adam_to_json(const AdamState& s) {
  Json j;
  j["t"] = s.t;
  j["m"] = Json::array();
  j["v"] = Json::array();
  for (const Matrix& M : s.m) j["m"].push_back(matrix_to_json(M));
  for (const Matrix& M : s.v) j["v"].push_back(matrix_to_json(M));
  return j;
}

std::string model_to_json(const TrainableModel& m, const AdamState* opt) {
  Json j;
  j["kind"] = "trainable";
  j["input_linear"] = matrix_to_json(m.input_linear);
  j["attention"] = Json::parse(layer_to_json(m.attention));
  j["output_linear"] = matrix_to_json(m.output_linear);
  if (opt) j["optimizer"] = adam_to_json(*opt);
  return j.dump(2);
}

TrainableModel model_from_json(const std::string& text, AdamState* opt) {
  const Json j = Json::parse(text);
  if (j.value("kind", "") != "trainable")
    throw std::invalid_argument("model_from_json: kind must be trainable");
  TrainableModel m;
  m.input_linear = json_to_matrix(j.at("input_linear"));
  m.attention = layer_from_json(j.at("attention").dump());
  m.output_linear = json_to_matrix(j.at("output_linear"));
  if (opt && j.contains("optimizer")) {
    opt->t = j["optimizer"].at("t").get<long>();
    opt->m.clear();
    opt->v.clear();
    for (const Json& e : j["optimizer"].at("m")) opt->m.push_back(json_to_matrix(e));
    for (const Json& e : j["optimizer"].at("v")) opt->v.push_back(json_to_matrix(e));
  }
  return m;
}

std::string sim_f_to_json(const SimFModel& m) {
  Json j;
  j["kind"] = "sim_f";
  j["d"] = m.d;
  j["g"] = matrix_to_json(m.g);
  j["a"] = matrix_to_json(m.a);
  j["K1"] = matrix_to_json(m.K1);
  j["k2"] = matrix_to_json(m.k2);
  j["Q"] = matrix_to_json(m.Q);
  return j.dump(2);
}

SimFModel sim_f_from_json(const std::string& text) {
  const Json j = Json::parse(text);
  if (j.value("kind", "") != "sim_f")
    throw std::invalid_argument("sim_f_from_json: kind must be sim_f");
  SimFModel m;
  m.d = j.at("d").get<int>();
  m.g = json_to_matrix(j.at("g"));
  m.a = json_to_matrix(j.at("a"));
  m.K1 = json_to_matrix(j.at("K1"));
  m.k2 = json_to_matrix(j.at("k2"));
  m.Q = json_to_matrix(j.at("Q"));
  return m;
}

std::string loss_history_csv(const TrainResult& r) {
  std::ostringstream out;
  out << "epoch,train_mse,test_mse\n";
  for (std::size_t e = 0; e < r.train_mse.size(); ++e)
    out << e << ',' << format_double(r.train_mse[e]) << ','
        << format_double(e < r.test_mse.size() ? r.test_mse[e] : r.train_mse[e]) << '\n';
  return out.str();
}

}  // namespace fwa
