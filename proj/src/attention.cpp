#include "fwa/attention.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "fwa/serialize.hpp"

namespace fwa {

namespace {

void check_head(const AttentionHead& h, Eigen::Index d, Eigen::Index n) {
  auto bad = [&](const char* w, const Matrix& M) {
    std::ostringstream os;
    os << "forward_head: " << w << " has shape " << M.rows() << "x" << M.cols()
       << ", incompatible with input " << d << "x" << n;
    throw std::invalid_argument(os.str());
  };
  if (h.W_K.cols() != d) bad("W_K", h.W_K);
  if (h.W_Q.cols() != d) bad("W_Q", h.W_Q);
  if (h.W_K.rows() != h.W_Q.rows()) bad("W_Q (score dim mismatch with W_K)", h.W_Q);
  if (h.W_V.cols() != d) bad("W_V", h.W_V);
  if (h.W_O && h.W_O->rows() != n) bad("W_O", *h.W_O);
}

Matrix forward_on(const AttentionHead& h, const Matrix& Z) {
  check_head(h, Z.rows(), Z.cols());
  const Matrix K = matmul(h.W_K, Z);
  const Matrix Q = matmul(h.W_Q, Z);
  const Matrix S = softmax_cols(matmul(Matrix(K.transpose()), Q), h.beta);
  Matrix out = matmul(matmul(h.W_V, Z), S);
  if (h.W_O) out = matmul(out, *h.W_O);
  return out;
}

}  // namespace

Matrix forward_head(const AttentionHead& h, const Matrix& X) {
  if (h.prefix) return forward_on(h, matmul(*h.prefix, X));
  return forward_on(h, X);
}

Matrix forward_multi(const MultiHeadAttention& m, const Matrix& X) {
  if (m.heads.empty()) throw std::invalid_argument("forward_multi: no heads");
  std::unordered_map<const Matrix*, Matrix> cache;
  Matrix sum;
  bool first = true;
  for (const AttentionHead& h : m.heads) {
    Matrix out;
    if (h.prefix) {
      auto it = cache.find(h.prefix.get());
      if (it == cache.end())
        it = cache.emplace(h.prefix.get(), matmul(*h.prefix, X)).first;
      out = forward_on(h, it->second);
    } else {
      out = forward_on(h, X);
    }
    if (first) {
      sum = std::move(out);
      first = false;
    } else {
      if (sum.rows() != out.rows() || sum.cols() != out.cols())
        throw std::invalid_argument("forward_multi: incompatible head output shapes");
      sum += out;
    }
  }
  return sum;
}

AttentionHead compose_linear_prefix(const AttentionHead& h, const Matrix& A) {
  if (h.W_K.cols() != A.rows())
    throw std::invalid_argument("compose_linear_prefix: A rows != head input dim");
  AttentionHead g = h;
  g.W_K = matmul(h.W_K, A);
  g.W_Q = matmul(h.W_Q, A);
  g.W_V = matmul(h.W_V, A);
  return g;
}

std::string layer_to_json(const MultiHeadAttention& m) {
  Json j;
  j["beta"] = m.heads.empty() ? 1.0 : m.heads.front().beta;
  Json hs = Json::array();
  for (const AttentionHead& h : m.heads) {
    Json hj;
    hj["W_K"] = matrix_to_json(h.W_K);
    hj["W_Q"] = matrix_to_json(h.W_Q);
    hj["W_V"] = matrix_to_json(h.W_V);
    if (h.W_O) hj["W_O"] = matrix_to_json(*h.W_O);
    if (!m.heads.empty() && h.beta != m.heads.front().beta) hj["beta"] = h.beta;
    hs.push_back(std::move(hj));
  }
  j["heads"] = std::move(hs);
  return j.dump(2);
}

MultiHeadAttention layer_from_json(const std::string& text) {
  Json j = Json::parse(text);
  MultiHeadAttention m;
  const double beta = j.value("beta", 1.0);
  for (const Json& hj : j.at("heads")) {
    AttentionHead h;
    h.W_K = json_to_matrix(hj.at("W_K"));
    h.W_Q = json_to_matrix(hj.at("W_Q"));
    h.W_V = json_to_matrix(hj.at("W_V"));
    if (hj.contains("W_O")) h.W_O = json_to_matrix(hj.at("W_O"));
    h.beta = hj.value("beta", beta);
    m.heads.push_back(std::move(h));
  }
  return m;
}

void save_layer(const MultiHeadAttention& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << layer_to_json(m);
}

MultiHeadAttention load_layer(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return layer_from_json(os.str());
}

namespace {

void hash_bytes(std::uint64_t& h, const void* p, size_t n) {
  const unsigned char* b = static_cast<const unsigned char*>(p);
  for (size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 1099511628211ull;
  }
}

void hash_matrix(std::uint64_t& h, const Matrix& M) {
  const Eigen::Index r = M.rows(), c = M.cols();
  hash_bytes(h, &r, sizeof r);
  hash_bytes(h, &c, sizeof c);
  if (M.size()) hash_bytes(h, M.data(), sizeof(double) * size_t(M.size()));
}

}  // namespace

std::uint64_t layer_checksum(const MultiHeadAttention& m) {
  std::uint64_t h = 1469598103934665603ull;
  for (const AttentionHead& hd : m.heads) {
    hash_matrix(h, hd.W_K);
    hash_matrix(h, hd.W_Q);
    hash_matrix(h, hd.W_V);
    if (hd.W_O) hash_matrix(h, *hd.W_O);
    hash_bytes(h, &hd.beta, sizeof hd.beta);
    if (hd.prefix) hash_matrix(h, *hd.prefix);
  }
  return h;
}

}  // namespace fwa
