#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

// Seedable, splittable randomness: every consumer names a substream so
// parallel trials stay reproducible. Identity string goes into result
// metadata.
namespace fwa {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed, const std::string& stream = "root")
      : seed_(splitmix64(seed ^ splitmix64(fnv1a(stream)))), gen_(seed_) {}

  static std::string identity() { return "mt19937_64/splitmix64-substreams/box-muller"; }

  // Independent child stream; deterministic in (this stream's seed, name).
  Rng split(const std::string& stream) const { return Rng(seed_, stream); }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen_); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller from the uniform stream.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * M_PI * u2;
    spare_ = r * std::sin(th);
    have_spare_ = true;
    return r * std::cos(th);
  }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(gen_);
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::uint64_t seed_;
  mutable std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fwa
