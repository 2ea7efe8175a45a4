#pragma once

#include <cstdint>
#include <random>

namespace semtwin {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and up to three tags.
// Used to give every rollout / slot / token its own deterministic stream so
// paired-seed comparisons stay paired when a branch consumes fewer draws.
inline uint64_t mix_seed(uint64_t base, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  uint64_t s = splitmix64(base ^ splitmix64(a));
  s = splitmix64(s ^ splitmix64(b + 0x517cc1b727220a95ULL));
  return splitmix64(s ^ splitmix64(c + 0x2545f4914f6cdd1dULL));
}

class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : gen_(splitmix64(seed)) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen_); }
  // index in [0, n)
  int uniform_int(int n) { return std::uniform_int_distribution<int>(0, n - 1)(gen_); }
  bool bernoulli(double p) { return std::bernoulli_distribution(p)(gen_); }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace semtwin
