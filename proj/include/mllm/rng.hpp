#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mllm {

uint64_t splitmix64(uint64_t& state);

// FNV-1a over bytes; used to derive child RNG streams and config hashes.
uint64_t fnv1a(std::string_view s);

// Deterministic RNG. The engine is mt19937_64 (sequence pinned by the
// standard); uniform/normal/bernoulli are derived here rather than through
// std distributions so that draws are identical across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  // [0, 1)
  double uniform();
  double uniform(double lo, double hi);
  // Box-Muller; consumes exactly two draws per call.
  double normal(double mean, double stddev);
  bool bernoulli(double p_true);

  uint64_t seed() const { return seed_; }

  // Child stream keyed by (this stream's seed, tag). Independent of how many
  // draws the parent has made, so callers can fork in any order.
  Rng fork(std::string_view tag) const;

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace mllm
