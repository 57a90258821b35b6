#include "mllm/rng.hpp"

#include <cmath>

namespace mllm {

uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Rng::Rng(uint64_t seed) : seed_(seed) {
  uint64_t st = seed;
  // Warm the engine with a splitmix-expanded seed so that nearby seeds do
  // not produce correlated initial states.
  engine_.seed(splitmix64(st));
}

uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal(double mean, double stddev) {
  // u1 in (0,1] so the log is finite.
  double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  double r = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * r * std::cos(6.283185307179586476925286766559 * u2);
}

bool Rng::bernoulli(double p_true) { return uniform() < p_true; }

Rng Rng::fork(std::string_view tag) const {
  uint64_t st = seed_ ^ 0x6a09e667f3bcc908ULL;
  uint64_t mixed = splitmix64(st) ^ fnv1a(tag);
  return Rng(splitmix64(mixed));
}

}  // namespace mllm
