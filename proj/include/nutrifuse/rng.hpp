#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace nf {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

// Seeded random stream. mt19937_64 output is pinned by the standard; the
// uniform/normal mappings below are ours, so sequences are stable across
// platforms and standard-library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed), seed_echo_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t uniform_int(uint64_t n) {
    // modulo bias is negligible for n << 2^64 and irrelevant for reproducibility
    return engine_() % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    // Box-Muller, one value per draw pair (simple and stable)
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // derived stream, independent of draws already taken from this one
  Rng child(uint64_t salt) const { return Rng(hash_combine(seed_echo_, salt)); }

  static Rng from_parts(uint64_t a, uint64_t b) { return Rng(hash_combine(a, b)); }
  static Rng from_parts(uint64_t a, uint64_t b, uint64_t c) {
    return Rng(hash_combine(hash_combine(a, b), c));
  }

 private:
  std::mt19937_64 engine_;
  uint64_t seed_echo_ = 0;
};

// Fisher-Yates; std::shuffle's draw pattern is implementation-defined, this
// one is pinned by Rng
template <typename T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.uniform_int(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace nf
