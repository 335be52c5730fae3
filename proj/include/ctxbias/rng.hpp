#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace ctxbias {

// SplitMix64 output function over an incrementing state. All randomness in
// the project flows from one user-supplied 64-bit seed through derived
// streams (see Rng::split); streams are never shared between consumers.
inline uint64_t splitmix64_next(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), state_(seed) {}

  uint64_t next_u64() { return splitmix64_next(state_); }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). n must be > 0.
  uint64_t next_below(uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller (both values consumed per pair).
  double next_gaussian() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  bool next_bernoulli(double p) { return next_double() < p; }

  // Derives an independent stream keyed by (label, index) off the seed this
  // Rng was constructed with. Splitting does not consume state.
  Rng split(std::string_view label, uint64_t index = 0) const {
    uint64_t s = seed_;
    s ^= fnv1a64(label) + 0x9e3779b97f4a7c15ULL;
    uint64_t tmp = s;
    splitmix64_next(tmp);
    s = tmp ^ (index * 0xbf58476d1ce4e5b9ULL + 0x94d049bb133111ebULL);
    splitmix64_next(s);
    return Rng(s);
  }

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace ctxbias
