#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <vector>

namespace tdc {

// Deterministic random source. Distributions are derived from raw engine
// draws only (no libstdc++ distribution objects), so a given seed produces
// the same stream on every build of this library on the same platform and
// the engine state can be serialized with operator<<.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller. Two engine draws per sample; no state
  // cached between calls.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    u1 = std::max(u1, 1e-300);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // [0, n)
  int64_t randint(int64_t n) {
    return static_cast<int64_t>(eng_() % static_cast<uint64_t>(n));
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(randint(static_cast<int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string save_state() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }

  void load_state(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
  }

  // splitmix64 finalizer; used to derive independent child seeds.
  static uint64_t mix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  static uint64_t mix(uint64_t a, uint64_t b) { return mix(mix(a) ^ b); }

 private:
  std::mt19937_64 eng_;
};

}  // namespace tdc
