#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "msnmt/numerics.hpp"

namespace msnmt {

// Mixes a run seed with a named stream and up to two counters so that each
// consumer (init, dropout, shuffle, synth) draws from an independent,
// individually reproducible sequence.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t a = 0,
                          std::uint64_t b = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::string_view stream, std::uint64_t a = 0, std::uint64_t b = 0)
      : engine_(derive_seed(seed, stream, a, b)) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  Real uniform() { return static_cast<Real>(engine_() >> 11) * 0x1.0p-53; }
  Real uniform(Real lo, Real hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::size_t below(std::size_t n);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace msnmt
