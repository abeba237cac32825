#pragma once

#include <cstdint>
#include <random>

namespace lipread {

// Seeded generator with platform-independent distributions. The engine is
// std::mt19937_64 (fully specified by the standard); the mapping to uniform
// integers, reals and normals is done here because the std:: distributions
// are implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  // Independent stream for (seed, index), e.g. one per utterance or replicate.
  static Rng derive(uint64_t seed, uint64_t index);

  uint64_t next() { return engine_(); }
  double uniform();                 // [0, 1)
  double uniform(double lo, double hi);
  uint64_t uniform_int(uint64_t n);  // [0, n)
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

uint64_t mix_seed(uint64_t seed, uint64_t index);

}  // namespace lipread
