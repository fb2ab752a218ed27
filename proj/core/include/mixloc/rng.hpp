#pragma once

#include <cstdint>

namespace mixloc {

// splitmix64 stream. Used instead of <random> engines plus distributions so
// that every draw is bit-reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next();

  double uniform();                          // [0, 1)
  double uniform(double lo, double hi);
  double normal();                           // standard normal, Box-Muller
  double normal(double mu, double sigma) { return mu + sigma * normal(); }
  std::size_t index(std::size_t n);          // [0, n)

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Derives an independent stream seed from a base seed and a tag; used for
// per-example and per-split seeds so any example regenerates in isolation.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag);

}  // namespace mixloc
