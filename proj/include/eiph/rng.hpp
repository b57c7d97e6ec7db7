#pragma once

#include <cstdint>

namespace eiph {

// Deterministic generator (xoshiro256**) with hand-rolled draws so that
// sequences are identical across platforms and standard libraries. Streams
// derived from (seed, stream) are independent enough for per-tile / per-trial
// use and do not depend on scheduling order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  static Rng derive(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64();

  // [0,1)
  double uniform();
  // uniform in [lo,hi)
  double uniform(double lo, double hi);
  // uniform integer in [0,n), n >= 1; unbiased
  std::uint64_t below(std::uint64_t n);
  // uniform integer in [lo,hi] inclusive
  std::int64_t range(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p);
  double normal(double mean = 0.0, double sigma = 1.0);
  // Knuth product method; fine for the small rates used here
  int poisson(double lambda);

 private:
  std::uint64_t s_[4];
};

}  // namespace eiph
