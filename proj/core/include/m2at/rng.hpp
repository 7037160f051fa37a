#pragma once

#include <cstdint>

namespace m2at {

// Deterministic splitmix64-based generator with cheap keyed substreams.
// A substream depends only on the parent's seed and the keys, never on how
// many draws the parent has made, so per-sample streams derived from
// (seed, epoch, sample-index) give identical results no matter how a batch
// is scheduled across threads.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  Rng substream(std::uint64_t a) const;
  Rng substream(std::uint64_t a, std::uint64_t b) const;
  Rng substream(std::uint64_t a, std::uint64_t b, std::uint64_t c) const;

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();

  // [0, 1), 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);

  // Integer uniform on {0, ..., bound} inclusive, rejection-sampled (no
  // modulo bias).
  std::uint64_t uniform_int(std::uint64_t bound);

  double normal();

  // Gamma(alpha, 1), Marsaglia-Tsang squeeze for alpha >= 1 with the usual
  // boost for alpha < 1.
  double gamma(double alpha);

  // Beta(alpha, alpha) by the ratio-of-gammas construction x/(x+y).
  // alpha == 1 is a single uniform draw, exactly U[0,1).
  double beta_symmetric(double alpha);

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace m2at
