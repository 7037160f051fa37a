#include "m2at/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace m2at {

namespace {

inline std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t combine(std::uint64_t h, std::uint64_t k) {
  return splitmix64_mix(h + 0x9e3779b97f4a7c15ull + k);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), state_(splitmix64_mix(seed)) {}

Rng Rng::substream(std::uint64_t a) const { return Rng(combine(seed_, a)); }

Rng Rng::substream(std::uint64_t a, std::uint64_t b) const {
  return Rng(combine(combine(seed_, a), b));
}

Rng Rng::substream(std::uint64_t a, std::uint64_t b, std::uint64_t c) const {
  return Rng(combine(combine(combine(seed_, a), b), c));
}

std::uint64_t Rng::next_u64() {
  state_ += 0x9e3779b97f4a7c15ull;
  return splitmix64_mix(state_);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t Rng::uniform_int(std::uint64_t bound) {
  const std::uint64_t n = bound + 1;
  if (n == 0) return next_u64();  // bound == 2^64-1
  const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
  for (;;) {
    const std::uint64_t r = next_u64();
    if (r >= threshold) return r % n;
  }
}

double Rng::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  // Box-Muller; 1 - uniform() keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  cached_normal_ = r * std::sin(theta);
  has_cached_normal_ = true;
  return r * std::cos(theta);
}

double Rng::gamma(double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("gamma: alpha must be > 0");
  if (alpha < 1.0) {
    const double u = 1.0 - uniform();  // (0, 1]
    return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
  }
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
      return d * v;
  }
}

double Rng::beta_symmetric(double alpha) {
  if (!(alpha > 0.0))
    throw std::invalid_argument("beta_symmetric: alpha must be > 0");
  if (alpha == 1.0) return uniform();
  double x = 0.0;
  double y = 0.0;
  do {
    x = gamma(alpha);
    y = gamma(alpha);
  } while (x + y == 0.0);
  return x / (x + y);
}

}  // namespace m2at
