#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "m2at/rng.hpp"

using namespace m2at;

namespace {

// Kolmogorov-Smirnov statistic against a closed-form CDF.
double ks_statistic(std::vector<double> xs, double (*cdf)(double)) {
  std::sort(xs.begin(), xs.end());
  const double n = double(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max(d, std::abs(f - double(i) / n));
    d = std::max(d, std::abs(f - double(i + 1) / n));
  }
  return d;
}

double uniform_cdf(double x) { return std::clamp(x, 0.0, 1.0); }

}  // namespace

TEST_CASE("splitmix64 reference sequence") {
  // values from a reference implementation of the published mix function
  Rng r(0);
  CHECK(r.next_u64() == 0xe220a8397b1dcdafull);
  CHECK(r.next_u64() == 0x6e789e6aa1b965f4ull);
  CHECK(r.next_u64() == 0x06c45d188009454full);
  CHECK(r.next_u64() == 0xf88bb8a8724c81ecull);

  Rng r42(42);
  CHECK(r42.next_u64() == 0x989b3f130a063869ull);
  CHECK(r42.next_u64() == 0x290db4bf2570ded7ull);
}

TEST_CASE("uniform reference values and range") {
  Rng r(1);
  CHECK(r.uniform() == doctest::Approx(0.7497482413580301).epsilon(1e-15));
  CHECK(r.uniform() == doctest::Approx(0.37239342287916577).epsilon(1e-15));
  Rng s(123);
  for (int i = 0; i < 10000; ++i) {
    const double u = s.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  Rng t(5);
  for (int i = 0; i < 1000; ++i) {
    const double u = t.uniform(-2.0, 3.0);
    CHECK(u >= -2.0);
    CHECK(u < 3.0);
  }
}

TEST_CASE("substream keys, not draw position") {
  // a substream must not care how many draws the parent has made
  Rng a(7);
  Rng b(7);
  (void)b.next_u64();
  (void)b.next_u64();
  (void)b.next_u64();
  CHECK(a.substream(3).next_u64() == b.substream(3).next_u64());
  CHECK(a.substream(2, 5).next_u64() == b.substream(2, 5).next_u64());
  CHECK(a.substream(1, 2, 3).next_u64() == b.substream(1, 2, 3).next_u64());

  // key derivation matches the reference combine chain
  Rng p(7);
  CHECK(p.substream(1).seed() == 0x9e5651b0ef953636ull);
  CHECK(p.substream(2, 5).seed() == 0xa85fea6c12c7850dull);

  // distinct keys give distinct streams
  CHECK(p.substream(1).next_u64() != p.substream(2).next_u64());
  CHECK(p.substream(2, 4).next_u64() != p.substream(2, 5).next_u64());
}

TEST_CASE("uniform_int bound is inclusive and unbiased-ish") {
  Rng r(99);
  std::set<std::uint64_t> seen;
  std::vector<std::size_t> counts(4, 0);
  for (int i = 0; i < 40000; ++i) {
    const std::uint64_t v = r.uniform_int(3);
    REQUIRE(v <= 3);
    seen.insert(v);
    ++counts[v];
  }
  CHECK(seen.size() == 4);  // 3 itself must be attainable
  for (const std::size_t c : counts) {
    CHECK(double(c) > 40000.0 * 0.25 * 0.9);
    CHECK(double(c) < 40000.0 * 0.25 * 1.1);
  }
  // bound 0 is the constant 0
  for (int i = 0; i < 10; ++i) CHECK(r.uniform_int(0) == 0);
}

TEST_CASE("beta(1,1) is exactly the uniform stream") {
  Rng a(31);
  Rng b(31);
  for (int i = 0; i < 100; ++i) CHECK(a.beta_symmetric(1.0) == b.uniform());
}

TEST_CASE("beta(1,1) passes KS against uniform") {
  Rng r(2024);
  std::vector<double> xs(100000);
  for (double& x : xs) x = r.beta_symmetric(1.0);
  CHECK(ks_statistic(std::move(xs), uniform_cdf) < 0.01);
}

TEST_CASE("beta moments for alpha != 1") {
  // Beta(a,a): mean 1/2, var 1/(4(2a+1))
  for (const double alpha : {0.5, 2.0, 4.0}) {
    Rng r(std::uint64_t(alpha * 100));
    const int n = 50000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double x = r.beta_symmetric(alpha);
      REQUIRE(x >= 0.0);
      REQUIRE(x <= 1.0);
      sum += x;
      sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    const double want_var = 1.0 / (4.0 * (2.0 * alpha + 1.0));
    CHECK(mean == doctest::Approx(0.5).epsilon(0.02));
    CHECK(var == doctest::Approx(want_var).epsilon(0.05));
  }
}

TEST_CASE("gamma moments") {
  // Gamma(a,1): mean a, var a
  for (const double alpha : {0.7, 1.0, 3.0}) {
    Rng r(std::uint64_t(alpha * 1000) + 1);
    const int n = 50000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double x = r.gamma(alpha);
      REQUIRE(x >= 0.0);
      sum += x;
      sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(mean == doctest::Approx(alpha).epsilon(0.05));
    CHECK(var == doctest::Approx(alpha).epsilon(0.1));
  }
  CHECK_THROWS_AS((void)Rng(1).gamma(0.0), std::invalid_argument);
  CHECK_THROWS_AS((void)Rng(1).beta_symmetric(-1.0), std::invalid_argument);
}

TEST_CASE("normal moments and cache determinism") {
  Rng r(55);
  const int n = 50000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    sum += x;
    sq += x * x;
  }
  CHECK(sum / n == doctest::Approx(0.0).epsilon(0.05));
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.05));

  Rng a(66), b(66);
  for (int i = 0; i < 20; ++i) CHECK(a.normal() == b.normal());
}
