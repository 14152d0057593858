#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "csflock/brownian.hpp"
#include "csflock/errors.hpp"
#include "csflock/rng.hpp"
#include "doctest.h"
#include "oracles/oracles.hpp"

using namespace csflock;

namespace {

// sample variance and its standard error sqrt(2/(n-1)) * s^2 under normality
std::pair<double, double> variance_with_se(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double var = ss / (n - 1.0);
  return {var, var * std::sqrt(2.0 / (n - 1.0))};
}

}  // namespace

TEST_CASE("sample_path is deterministic") {
  const auto a = sample_path(2.0, 100, 42);
  const auto b = sample_path(2.0, 100, 42);
  CHECK(a == b);
  CHECK(a.level() == 0);
  CHECK(a.steps() == 100);
  CHECK(a.dt() == doctest::Approx(0.02));
  CHECK(sample_path(2.0, 100, 43).increments()[0] != a.increments()[0]);
}

TEST_CASE("sample_path errors") {
  CHECK_THROWS_AS(sample_path(1.0, 0, 1), ConfigError);
  CHECK_THROWS_AS(sample_path(0.0, 10, 1), ConfigError);
  CHECK_THROWS_AS(sample_path(-1.0, 10, 1), ConfigError);
}

TEST_CASE("first increment has variance T/K") {
  const double T = 3.0;
  const std::size_t K = 12;
  std::vector<double> xs;
  for (std::uint64_t s = 0; s < 100000; ++s) xs.push_back(sample_path(T, K, s).increment(0));
  const auto [var, se] = variance_with_se(xs);
  CHECK(std::abs(var - T / K) <= 3.0 * se);
}

TEST_CASE("unit increment passes Kolmogorov-Smirnov against N(0,1)") {
  std::vector<double> xs;
  for (std::uint64_t s = 0; s < 10000; ++s) xs.push_back(sample_path(1.0, 1, 1000 + s).increment(0));
  const double d = oracle::ks_normal(xs);
  CHECK(d < 1.6276 / std::sqrt(10000.0));  // alpha = 0.01
}

TEST_CASE("refinement preserves parent increments exactly") {
  const auto p = sample_path(1.5, 64, 9);
  const auto r = refine(p);
  REQUIRE(r.steps() == 128);
  CHECK(r.level() == 1);
  for (std::size_t k = 0; k < 64; ++k) CHECK(r.increment(2 * k) + r.increment(2 * k + 1) == p.increment(k));
  CHECK(refine(refine(p)) == refine(r));
  CHECK(refine(p) == r);
}

TEST_CASE("refined paths agree with the parent at shared grid points") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto p = sample_path(4.0, 1000, seed);
    const auto base = p.values();
    for (int lvl = 1; lvl <= 4; ++lvl) {
      p = p.refined();
      const auto fine = p.values();
      const std::size_t stride = std::size_t{1} << lvl;
      for (std::size_t k = 0; k <= 1000; ++k) {
        REQUIRE(fine[k * stride] == base[k]);
        REQUIRE(p.value_at(k * stride) == base[k]);
      }
    }
  }
}

TEST_CASE("bridge midpoint deviation has variance T/(4K)") {
  const double T = 2.0;
  const std::size_t K = 4;
  std::vector<double> dev;
  for (std::uint64_t s = 0; s < 40000; ++s) {
    const auto p = sample_path(T, K, s);
    const auto r = p.refined();
    dev.push_back(r.increment(0) - 0.5 * p.increment(0));
  }
  const auto [var, se] = variance_with_se(dev);
  CHECK(std::abs(var - T / (4.0 * K)) <= 3.0 * se);
}

TEST_CASE("value_at") {
  const auto p = sample_path(1.0, 50, 3);
  CHECK(p.value_at(0) == 0.0);
  double s = 0.0;
  for (double x : p.increments()) s += x;
  CHECK(p.value_at(50) == s);
  CHECK_THROWS_AS(p.value_at(51), RangeError);
  const auto vals = p.values();
  CHECK(vals.size() == 51);
  CHECK(vals[0] == 0.0);
  for (std::size_t k = 0; k <= 50; ++k) CHECK(vals[k] == p.value_at(k));
}

TEST_CASE("paths from distinct derived seeds are uncorrelated") {
  const std::size_t K = 1000, pairs = 200;
  double sum = 0.0;
  for (std::uint64_t i = 0; i < pairs; ++i) {
    const auto pa = sample_path(1.0, K, derive_seed(5, 2 * i));
    const auto pb = sample_path(1.0, K, derive_seed(5, 2 * i + 1));
    const auto a = pa.increments(), b = pb.increments();
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t k = 0; k < K; ++k) {
      ab += a[k] * b[k];
      aa += a[k] * a[k];
      bb += b[k] * b[k];
    }
    sum += ab / std::sqrt(aa * bb);
  }
  // each correlation has sd ~ 1/sqrt(K); the average of `pairs` of them
  CHECK(std::abs(sum / pairs) <= 3.0 / std::sqrt(static_cast<double>(K * pairs)));
}

TEST_CASE("derived seeds are distinct") {
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t i = 0; i < 10000; ++i) seeds.push_back(derive_seed(1, i));
  std::sort(seeds.begin(), seeds.end());
  CHECK(std::adjacent_find(seeds.begin(), seeds.end()) == seeds.end());
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
}

TEST_CASE("binary dump round-trips") {
  const auto p = refine(sample_path(2.5, 33, 77));
  std::stringstream buf;
  p.write_binary(buf);
  CHECK(buf.str().size() == 32 + 8 * 66);
  const auto q = BrownianPath::read_binary(buf);
  CHECK(p == q);
  std::stringstream truncated(buf.str().substr(0, 20));
  CHECK_THROWS(BrownianPath::read_binary(truncated));
}

TEST_CASE("increments sit on the summation lattice") {
  const auto p = sample_path(1.0, 1000, 5).refined().refined();
  for (double x : p.increments()) CHECK(std::ldexp(x, 40) == std::nearbyint(std::ldexp(x, 40)));
  CHECK_THROWS_AS(BrownianPath::from_increments(1.0, {1e4}), RangeError);
  CHECK_THROWS_AS(BrownianPath::from_increments(1.0, {NAN}), ConfigError);
}

TEST_CASE("from_increments validates its level") {
  CHECK_THROWS_AS(BrownianPath::from_increments(1.0, {0.1, 0.2, 0.3}, 0, 1), ConfigError);
  const auto p = BrownianPath::from_increments(1.0, {0.1, -0.2, 0.3, 0.4}, 0, 2);
  CHECK(p.value_at(4) == doctest::Approx(0.6).epsilon(1e-11));
}
