#include <omp.h>

#include <cmath>
#include <random>
#include <vector>

#include "csflock/errors.hpp"
#include "csflock/kernel.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "oracles/oracles.hpp"

using namespace csflock;

namespace {

std::vector<CommunicationKernel> builtin_kernels() {
  return {CommunicationKernel::constant(1.0), CommunicationKernel::constant(0.3),
          CommunicationKernel::rational(1.0, 1.0), CommunicationKernel::rational(0.5, 1.0, 0.5),
          CommunicationKernel::rational(2.0, 0.25), CommunicationKernel::rational(1.0, 3.0, 0.1),
          CommunicationKernel::exponential(1.0, 0.7), CommunicationKernel::exponential(0.4, 2.0, 0.2)};
}

}  // namespace

TEST_CASE("eval_psi examples") {
  CHECK(eval_psi(CommunicationKernel::constant(1.0), 7.3) == 1.0);
  const auto rat = CommunicationKernel::rational(1.0, 1.0);
  CHECK(eval_psi(rat, 0.0) == 1.0);
  CHECK(eval_psi(rat, 1.0) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("eval_psi errors") {
  CHECK_THROWS_AS(eval_psi(CommunicationKernel::constant(1.0), -0.1), DomainError);
  const auto tab = CommunicationKernel::tabulated({1.0, 0.5, 0.25}, 2.0);
  CHECK(eval_psi(tab, 2.0) == 0.25);
  CHECK(eval_psi(tab, 0.5) == doctest::Approx(0.75));
  CHECK_THROWS_AS(eval_psi(tab, 2.0001), RangeError);
  CHECK_THROWS_AS(CommunicationKernel::rational(1.0, 0.0), ConfigError);
  CHECK_THROWS_AS(CommunicationKernel::constant(-1.0), ConfigError);
  CHECK_THROWS_AS(CommunicationKernel::tabulated({1.0}, 1.0), ConfigError);
  CHECK_THROWS_AS(kernel_family_from_string("gaussian"), ConfigError);
  CHECK(kernel_family_from_string("custom-tabulated") == KernelFamily::tabulated);
}

TEST_CASE("kernel bounds, Lipschitz constant and monotonicity by dense sampling") {
  for (const auto& k : builtin_kernels()) {
    CAPTURE(to_string(k.family()));
    std::vector<double> rs, ps;
    for (int i = 0; i <= 20000; ++i) rs.push_back(i * 1e-3);  // [0, 20]
    for (double r : rs) ps.push_back(eval_psi(k, r));
    for (double p : ps) {
      CHECK(p >= k.psi_min() - 1e-15);
      CHECK(p <= k.psi_max() + 1e-15);
    }
    CHECK(k.psi_min() >= 0.0);
    for (std::size_t i = 1; i < ps.size(); ++i) {
      CHECK(ps[i] <= ps[i - 1]);
      CHECK(std::abs(ps[i] - ps[i - 1]) <= k.lip() * (rs[i] - rs[i - 1]) * (1 + 1e-9) + 1e-15);
    }
    // non-adjacent pairs too
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> u(0.0, 5.0);
    for (int t = 0; t < 2000; ++t) {
      const double a = u(gen), b = u(gen);
      CHECK(std::abs(eval_psi(k, a) - eval_psi(k, b)) <= k.lip() * std::abs(a - b) * (1 + 1e-9) + 1e-15);
    }
  }
}

TEST_CASE("rational Lipschitz constant is attained") {
  // numeric sup of |psi'| for K=1, beta=1 is 3 sqrt(3) / 8 at r = 1/sqrt(3)
  const auto k = CommunicationKernel::rational(1.0, 1.0);
  CHECK(k.lip() == doctest::Approx(3.0 * std::sqrt(3.0) / 8.0).epsilon(1e-14));
}

TEST_CASE("tabulated kernel bounds come from the table") {
  const auto tab = CommunicationKernel::tabulated({0.9, 1.0, 0.2, 0.4}, 3.0);
  CHECK(tab.psi_min() == 0.2);
  CHECK(tab.psi_max() == 1.0);
  CHECK(tab.lip() == doctest::Approx(0.8));
  CHECK(tab.r_max() == 3.0);
}

TEST_CASE("alignment_force examples") {
  const auto one = CommunicationKernel::constant(1.0);
  Ensemble two(2, 1, {0.0, 1.0}, {1.0, -1.0});
  CHECK(alignment_force(two, one, 0)[0] == -1.0);
  const auto all = alignment_force_all(two, one);
  CHECK(all[0] == -1.0);
  CHECK(all[1] == 1.0);

  Ensemble single(1, 3, {1.0, 2.0, 3.0}, {4.0, -5.0, 6.0});
  for (double f : alignment_force(single, one, 0)) CHECK(f == 0.0);

  Ensemble same(2, 2, {0.0, 0.0, 3.0, -1.0}, {0.7, 0.2, 0.7, 0.2});
  const auto rat = CommunicationKernel::rational(1.0, 1.0);
  for (double f : alignment_force(same, rat, 0)) CHECK(f == 0.0);
  for (double f : alignment_force_all(same, rat)) CHECK(f == 0.0);

  CHECK_THROWS_AS(alignment_force(two, one, 2), RangeError);
}

TEST_CASE("tabulated kernel beyond its table is reported by the batched force") {
  const auto tab = CommunicationKernel::tabulated({1.0, 0.5}, 1.0);
  Ensemble far(2, 1, {0.0, 5.0}, {1.0, -1.0});
  CHECK_THROWS_AS(alignment_force_all(far, tab), RangeError);
  CHECK_THROWS_AS(alignment_force(far, tab, 0), RangeError);
}

TEST_CASE("batched force matches the direct-summation oracle") {
  for (const auto& k : builtin_kernels()) {
    for (std::size_t d : {1u, 2u, 3u, 5u}) {
      for (std::size_t n : {1u, 2u, 7u, 130u}) {
        const auto ens = testutil::random_ensemble(n, d, 1000 * n + d);
        const auto ref = oracle::direct_force(ens, [&](double r) { return eval_psi(k, r); });
        const auto par = alignment_force_all(ens, k);
        std::vector<double> ser(n * d);
        alignment_force_all_serial(ens, k, ser);
        const double scale = 1e-12 * (1.0 + testutil::max_abs(ref));
        for (std::size_t q = 0; q < n * d; ++q) {
          CHECK(std::abs(par[q] - ref[q]) <= scale);
          CHECK(std::abs(ser[q] - ref[q]) <= scale);
        }
        for (std::size_t i = 0; i < std::min<std::size_t>(n, 5); ++i) {
          const auto row = alignment_force(ens, k, i);
          for (std::size_t c = 0; c < d; ++c) CHECK(std::abs(row[c] - ref[i * d + c]) <= scale);
        }
      }
    }
  }
}

TEST_CASE("forces sum to zero") {
  const auto k = CommunicationKernel::rational(1.0, 0.75, 0.1);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const std::size_t n = 2 + seed * 5, d = 1 + seed % 3;
    const auto ens = testutil::random_ensemble(n, d, seed, 3.0, 2.0);
    for (int which = 0; which < 2; ++which) {
      std::vector<double> f(n * d);
      if (which == 0)
        alignment_force_all(ens, k, f);
      else
        alignment_force_all_serial(ens, k, f);
      const double fmax = testutil::max_abs(f);
      for (std::size_t c = 0; c < d; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += f[i * d + c];
        CHECK(std::abs(s) <= 1e-12 * static_cast<double>(n) * fmax);
      }
    }
  }
}

TEST_CASE("force is translation invariant in X and Galilean covariant in V") {
  const auto k = CommunicationKernel::exponential(1.0, 1.5, 0.05);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t n = 40, d = 2;
    const auto ens = testutil::random_ensemble(n, d, 77 + seed);
    auto moved = ens;
    for (std::size_t i = 0; i < n; ++i) {
      moved.x(i)[0] += 3.25;
      moved.x(i)[1] -= 1.5;
      moved.v(i)[0] += 0.75;
      moved.v(i)[1] -= 2.0;
    }
    const auto f0 = alignment_force_all(ens, k);
    const auto f1 = alignment_force_all(moved, k);
    const double tol = 1e-12 * (1.0 + testutil::max_abs(f0)) * 10;
    for (std::size_t q = 0; q < f0.size(); ++q) CHECK(std::abs(f0[q] - f1[q]) <= tol);
  }
}

TEST_CASE("constant kernel force is K (vbar - v)") {
  const auto k = CommunicationKernel::constant(0.6);
  const auto ens = testutil::random_ensemble(33, 3, 5);
  const auto f = alignment_force_all(ens, k);
  for (std::size_t c = 0; c < 3; ++c) {
    double vbar = 0.0;
    for (std::size_t i = 0; i < 33; ++i) vbar += ens.v(i)[c];
    vbar /= 33.0;
    for (std::size_t i = 0; i < 33; ++i)
      CHECK(f[i * 3 + c] == doctest::Approx(0.6 * (vbar - ens.v(i)[c])).epsilon(1e-12).scale(1.0));
  }
}

TEST_CASE("batched force is independent of the thread count") {
  const auto k = CommunicationKernel::rational(1.0, 0.5);
  const auto ens = testutil::random_ensemble(300, 2, 11);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto a = alignment_force_all(ens, k);
  omp_set_num_threads(4);
  const auto b = alignment_force_all(ens, k);
  omp_set_num_threads(saved);
  CHECK(a == b);
}
