#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "csflock/errors.hpp"
#include "csflock/initial_law.hpp"
#include "csflock/transport.hpp"
#include "doctest.h"
#include "oracles/oracles.hpp"

using namespace csflock;

namespace {

std::vector<double> random_atoms(std::size_t m, std::size_t dim, std::mt19937_64& gen) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> a(m * dim);
  for (double& x : a) x = g(gen);
  return a;
}

std::vector<double> random_weights(std::size_t m, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> w(m);
  for (double& x : w) x = u(gen);
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= s;
  // absorb the last rounding ulp so the measure validates
  w.back() += 1.0 - std::accumulate(w.begin(), w.end(), 0.0);
  return w;
}

void check_marginals(const TransportResult& r, const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  std::vector<double> rows(a.size(), 0.0), cols(b.size(), 0.0);
  for (const auto& c : r.plan.pairs) {
    CHECK(c.mass >= 0.0);
    rows[c.source] += c.mass;
    cols[c.target] += c.mass;
  }
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(rows[i] - a.weight(i)) <= 1e-10);
  for (std::size_t j = 0; j < b.size(); ++j) CHECK(std::abs(cols[j] - b.weight(j)) <= 1e-10);
}

}  // namespace

TEST_CASE("empirical measure validation") {
  CHECK_THROWS_AS(EmpiricalMeasure(2, {0, 0, 1, 1}, {0.5, 0.4}), ConfigError);
  CHECK_THROWS_AS(EmpiricalMeasure(2, {0, 0, 1, 1}, {1.5, -0.5}), ConfigError);
  CHECK_THROWS_AS(EmpiricalMeasure(2, {0, 0, 1}, {1.0}), ConfigError);
  CHECK_THROWS_AS(EmpiricalMeasure(1, {NAN}, {1.0}), ConfigError);
  const auto u = EmpiricalMeasure::uniform(2, {0, 0, 1, 1, 2, 2});
  CHECK(u.size() == 3);
  CHECK(u.is_uniform());
}

TEST_CASE("w2_exact_uniform examples") {
  const auto a = EmpiricalMeasure::uniform(2, {0.0, 0.0});
  const auto b = EmpiricalMeasure::uniform(2, {3.0, 4.0});
  CHECK(w2_exact_uniform(a, b).distance == doctest::Approx(5.0).epsilon(1e-15));

  const auto c = EmpiricalMeasure::uniform(2, {0, 1, 5, 2, -1, 3});
  const auto same = w2_exact_uniform(c, c);
  CHECK(same.distance == 0.0);
  for (const auto& p : same.plan.pairs) CHECK(p.source == p.target);

  const auto l1 = EmpiricalMeasure::uniform(1, {0.0, 1.0});
  const auto l2 = EmpiricalMeasure::uniform(1, {2.0, 3.0});
  const auto r = w2_exact_uniform(l1, l2);
  CHECK(r.distance == doctest::Approx(2.0).epsilon(1e-15));
  REQUIRE(r.plan.pairs.size() == 2);
  CHECK(r.plan.pairs[0].target == 0);
  CHECK(r.plan.pairs[1].target == 1);
}

TEST_CASE("w2_exact_uniform preconditions") {
  const auto a = EmpiricalMeasure::uniform(1, {0.0, 1.0});
  const auto b = EmpiricalMeasure::uniform(1, {0.0, 1.0, 2.0});
  CHECK_THROWS_AS(w2_exact_uniform(a, b), PreconditionError);
  const EmpiricalMeasure w(1, {0.0, 1.0}, {0.25, 0.75});
  CHECK_THROWS_AS(w2_exact_uniform(w, a), PreconditionError);
}

TEST_CASE("w2_bruteforce examples and errors") {
  const auto a = EmpiricalMeasure::uniform(1, {0.0, 1.0, 2.0});
  const auto b = EmpiricalMeasure::uniform(1, {2.0, 0.0, 1.0});
  CHECK(w2_bruteforce(a, b) == 0.0);
  CHECK(w2_bruteforce(EmpiricalMeasure::uniform(2, {0, 0}), EmpiricalMeasure::uniform(2, {3, 4})) == 5.0);
  std::vector<double> nine(9);
  std::iota(nine.begin(), nine.end(), 0.0);
  const auto big = EmpiricalMeasure::uniform(1, nine);
  CHECK_THROWS_AS(w2_bruteforce(big, big), RangeError);
}

TEST_CASE("w2_general with a single source atom is forced") {
  std::mt19937_64 gen(1);
  const auto z = random_atoms(1, 3, gen);
  const auto atoms = random_atoms(6, 3, gen);
  const auto w = random_weights(6, gen);
  const auto r = w2_general(EmpiricalMeasure(3, z, {1.0}), EmpiricalMeasure(3, atoms, w));
  double s = 0.0;
  for (std::size_t j = 0; j < 6; ++j) s += w[j] * oracle::sq_dist(z.data(), &atoms[3 * j], 3);
  CHECK(r.distance == doctest::Approx(std::sqrt(s)).epsilon(1e-13));
}

TEST_CASE("w2_general drops zero-weight atoms with a warning") {
  const EmpiricalMeasure a(1, {0.0, 7.0, 1.0}, {0.5, 0.0, 0.5});
  const auto b = EmpiricalMeasure::uniform(1, {2.0, 3.0});
  const auto r = w2_general(a, b);
  CHECK(r.distance == doctest::Approx(2.0).epsilon(1e-13));
  CHECK_FALSE(r.warnings.empty());
  for (const auto& c : r.plan.pairs) CHECK(c.source != 1);
  check_marginals(r, a, b);
}

TEST_CASE("random 5 x 7 instance matches the vertex-enumeration oracle") {
  for (std::uint64_t seed = 0; seed < 1; ++seed) {
    std::mt19937_64 gen(300 + seed);
    const auto ax = random_atoms(5, 2, gen), bx = random_atoms(7, 2, gen);
    const auto aw = random_weights(5, gen), bw = random_weights(7, gen);
    const EmpiricalMeasure a(2, ax, aw), b(2, bx, bw);
    oracle::TransportVertexOracle vo(aw, bw, cost_matrix(a, b));
    const double best = vo.solve();
    CHECK(vo.trees_visited() == 15625u * 2401u);  // 5^6 7^4 spanning trees of K_{5,7}
    const auto r = w2_general(a, b);
    CHECK(r.plan.cost == doctest::Approx(best).epsilon(1e-12));
    CHECK(r.distance == doctest::Approx(std::sqrt(best)).epsilon(1e-12));
    check_marginals(r, a, b);
  }
}

TEST_CASE("5 x 7 instance matches frozen external LP values") {
  // atoms on a line: integer positions so the instance is reproducible by hand
  const std::vector<double> ax{0, 3, 5, 9, 12};
  const std::vector<double> bx{1, 2, 4, 6, 8, 10, 14};
  const std::vector<double> aw{0.1, 0.3, 0.2, 0.25, 0.15};
  const std::vector<double> bw{0.2, 0.1, 0.15, 0.05, 0.2, 0.1, 0.2};
  const EmpiricalMeasure a(1, ax, aw), b(1, bx, bw);
  // in 1-D the optimal plan is the monotone (quantile) coupling
  double cost = 0.0;
  {
    std::size_t i = 0, j = 0;
    double ra = aw[0], rb = bw[0];
    while (i < 5 && j < 7) {
      const double m = std::min(ra, rb);
      cost += m * (ax[i] - bx[j]) * (ax[i] - bx[j]);
      ra -= m;
      rb -= m;
      if (ra <= 1e-15 && ++i < 5) ra = aw[i];
      if (rb <= 1e-15 && ++j < 7) rb = bw[j];
    }
  }
  CHECK(w2_general(a, b).plan.cost == doctest::Approx(cost).epsilon(1e-12));
  oracle::TransportVertexOracle vo(aw, bw, cost_matrix(a, b));
  CHECK(vo.solve() == doctest::Approx(cost).epsilon(1e-12));
}

TEST_CASE("small weighted instances match the vertex oracle") {
  std::mt19937_64 gen(17);
  for (int t = 0; t < 200; ++t) {
    const std::size_t m = 1 + gen() % 4, n = 1 + gen() % 5, dim = 1 + gen() % 4;
    const auto ax = random_atoms(m, dim, gen), bx = random_atoms(n, dim, gen);
    const auto aw = random_weights(m, gen), bw = random_weights(n, gen);
    const EmpiricalMeasure a(dim, ax, aw), b(dim, bx, bw);
    oracle::TransportVertexOracle vo(aw, bw, cost_matrix(a, b));
    const auto r = w2_general(a, b);
    CHECK(r.plan.cost == doctest::Approx(vo.solve()).epsilon(1e-11));
    check_marginals(r, a, b);
    const auto r1 = w1_general(a, b);
    oracle::TransportVertexOracle vo1(aw, bw, cost_matrix(a, b, false));
    CHECK(r1.distance == doctest::Approx(vo1.solve()).epsilon(1e-11));
  }
}

TEST_CASE("degenerate weights: integer-ratio masses create ties in the simplex") {
  std::mt19937_64 gen(23);
  for (int t = 0; t < 200; ++t) {
    const std::size_t m = 2 + gen() % 4, n = 2 + gen() % 4;
    const auto ax = random_atoms(m, 2, gen), bx = random_atoms(n, 2, gen);
    std::vector<double> aw(m, 1.0 / m), bw(n, 1.0 / n);
    aw.back() = 1.0 - std::accumulate(aw.begin(), aw.end() - 1, 0.0);
    bw.back() = 1.0 - std::accumulate(bw.begin(), bw.end() - 1, 0.0);
    const EmpiricalMeasure a(2, ax, aw), b(2, bx, bw);
    oracle::TransportVertexOracle vo(aw, bw, cost_matrix(a, b));
    const auto r = w2_general(a, b);
    CHECK(r.plan.cost == doctest::Approx(vo.solve()).epsilon(1e-11));
    check_marginals(r, a, b);
  }
}

TEST_CASE("general, exact-uniform and brute-force agree on uniform instances") {
  std::mt19937_64 gen(2024);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t m = 1 + gen() % 8, dim = 2 * (1 + gen() % 2);
    const auto a = EmpiricalMeasure::uniform(dim, random_atoms(m, dim, gen));
    const auto b = EmpiricalMeasure::uniform(dim, random_atoms(m, dim, gen));
    const double brute = w2_bruteforce(a, b);
    const auto gen_r = w2_general(a, b);
    const auto uni_r = w2_exact_uniform(a, b);
    CHECK(std::abs(gen_r.distance - brute) <= 1e-12 * (1.0 + brute));
    CHECK(std::abs(uni_r.distance - brute) <= 1e-12 * (1.0 + brute));
    CHECK(std::abs(w2(a, b).distance - brute) <= 1e-12 * (1.0 + brute));
    check_marginals(gen_r, a, b);
    check_marginals(uni_r, a, b);
  }
}

TEST_CASE("brute force matches the independent permutation oracle") {
  std::mt19937_64 gen(4);
  for (int t = 0; t < 100; ++t) {
    const std::size_t m = 1 + gen() % 7;
    const auto ax = random_atoms(m, 2, gen), bx = random_atoms(m, 2, gen);
    CHECK(w2_bruteforce(EmpiricalMeasure::uniform(2, ax), EmpiricalMeasure::uniform(2, bx)) ==
          doctest::Approx(oracle::permutation_w2(ax, bx, 2)).epsilon(1e-13));
  }
}

TEST_CASE("metric axioms") {
  std::mt19937_64 gen(99);
  for (int t = 0; t < 200; ++t) {
    const std::size_t dim = 2;
    const std::size_t ma = 1 + gen() % 6, mb = 1 + gen() % 6, mc = 1 + gen() % 6;
    const EmpiricalMeasure a(dim, random_atoms(ma, dim, gen), random_weights(ma, gen));
    const EmpiricalMeasure b(dim, random_atoms(mb, dim, gen), random_weights(mb, gen));
    const EmpiricalMeasure c(dim, random_atoms(mc, dim, gen), random_weights(mc, gen));
    const double ab = w2(a, b).distance, ba = w2(b, a).distance;
    const double ac = w2(a, c).distance, bc = w2(b, c).distance;
    CHECK(std::abs(ab - ba) <= 1e-10);
    CHECK(ac <= ab + bc + 1e-9);
    CHECK(w2(a, a).distance <= 1e-12);
    CHECK(ab > 0.0);
  }
}

TEST_CASE("translation and scaling covariance") {
  std::mt19937_64 gen(5);
  for (int t = 0; t < 100; ++t) {
    const std::size_t m = 2 + gen() % 6, n = 2 + gen() % 6, dim = 2;
    auto ax = random_atoms(m, dim, gen), bx = random_atoms(n, dim, gen);
    const auto aw = random_weights(m, gen), bw = random_weights(n, gen);
    const double base = w2(EmpiricalMeasure(dim, ax, aw), EmpiricalMeasure(dim, bx, bw)).distance;
    auto as = ax, bs = bx, al = ax, bl = bx;
    const double shift[2] = {2.5, -1.25};
    for (std::size_t q = 0; q < as.size(); ++q) as[q] += shift[q % 2];
    for (std::size_t q = 0; q < bs.size(); ++q) bs[q] += shift[q % 2];
    for (double& x : al) x *= 3.0;
    for (double& x : bl) x *= 3.0;
    CHECK(std::abs(w2(EmpiricalMeasure(dim, as, aw), EmpiricalMeasure(dim, bs, bw)).distance - base) <= 1e-10);
    CHECK(std::abs(w2(EmpiricalMeasure(dim, al, aw), EmpiricalMeasure(dim, bl, bw)).distance - 3.0 * base) <=
          1e-10);
  }
}

TEST_CASE("velocity weighting of phase-space atoms") {
  Ensemble e(1, 1, {1.0}, {2.0});
  const auto m = EmpiricalMeasure::from_ensemble(e, 4.0);
  CHECK(m.atom(0)[0] == 1.0);
  CHECK(m.atom(0)[1] == 4.0);
  CHECK(EmpiricalMeasure::from_ensemble(e).atom(0)[1] == 2.0);
}

TEST_CASE("sinkhorn examples") {
  std::mt19937_64 gen(8);
  const auto ax = random_atoms(20, 2, gen);
  const auto a = EmpiricalMeasure::uniform(2, ax);
  double diam = 0.0;
  for (std::size_t i = 0; i < 20; ++i)
    for (std::size_t j = 0; j < 20; ++j) diam = std::max(diam, std::sqrt(oracle::sq_dist(&ax[2 * i], &ax[2 * j], 2)));
  const auto self = sinkhorn_w2(a, a, 1e-3, 10000, 1e-9);
  CHECK(self.distance <= 0.05 * diam);
  CHECK(self.converged);
  CHECK(self.marginal_error <= 1e-9);
  const auto loose = sinkhorn_w2(a, a, 1e-2);
  CHECK(loose.converged);
  CHECK(loose.marginal_error <= 1e-5);
  CHECK_THROWS_AS(sinkhorn_w2(a, a, 0.0), ConfigError);

  const auto b = EmpiricalMeasure::uniform(2, random_atoms(20, 2, gen));
  const auto stalled = sinkhorn_w2(a, b, 1e-4 * mean_cost(a, b), 2);
  CHECK_FALSE(stalled.converged);
  CHECK_FALSE(stalled.warning.empty());
  CHECK(stalled.marginal_error > 1e-9);
}

TEST_CASE("sinkhorn is within 5% of the exact distance at M = 50") {
  std::mt19937_64 gen(31);
  for (int t = 0; t < 10; ++t) {
    const auto a = EmpiricalMeasure::uniform(2, random_atoms(50, 2, gen));
    const auto b = EmpiricalMeasure::uniform(2, random_atoms(50, 2, gen));
    const double exact = w2(a, b).distance;
    const auto s = sinkhorn_w2(a, b, 0.01 * mean_cost(a, b));
    CHECK(s.converged);
    CHECK(s.marginal_error <= 1e-5);
    CHECK(std::abs(s.distance - exact) <= 0.05 * exact);
  }
}

TEST_CASE("quantize_grid examples") {
  const auto box2 = InitialLaw::uniform_box({0.0, 0.0}, {1.0, 1.0});
  const std::vector<double> lo{0.0, 0.0}, hi{1.0, 1.0};
  const auto one = quantize_grid(box2, 1, lo, hi);
  REQUIRE(one.size() == 1);
  CHECK(one.atom(0)[0] == 0.5);
  CHECK(one.atom(0)[1] == 0.5);
  CHECK(one.weight(0) == 1.0);

  // a 1-D phase space is not a valid (x, v) law; project through a box in 2-D
  const auto two = quantize_grid(box2, 2, lo, hi);
  REQUIRE(two.size() == 4);
  CHECK(two.atom(0)[0] == 0.25);
  CHECK(two.atom(0)[1] == 0.25);
  CHECK(two.atom(3)[0] == 0.75);
  for (std::size_t i = 0; i < 4; ++i) CHECK(two.weight(i) == 0.25);

  const std::vector<double> far_lo{5.0, 5.0}, far_hi{6.0, 6.0};
  CHECK_THROWS_AS(quantize_grid(box2, 4, far_lo, far_hi), ConfigError);
}

TEST_CASE("quantization error halves with the cell width") {
  const auto box = InitialLaw::uniform_box({0.0, 0.0}, {1.0, 1.0});
  const std::vector<double> lo{0.0, 0.0}, hi{1.0, 1.0};
  const auto fine = quantize_grid(box, 32, lo, hi);
  double prev = 0.0;
  for (std::size_t cells : {2u, 4u, 8u, 16u}) {
    const auto q = quantize_grid(box, cells, lo, hi);
    const double h = 1.0 / static_cast<double>(cells);
    const double d = w2(q, fine).distance;
    CHECK(d <= h * std::sqrt(2.0) / 2.0);
    if (prev > 0.0) CHECK(d / prev == doctest::Approx(0.5).epsilon(0.2));
    prev = d;
  }
}

TEST_CASE("gaussian and two-cluster quantizations carry the law's mass") {
  const auto g = InitialLaw::gaussian({0.0, 1.0}, {0.5, 0.25});
  const std::vector<double> lo{-3.0, 0.0}, hi{3.0, 2.0};
  const auto q = quantize_grid(g, 12, lo, hi);
  double mx = 0.0, mv = 0.0, total = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    mx += q.weight(i) * q.atom(i)[0];
    mv += q.weight(i) * q.atom(i)[1];
    total += q.weight(i);
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(std::abs(mx) <= 1e-12);
  CHECK(mv == doctest::Approx(1.0).epsilon(1e-12));

  const auto tc = InitialLaw::two_cluster({-1.0, 0.5}, {1.0, -0.5}, {0.2, 0.2}, 0.25);
  const auto q2 = quantize_grid(tc, 16, std::vector<double>{-2.0, -1.5}, std::vector<double>{2.0, 1.5});
  double left = 0.0;
  for (std::size_t i = 0; i < q2.size(); ++i)
    if (q2.atom(i)[0] < 0.0) left += q2.weight(i);
  CHECK(left == doctest::Approx(0.25).epsilon(1e-6));
}

TEST_CASE("largest-remainder conversion to a uniform ensemble") {
  const EmpiricalMeasure m(2, {0.0, 0.0, 1.0, 1.0, 2.0, 2.0}, {0.5, 0.3, 0.2});
  const auto e = to_uniform_ensemble(m, 7);  // 3.5, 2.1, 1.4 -> 4, 2, 1
  REQUIRE(e.size() == 7);
  std::size_t counts[3] = {0, 0, 0};
  for (std::size_t i = 0; i < 7; ++i) ++counts[static_cast<std::size_t>(e.x(i)[0])];
  CHECK(counts[0] == 4);
  CHECK(counts[1] == 2);
  CHECK(counts[2] == 1);
  CHECK(e.v(6)[0] == 2.0);
  CHECK_THROWS_AS(to_uniform_ensemble(m, 0), ConfigError);
}

TEST_CASE("sampled ensembles are deterministic") {
  const auto law = InitialLaw::gaussian({0.0, 0.0, 1.0, 0.0}, {1.0, 1.0, 0.5, 0.5});
  CHECK(sample_ensemble(law, 30, 4) == sample_ensemble(law, 30, 4));
  CHECK(sample_ensemble(law, 30, 4).dim() == 2);
  CHECK_THROWS_AS(InitialLaw::gaussian({0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}), ConfigError);
  CHECK(initial_law_kind_from_string("two_cluster") == InitialLaw::Kind::two_cluster);
  CHECK_THROWS_AS(initial_law_kind_from_string("cauchy"), ConfigError);
}
