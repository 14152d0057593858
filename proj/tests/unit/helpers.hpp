#pragma once

#include <cstdint>
#include <random>

#include "csflock/ensemble.hpp"

namespace testutil {

inline csflock::Ensemble random_ensemble(std::size_t n, std::size_t d, std::uint64_t seed,
                                         double xspread = 2.0, double vspread = 1.0) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  csflock::Ensemble ens(n, d);
  for (auto& x : ens.x()) x = xspread * g(gen);
  for (auto& v : ens.v()) v = vspread * g(gen);
  return ens;
}

inline double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double x : a) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace testutil
