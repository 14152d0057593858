#include "csflock/ensemble.hpp"

#include <algorithm>
#include <cmath>

#include "csflock/errors.hpp"

namespace csflock {

Ensemble::Ensemble(std::size_t n, std::size_t dim, double t)
    : Ensemble(n, dim, std::vector<double>(n * dim, 0.0), std::vector<double>(n * dim, 0.0), t) {}

Ensemble::Ensemble(std::size_t n, std::size_t dim, std::vector<double> x, std::vector<double> v,
                   double t)
    : n_(n), dim_(dim), x_(std::move(x)), v_(std::move(v)), t_(t) {
  if (n_ == 0 || dim_ == 0) throw ConfigError("ensemble needs N >= 1 and d >= 1");
  if (x_.size() != n_ * dim_ || v_.size() != n_ * dim_)
    throw ConfigError("ensemble arrays must have N*d entries");
}

bool Ensemble::all_finite() const noexcept {
  auto finite = [](double a) { return std::isfinite(a); };
  return std::all_of(x_.begin(), x_.end(), finite) && std::all_of(v_.begin(), v_.end(), finite);
}

}  // namespace csflock
