#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace csflock {

/// N particles in R^d x R^d at one time; positions and velocities are stored
/// row-major (particle i occupies [i*d, (i+1)*d)). Viewed as a measure this is
/// the uniform empirical measure (1/N) sum_i delta_(X^i, V^i).
class Ensemble {
 public:
  Ensemble() = default;
  Ensemble(std::size_t n, std::size_t dim, double t = 0.0);
  Ensemble(std::size_t n, std::size_t dim, std::vector<double> x, std::vector<double> v,
           double t = 0.0);

  std::size_t size() const noexcept { return n_; }
  std::size_t dim() const noexcept { return dim_; }
  double time() const noexcept { return t_; }
  void set_time(double t) noexcept { t_ = t; }

  std::span<double> x() noexcept { return x_; }
  std::span<const double> x() const noexcept { return x_; }
  std::span<double> v() noexcept { return v_; }
  std::span<const double> v() const noexcept { return v_; }

  std::span<double> x(std::size_t i) noexcept { return {x_.data() + i * dim_, dim_}; }
  std::span<const double> x(std::size_t i) const noexcept { return {x_.data() + i * dim_, dim_}; }
  std::span<double> v(std::size_t i) noexcept { return {v_.data() + i * dim_, dim_}; }
  std::span<const double> v(std::size_t i) const noexcept { return {v_.data() + i * dim_, dim_}; }

  bool all_finite() const noexcept;

  friend bool operator==(const Ensemble&, const Ensemble&) = default;

 private:
  std::size_t n_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> x_;
  std::vector<double> v_;
  double t_ = 0.0;
};

}  // namespace csflock
