#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace csflock {

/// One scalar Brownian path on a uniform grid of `steps` intervals over
/// [0, horizon], stored as increments. B_0 = 0; values are prefix sums.
///
/// A path at refinement level L was obtained from a level-0 path with
/// steps >> L intervals by L Brownian-bridge bisections. Increments are
/// rounded onto the dyadic lattice 2^-40 Z (a relative perturbation far below
/// anything a simulation resolves), which makes every split and prefix sum
/// exact: sibling increments add to their parent and refined paths agree with
/// the parent bit for bit at shared grid points. |B| must stay below 2^13.
class BrownianPath {
 public:
  BrownianPath() = default;

  /// i.i.d. N(0, horizon/steps) increments keyed by `seed`; level 0.
  static BrownianPath sample(double horizon, std::size_t steps, std::uint64_t seed);

  /// Wraps caller-supplied increments (e.g. a drift-shifted path), rounded
  /// onto the lattice.
  static BrownianPath from_increments(double horizon, std::vector<double> increments,
                                      std::uint64_t seed = 0, unsigned level = 0);

  /// Bridge bisection: 2K increments, level + 1, midpoints from a stream
  /// derived from (seed, level + 1).
  BrownianPath refined() const;

  double horizon() const noexcept { return horizon_; }
  std::size_t steps() const noexcept { return increments_.size(); }
  double dt() const noexcept { return horizon_ / static_cast<double>(increments_.size()); }
  std::uint64_t seed() const noexcept { return seed_; }
  unsigned level() const noexcept { return level_; }
  std::span<const double> increments() const noexcept { return increments_; }
  double increment(std::size_t k) const noexcept { return increments_[k]; }

  /// B at grid index k, 0 <= k <= steps.
  double value_at(std::size_t k) const;
  /// All steps + 1 grid values.
  std::vector<double> values() const;

  /// Little-endian dump: f64 horizon, u64 steps, u64 seed, u64 level, then
  /// `steps` f64 increments.
  void write_binary(std::ostream& out) const;
  static BrownianPath read_binary(std::istream& in);

  friend bool operator==(const BrownianPath&, const BrownianPath&) = default;

 private:
  void check_range() const;

  double horizon_ = 0.0;
  std::vector<double> increments_;
  std::uint64_t seed_ = 0;
  unsigned level_ = 0;
};

/// Free-function forms of BrownianPath::sample and BrownianPath::refined.
BrownianPath sample_path(double horizon, std::size_t steps, std::uint64_t seed);
BrownianPath refine(const BrownianPath& path);

}  // namespace csflock
