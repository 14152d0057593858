#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "csflock/ensemble.hpp"

namespace csflock {

/// Weighted atoms in phase space R^dim (dim = 2d: positions then velocities).
class EmpiricalMeasure {
 public:
  EmpiricalMeasure() = default;
  /// Validates finiteness, nonnegative weights and total mass 1 within 1e-12.
  EmpiricalMeasure(std::size_t dim, std::vector<double> atoms, std::vector<double> weights);

  static EmpiricalMeasure uniform(std::size_t dim, std::vector<double> atoms);
  /// Atoms (X^i, sqrt(velocity_weight) V^i) with weights 1/N.
  static EmpiricalMeasure from_ensemble(const Ensemble& ens, double velocity_weight = 1.0);

  std::size_t size() const noexcept { return weights_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const double> atom(std::size_t i) const noexcept { return {atoms_.data() + i * dim_, dim_}; }
  std::span<const double> atoms() const noexcept { return atoms_; }
  std::span<const double> weights() const noexcept { return weights_; }
  double weight(std::size_t i) const noexcept { return weights_[i]; }
  bool is_uniform() const noexcept;

 private:
  std::size_t dim_ = 0;
  std::vector<double> atoms_;
  std::vector<double> weights_;
};

struct Coupling {
  std::size_t source;
  std::size_t target;
  double mass;
};

struct TransportPlan {
  std::vector<Coupling> pairs;
  double cost = 0.0;  ///< sum of mass * ground cost
};

struct TransportResult {
  double distance = 0.0;
  TransportPlan plan;
  std::vector<std::string> warnings;
};

/// Squared (or plain) Euclidean ground costs, row-major |a| x |b|.
std::vector<double> cost_matrix(const EmpiricalMeasure& a, const EmpiricalMeasure& b,
                                bool squared = true);

/// Minimum-cost perfect matching on an n x n cost matrix by shortest
/// augmenting paths with dual potentials; returns row -> column.
std::vector<std::size_t> solve_assignment(std::span<const double> cost, std::size_t n);

/// Exact transportation LP (supply a, demand b, cost m x n) by the
/// transportation simplex. Entries of the plan index into a and b.
TransportPlan solve_transport(std::span<const double> supply, std::span<const double> demand,
                              std::span<const double> cost);

/// W2 for uniform measures of equal size via the assignment problem.
TransportResult w2_exact_uniform(const EmpiricalMeasure& a, const EmpiricalMeasure& b);
/// W2 for arbitrary weights via the transportation LP. Zero-weight atoms are
/// dropped with a warning.
TransportResult w2_general(const EmpiricalMeasure& a, const EmpiricalMeasure& b);
/// W1 via the same LP with unsquared cost.
TransportResult w1_general(const EmpiricalMeasure& a, const EmpiricalMeasure& b);
/// Minimum over all M! permutations; uniform, equal sizes, M <= 8.
double w2_bruteforce(const EmpiricalMeasure& a, const EmpiricalMeasure& b);

/// Exact W2 choosing the assignment solver when it applies and the LP otherwise.
TransportResult w2(const EmpiricalMeasure& a, const EmpiricalMeasure& b);

struct SinkhornResult {
  double distance = 0.0;      ///< sqrt of the regularized plan's transport cost
  double marginal_error = 0;  ///< L1 violation of the row marginal at exit
  std::size_t iterations = 0;
  bool converged = false;
  std::string warning;
};

/// Log-domain Sinkhorn on squared cost with regularization epsilon, reached by
/// halving epsilon from the largest cost. Stops when the L1 row-marginal error
/// drops to tol. At epsilon ~ 1e-2 of the mean cost the marginal tail
/// converges slowly while the plan cost has long settled, hence the loose
/// default.
SinkhornResult sinkhorn_w2(const EmpiricalMeasure& a, const EmpiricalMeasure& b, double epsilon,
                           std::size_t max_iter = 10000, double tol = 1e-5);

/// Mean squared ground cost; the natural unit for choosing epsilon.
double mean_cost(const EmpiricalMeasure& a, const EmpiricalMeasure& b);

}  // namespace csflock
