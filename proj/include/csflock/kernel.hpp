#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "csflock/ensemble.hpp"

namespace csflock {

enum class KernelFamily { constant, rational, exponential, tabulated };

std::string_view to_string(KernelFamily family);
KernelFamily kernel_family_from_string(std::string_view name);

/// Communication weight psi(r) together with its bounds and Lipschitz constant.
///
/// Families:
///   constant     psi(r) = K
///   rational     psi(r) = floor + K / (1 + r^2)^beta
///   exponential  psi(r) = floor + K * exp(-r / length)
///   tabulated    piecewise-linear interpolation of values on [0, r_max]
///
/// For the analytic families psi_min, psi_max and lip are closed-form; for
/// tabulated kernels they are computed from the table at construction.
class CommunicationKernel {
 public:
  static CommunicationKernel constant(double k);
  static CommunicationKernel rational(double k, double beta, double floor = 0.0);
  static CommunicationKernel exponential(double k, double length, double floor = 0.0);
  static CommunicationKernel tabulated(std::vector<double> values, double r_max);

  /// Builds from a family name and its parameter list (the config-file form).
  static CommunicationKernel from_params(KernelFamily family, std::span<const double> params,
                                         double r_max = 0.0);

  KernelFamily family() const noexcept { return family_; }
  const std::vector<double>& params() const noexcept { return params_; }
  double psi_min() const noexcept { return psi_min_; }
  double psi_max() const noexcept { return psi_max_; }
  double lip() const noexcept { return lip_; }
  /// Upper end of the table for tabulated kernels; +inf otherwise.
  double r_max() const noexcept { return r_max_; }

  /// psi(r) with argument checks.
  double operator()(double r) const;

  /// psi as a function of the squared distance; no argument checks. Tabulated
  /// kernels return NaN beyond the table so batched callers can detect it.
  double weight_sq(double r2) const noexcept;

 private:
  CommunicationKernel() = default;

  KernelFamily family_ = KernelFamily::constant;
  std::vector<double> params_;
  std::vector<double> table_;
  double psi_min_ = 0.0;
  double psi_max_ = 0.0;
  double lip_ = 0.0;
  double r_max_ = 0.0;
  double table_step_ = 0.0;
};

/// psi(r); throws DomainError for r < 0 and RangeError beyond a table.
double eval_psi(const CommunicationKernel& kernel, double r);

/// F_i = (1/N) sum_j psi(|X^i - X^j|) (V^j - V^i), summed directly over j.
std::vector<double> alignment_force(const Ensemble& ens, const CommunicationKernel& kernel,
                                    std::size_t i);

/// All N force rows, row-major N x d. Rows are distributed over OpenMP threads;
/// each row is accumulated in fixed j order so the result does not depend on
/// the thread count.
void alignment_force_all(const Ensemble& ens, const CommunicationKernel& kernel,
                         std::span<double> out);
std::vector<double> alignment_force_all(const Ensemble& ens, const CommunicationKernel& kernel);

/// Serial reference: symmetric traversal of the pairs i < j, each pair term
/// added to row i and subtracted from row j.
void alignment_force_all_serial(const Ensemble& ens, const CommunicationKernel& kernel,
                                std::span<double> out);

}  // namespace csflock
