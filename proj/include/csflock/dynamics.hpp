#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "csflock/brownian.hpp"
#include "csflock/ensemble.hpp"
#include "csflock/kernel.hpp"

namespace csflock {

enum class Scheme { ito_euler, stratonovich_heun };

std::string_view to_string(Scheme scheme);
Scheme scheme_from_string(std::string_view name);

struct SimConfig {
  double sigma = 0.0;
  double dt = 1e-3;
  double horizon = 5.0;
  Scheme scheme = Scheme::ito_euler;
  std::uint64_t seed = 0;
  /// Keep every stride-th state in the trajectory (the terminal state is
  /// always kept); 0 records no trajectory.
  std::size_t stride = 1;
};

/// Per-grid-point observables. Centered quantities use the initial mean
/// velocity vbar0; `kinetic` is the raw (uncentered) kinetic energy.
struct ObservableSeries {
  std::vector<double> times;
  std::vector<double> E;               ///< (1/N) sum |vbar0 - V^i|^2
  std::vector<double> kinetic;         ///< (1/N) sum |V^i|^2
  std::vector<double> support_radius;  ///< max_i |V^i - vbar0|
  std::vector<std::vector<double>> mean_velocity;
  std::vector<double> brownian;        ///< B at each grid time

  std::size_t size() const noexcept { return times.size(); }
};

struct SimulationResult {
  std::vector<Ensemble> trajectory;
  ObservableSeries observables;
};

std::vector<double> mean_velocity(const Ensemble& ens);
double variance_functional(const Ensemble& ens, std::span<const double> vbar0);
double kinetic_energy(const Ensemble& ens);
double support_radius(const Ensemble& ens, std::span<const double> vbar0);

/// In-place integrator with reusable work buffers. Coefficients (Vbar, F) are
/// taken at the left end of each step; one scalar dB drives every particle.
class Stepper {
 public:
  Stepper(const CommunicationKernel& kernel, double sigma, Scheme scheme);

  /// Advances `ens` by dt with Brownian increment dB. Does not check finiteness.
  void advance(Ensemble& ens, double dt, double dB);

  const CommunicationKernel& kernel() const noexcept { return *kernel_; }
  double sigma() const noexcept { return sigma_; }
  Scheme scheme() const noexcept { return scheme_; }

 private:
  void advance_ito(Ensemble& ens, double dt, double dB);
  void advance_heun(Ensemble& ens, double dt, double dB);

  const CommunicationKernel* kernel_;
  double sigma_;
  Scheme scheme_;
  std::vector<double> force_;
  std::vector<double> predictor_;
  std::vector<double> mean_;
  std::vector<double> mean_pred_;
};

/// Euler-Maruyama for the Ito form:
///   X+ = X + V dt
///   V+ = V + [F - sigma (Vbar - V)] dt + sqrt(2 sigma) (Vbar - V) dB
Ensemble step_ito(const Ensemble& ens, const CommunicationKernel& kernel, double sigma, double dt,
                  double dB);

/// Heun predictor-corrector for the Stratonovich form. Drift F is explicit
/// Euler; the diffusion coefficient is averaged over the left end and the
/// predictor.
Ensemble step_stratonovich_heun(const Ensemble& ens, const CommunicationKernel& kernel,
                                double sigma, double dt, double dB);

/// Runs config.scheme over every increment of `path`, recording observables at
/// all K + 1 grid points. Throws BlowUpError on a non-finite state and
/// ConfigError when the path grid does not match (horizon, dt).
SimulationResult simulate(const Ensemble& init, const SimConfig& config,
                          const CommunicationKernel& kernel, const BrownianPath& path);

enum class TestFamily { gaussian_bump, polynomial_cutoff };

/// Smooth test function phi(x, v) on R^d x R^d centred at (cx, cv):
/// exp(-rho^2 / 2) or (1 - rho^2)^3 on rho < 1, where
/// rho^2 = |x - cx|^2 / sx^2 + |v - cv|^2 / sv^2. An infinite position width
/// sx makes phi independent of x.
class TestFunction {
 public:
  TestFunction(TestFamily family, std::vector<double> center_x, std::vector<double> center_v,
               double scale);
  TestFunction(TestFamily family, std::vector<double> center_x, std::vector<double> center_v,
               double scale_x, double scale_v);

  TestFamily family() const noexcept { return family_; }
  std::size_t dim() const noexcept { return cx_.size(); }

  double value(std::span<const double> x, std::span<const double> v) const;
  void grad_x(std::span<const double> x, std::span<const double> v, std::span<double> out) const;
  void grad_v(std::span<const double> x, std::span<const double> v, std::span<double> out) const;
  /// Row-major d x d Hessian in v.
  void hess_v(std::span<const double> x, std::span<const double> v, std::span<double> out) const;

 private:
  double rho2(std::span<const double> x, std::span<const double> v) const;
  /// phi = g(rho^2): returns g, g', g''.
  void profile(double r2, double& g, double& dg, double& d2g) const;

  TestFamily family_;
  std::vector<double> cx_;
  std::vector<double> cv_;
  double inv_sx2_;
  double inv_sv2_;
};

/// Discrete weak-form residual of an Ito trajectory, left-endpoint quadrature:
///   <mu_T, phi> - <mu_0, phi>
///   - sum_k <mu_k, v.grad_x phi + (F - sigma(vbar - v)).grad_v phi
///                  + sigma (vbar - v)(vbar - v)^T : hess_v phi> dt
///   - sqrt(2 sigma) sum_k <mu_k, (vbar - v).grad_v phi> dB_k
/// returned as an absolute value. `trajectory` must hold all K + 1 states.
double weak_form_residual(std::span<const Ensemble> trajectory, const BrownianPath& path,
                          const SimConfig& config, const CommunicationKernel& kernel,
                          const TestFunction& phi);

}  // namespace csflock
