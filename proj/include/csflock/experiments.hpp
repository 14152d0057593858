#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "csflock/brownian.hpp"
#include "csflock/dynamics.hpp"
#include "csflock/initial_law.hpp"
#include "csflock/kernel.hpp"
#include "csflock/transport.hpp"

namespace csflock {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Reports

struct Assertion {
  std::string name;
  bool passed = false;
  bool informational = false;  ///< reported, never fails a run
  std::string detail;

  friend bool operator==(const Assertion&, const Assertion&) = default;
};

struct ExperimentReport {
  static constexpr int kSchemaVersion = 1;

  std::string experiment;
  json config = json::object();
  json results = json::object();
  std::vector<Assertion> assertions;
  json timing = json::object();

  void check(std::string name, bool passed, std::string detail = {});
  void inform(std::string name, bool passed, std::string detail = {});
  /// True when every non-informational assertion passed.
  bool passed() const;

  json to_json() const;
  /// Throws ConfigError when the document does not match the schema.
  static ExperimentReport from_json(const json& doc);

  friend bool operator==(const ExperimentReport&, const ExperimentReport&) = default;
};

// ---------------------------------------------------------------------------
// Fitting and tolerances

struct RateFit {
  double rate = 0.0;       ///< negated slope of log(values) against time
  double std_error = 0.0;  ///< ordinary least-squares slope error unless replaced
  double r_squared = 1.0;
  double residual_rms = 0.0;  ///< rms of the log-fit residuals
  std::size_t samples = 0;
  double t_begin = 0.0;
  double t_end = 0.0;
};

/// Least-squares decay rate of log(values) on times. Positive means decay.
/// Throws DomainError on a nonpositive value and PreconditionError for fewer
/// than 10 samples or mismatched lengths.
RateFit fit_decay_rate(std::span<const double> times, std::span<const double> values);

json to_json(const RateFit& fit);

/// Multiplicative slack for pathwise inequalities: c sqrt(dt) (1 + sup |B|).
double pathwise_tolerance(double c, double dt, std::span<const double> brownian);

/// Grid indices of `count` + 1 evenly spaced checkpoints 0 .. steps.
std::vector<std::size_t> checkpoint_indices(std::size_t steps, std::size_t count = 20);

// ---------------------------------------------------------------------------
// Phase transition sweep

enum class Estimator {
  tilted,  ///< importance sampling along B = W - 2 sqrt(2 sigma) t, weighted back to P
  plain    ///< sample mean over independent paths
};

std::string_view to_string(Estimator e);
Estimator estimator_from_string(std::string_view name);

struct PhaseSweepConfig {
  Ensemble initial;  ///< deterministic initial data shared by all realizations
  std::vector<double> sigmas;
  std::size_t realizations = 64;
  double dt = 1e-3;
  double horizon = 5.0;
  Scheme scheme = Scheme::ito_euler;
  std::uint64_t seed = 0;
  Estimator estimator = Estimator::tilted;
  bool also_plain = true;       ///< report the other estimator alongside
  double allowance = -1.0;      ///< discretization allowance in the rate window; < 0 means 10 dt
  std::size_t jackknife_groups = 20;
  std::size_t series_stride = 10;  ///< thinning of the mean series in the report
};

struct SigmaOutcome {
  double sigma = 0.0;
  RateFit fit;                    ///< primary estimator, jackknife standard error
  std::optional<RateFit> other;   ///< the other estimator when requested
  double lower = 0.0;             ///< 2 (psi_m - 2 sigma) - delta
  double upper = 0.0;             ///< 2 (psi_M - 2 sigma) + delta
  bool within = false;
  std::size_t blowups = 0;
  std::size_t reruns = 0;
  std::vector<double> times;      ///< thinned grid
  std::vector<double> mean;       ///< primary estimate of E[E_t]
  std::vector<double> std_error;
  std::vector<double> pathwise_rates;  ///< -log(E_T / E_0) / T per plain realization
};

struct PhaseSweepResult {
  std::vector<SigmaOutcome> outcomes;
  std::optional<double> critical_sigma;  ///< interpolated root of r(sigma)
  ExperimentReport report;
};

PhaseSweepResult phase_sweep(const PhaseSweepConfig& config, const CommunicationKernel& kernel);

// ---------------------------------------------------------------------------
// Pathwise checks along single trajectories

struct DecaySummary {
  std::size_t points = 0;
  std::size_t violations = 0;    ///< points above (1 + eps_tol) * bound
  double max_excess = 0.0;       ///< max over points of value / bound - 1, floored at 0
  double max_abs_gap = 0.0;      ///< max over points of |value / bound - 1|
  double eps_tol = 0.0;
  std::size_t first_violation = 0;  ///< grid index; meaningful when violations > 0
  double first_value = 0.0;         ///< value and bound at first_violation
  double first_bound = 0.0;

  double fraction() const { return points ? static_cast<double>(violations) / points : 0.0; }
};

json to_json(const DecaySummary& s);

/// E_t <= (1 + eps_tol) E_0 exp(-2 psi_m t - 2 sqrt(2 sigma) B_t) at every grid
/// point of `obs`. Requires psi_m > 0.
DecaySummary as_decay_check(const ObservableSeries& obs, const CommunicationKernel& kernel,
                            double sigma, double dt, double c = 10.0);

struct EnergySupportSummary {
  DecaySummary kinetic;        ///< (1/N) sum |V - vbar0|^2 <= K0 e^{-2 sqrt(2 sigma) B_t}
  DecaySummary support_proof;  ///< max |V - vbar0|^2 with the (1 - e^{-psi_M t}) / psi_M factor
  DecaySummary support_stated; ///< same with the 1 / psi_M factor
};

/// Kinetic-energy and velocity-support bounds on centred velocities.
EnergySupportSummary energy_support_check(const ObservableSeries& obs,
                                          const CommunicationKernel& kernel, double sigma,
                                          double dt, double c = 10.0);

struct PathwiseStudyConfig {
  Ensemble initial;
  double sigma = 0.3;
  double dt = 1e-3;
  double horizon = 4.0;
  Scheme scheme = Scheme::ito_euler;
  std::uint64_t seed = 0;
  std::size_t paths = 100;
  unsigned refinements = 3;   ///< levels beyond the base grid
  double tolerance_c = 10.0;
  double max_violation_fraction = 0.01;
  std::size_t counterexample_limit = 10;
};

struct PathwiseStudyResult {
  /// [level][path]
  std::vector<std::vector<DecaySummary>> decay;
  std::vector<std::vector<EnergySupportSummary>> energy;
  std::vector<double> median_max_excess;  ///< per level, decay check
  double base_violation_fraction = 0.0;   ///< pooled over paths at level 0
  ExperimentReport report;
};

PathwiseStudyResult pathwise_study(const PathwiseStudyConfig& config, const CommunicationKernel& kernel);

// ---------------------------------------------------------------------------
// Coupled stability

struct StabilityConfig {
  double sigma = 0.0;
  Scheme scheme = Scheme::ito_euler;
  std::size_t checkpoints = 20;
  double velocity_weight = 1.0;
};

struct StabilityRun {
  std::vector<double> times;
  std::vector<double> distance;  ///< W2 at each checkpoint
  double amplification = 0.0;    ///< sup W2(t) / W2(0); 0 when W2(0) = 0
  bool determinism_ok = true;    ///< false if W2(0) = 0 but a later W2 > 0
};

/// Simulates both ensembles on the same path and tracks W2 at checkpoints.
StabilityRun coupled_distance(const Ensemble& a, const Ensemble& b, const StabilityConfig& config,
                              const CommunicationKernel& kernel, const BrownianPath& path);

struct StabilitySweepResult {
  std::vector<double> etas;
  std::vector<StabilityRun> runs;
  StabilityRun zero;  ///< unperturbed copy
  double spread = 0.0;  ///< max / min amplification over etas
  ExperimentReport report;
};

/// Perturbs velocities by eta * u with a fixed field u normalized to unit
/// rms, for every eta, and compares the amplification factors.
StabilitySweepResult stability_experiment(const Ensemble& base, std::span<const double> etas,
                                          const StabilityConfig& config,
                                          const CommunicationKernel& kernel,
                                          const BrownianPath& path, std::uint64_t seed,
                                          double max_spread = 4.0);

// ---------------------------------------------------------------------------
// Mean-field Cauchy behaviour

struct MeanfieldConfig {
  InitialLaw law;
  std::vector<double> lo, hi;            ///< quantization box in phase space
  std::vector<std::size_t> cells;        ///< increasing cells per dimension, nested
  std::size_t particles_per_atom = 1;    ///< N = particles_per_atom * cells^(2d)
  double sigma = 0.0;
  Scheme scheme = Scheme::ito_euler;
  std::size_t checkpoints = 20;
  double monotone_slack = 0.10;
  double halving_tolerance = 0.20;
};

struct MeanfieldResult {
  std::vector<std::size_t> particles;
  std::vector<double> initial_distance;  ///< W2(mu_0^N, mu_0^Nmax)
  std::vector<double> sup_distance;      ///< D_N
  double fit_c = 0.0;
  double fit_alpha = 0.0;
  ExperimentReport report;
};

MeanfieldResult meanfield_study(const MeanfieldConfig& config, const CommunicationKernel& kernel,
                                const BrownianPath& path);

// ---------------------------------------------------------------------------
// Stochastic Gronwall inequality

struct GronwallInstance {
  double c1 = 0.0;
  double c2 = 0.0;
  std::function<double(double)> forcing;  ///< A(s) >= 0
  std::string forcing_label = "A";
  double x0 = 1.0;
  const BrownianPath* path = nullptr;
};

struct GronwallResult {
  std::vector<double> times;
  std::vector<double> x;        ///< Euler-Maruyama solution of the equality case
  std::vector<double> stated;   ///< X0 e^{..} (int ... A ds + 1)
  std::vector<double> variant;  ///< e^{..} (X0 + int ... A ds)
  DecaySummary stated_check;
  DecaySummary variant_check;
  double max_rel_gap_stated = 0.0;   ///< max |X / bound - 1| where bound > 0
  double max_rel_gap_variant = 0.0;
  ExperimentReport report;
};

/// Integrates X = X0 + int (c1 X + A) ds - c2 int X dB by Euler-Maruyama on the
/// instance path and evaluates both forms of the bound by left-endpoint
/// quadrature. Throws DomainError for X0 < 0 and ConfigError for a negative
/// forcing value or dt (c1^2 + c2^2) >= 0.1.
GronwallResult gronwall_check(const GronwallInstance& inst, double c = 10.0);

// ---------------------------------------------------------------------------
// Refinement studies on bridge-refined paths

struct RefinementConfig {
  Ensemble initial;
  double sigma = 0.5;
  double dt = 1e-2;          ///< coarsest step
  double horizon = 1.0;
  unsigned levels = 4;       ///< number of step sizes dt, dt/2, ...
  std::size_t seeds = 20;
  std::uint64_t seed = 0;
};

struct ResidualStudyResult {
  std::vector<double> dts;
  std::vector<std::vector<double>> residual;  ///< [seed][level]
  std::vector<double> median_ratio;           ///< per consecutive level pair
  ExperimentReport report;
};

/// Weak-form residual of the Ito scheme at every level; Richardson ratios
/// residual(dt) / residual(dt/2) per seed, medians must lie in [lo, hi].
ResidualStudyResult weak_residual_study(const RefinementConfig& config,
                                        const CommunicationKernel& kernel, const TestFunction& phi,
                                        double ratio_lo = 1.3, double ratio_hi = 3.0);

struct SchemeGapResult {
  std::vector<double> dts;
  std::vector<std::vector<double>> gap;  ///< [seed][level] rms phase-space gap at T
  std::vector<double> rms_gap;           ///< per level, rms over seeds
  double order = 0.0;                    ///< log-log slope of rms_gap against dt
  ExperimentReport report;
};

/// Terminal-state gap between stratonovich_heun and ito_euler on common
/// refined paths; asserts empirical strong order >= min_order.
SchemeGapResult scheme_consistency_study(const RefinementConfig& config,
                                         const CommunicationKernel& kernel,
                                         double min_order = 0.5);

// ---------------------------------------------------------------------------
// Serialization helpers shared with the CLI

json to_json(const CommunicationKernel& kernel);
json to_json(const Ensemble& ens);

}  // namespace csflock
