#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "csflock/ensemble.hpp"
#include "csflock/transport.hpp"

namespace csflock {

/// Built-in initial laws on phase space R^(2d), coordinates ordered
/// (x_1..x_d, v_1..v_d). All laws are products over coordinates so cell
/// masses are exact.
struct InitialLaw {
  enum class Kind { uniform_box, gaussian, two_cluster };

  Kind kind = Kind::uniform_box;
  std::vector<double> lo;      ///< uniform_box lower corner
  std::vector<double> hi;      ///< uniform_box upper corner
  std::vector<double> mean;    ///< gaussian mean / first cluster centre
  std::vector<double> mean2;   ///< second cluster centre
  std::vector<double> stddev;  ///< per-coordinate standard deviation
  double first_weight = 0.5;   ///< mass of the first cluster

  static InitialLaw uniform_box(std::vector<double> lo, std::vector<double> hi);
  static InitialLaw gaussian(std::vector<double> mean, std::vector<double> stddev);
  static InitialLaw two_cluster(std::vector<double> mean_a, std::vector<double> mean_b,
                                std::vector<double> stddev, double weight_a = 0.5);

  std::size_t phase_dim() const;
  /// Law mass of the axis-aligned cell [lo, hi].
  double cell_mass(std::span<const double> lo, std::span<const double> hi) const;
};

std::string_view to_string(InitialLaw::Kind kind);
InitialLaw::Kind initial_law_kind_from_string(std::string_view name);

/// Dirac masses at the centres of a regular grid with cells_per_dim cells per
/// coordinate over [lo, hi], each weighted by the law's mass in its cell and
/// renormalized. Throws ConfigError when the box carries no mass.
EmpiricalMeasure quantize_grid(const InitialLaw& law, std::size_t cells_per_dim,
                               std::span<const double> lo, std::span<const double> hi);

/// Uniform ensemble of `particles` particles placing floor/ceil(w_i * particles)
/// copies at atom i (largest-remainder rounding, ties to the lower index).
Ensemble to_uniform_ensemble(const EmpiricalMeasure& measure, std::size_t particles);

/// N i.i.d. draws from the law (truncation-free), seeded deterministically.
Ensemble sample_ensemble(const InitialLaw& law, std::size_t n, std::uint64_t seed);

}  // namespace csflock
