#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "csflock/dynamics.hpp"
#include "csflock/experiments.hpp"
#include "csflock/initial_law.hpp"
#include "csflock/kernel.hpp"

namespace csflock::cli {

enum class Experiment { simulate, phase_sweep, meanfield, stability, gronwall_check, wasserstein, weak_residual };

std::string_view to_string(Experiment e);
Experiment experiment_from_string(std::string_view name);

struct KernelSpec {
  KernelFamily family = KernelFamily::constant;
  std::vector<double> params{1.0};
  double range = 0.0;  // tabulated only

  CommunicationKernel build() const;
};

struct RunConfig {
  Experiment experiment = Experiment::simulate;

  std::size_t n = 64;
  std::size_t d = 2;
  double sigma = 0.0;
  KernelSpec kernel;
  InitialLaw law;

  double dt = 1e-3;
  double horizon = 5.0;
  Scheme scheme = Scheme::ito_euler;
  std::uint64_t seed = 0;
  std::size_t realizations = 64;
  unsigned refinement_levels = 3;

  std::string directory = "out";
  std::set<std::string> formats{"csv", "json"};
  std::size_t stride = 10;

  /// Validated experiment section with defaults filled in.
  json params = json::object();
  /// The whole document after validation, defaults included; echoed in reports.
  json normalized = json::object();
};

/// Strict parse: unknown keys, type mismatches and range violations throw
/// ConfigError naming the offending path. `experiment` overrides (and must
/// agree with) a top-level "experiment" key.
RunConfig parse_config(std::string_view text, std::optional<Experiment> experiment = std::nullopt);

/// Runs the experiment and writes outputs. Exit status: 0 all assertions
/// passed, 1 an assertion failed or the run aborted, 2 unusable output directory.
int run(const RunConfig& config, bool quiet, std::ostream& out, std::ostream& err);

enum class PlotKind { series, phase_diagram, violin };

std::string_view to_string(PlotKind kind);
PlotKind plot_kind_from_string(std::string_view name);

/// Static SVG for a report document. Throws ConfigError when the report lacks
/// the data the plot needs (including an empty series).
std::string render_svg(const json& report, PlotKind kind);

}  // namespace csflock::cli
