#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "cli.hpp"
#include "csflock/errors.hpp"
#include "csflock/rng.hpp"
#include "csflock/transport.hpp"

namespace csflock::cli {

namespace fs = std::filesystem;

namespace {

// Seed streams carved out of the master seed.
constexpr std::uint64_t kPathStream = 0;
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kTargetStream = 2;

struct Csv {
  std::string name;
  std::ostringstream body;
};

struct Outputs {
  ExperimentReport report;
  std::vector<Csv> csv;
  std::vector<PlotKind> plots;

  std::ostringstream& table(std::string name, const std::string& header) {
    csv.push_back({std::move(name), {}});
    csv.back().body.precision(17);
    csv.back().body << header << '\n';
    return csv.back().body;
  }
};

std::string axis_header(const char* prefix, std::size_t d) {
  std::string h;
  for (std::size_t k = 1; k <= d; ++k) h += std::string(",") + prefix + "_" + std::to_string(k);
  return h;
}

BrownianPath master_path(const RunConfig& c) {
  const auto steps = static_cast<std::size_t>(std::llround(c.horizon / c.dt));
  return BrownianPath::sample(c.horizon, steps, derive_seed(c.seed, kPathStream));
}

Ensemble initial_ensemble(const RunConfig& c) { return sample_ensemble(c.law, c.n, derive_seed(c.seed, kInitStream)); }

void run_simulate(const RunConfig& c, const CommunicationKernel& kernel, Outputs& out) {
  const auto path = master_path(c);
  SimConfig sc;
  sc.sigma = c.sigma;
  sc.dt = c.dt;
  sc.horizon = c.horizon;
  sc.scheme = c.scheme;
  sc.seed = c.seed;
  sc.stride = c.stride;
  const auto sim = simulate(initial_ensemble(c), sc, kernel, path);
  const auto& obs = sim.observables;
  const double tol_c = c.params["tolerance_c"].get<double>();

  auto& rep = out.report;
  rep.experiment = "simulate";
  const std::size_t thin = std::max<std::size_t>(1, c.stride);
  json t = json::array(), e = json::array();
  for (std::size_t k = 0; k < obs.size(); k += thin) {
    t.push_back(obs.times[k]);
    e.push_back(obs.E[k]);
  }
  rep.results = {{"sigma", c.sigma},
                 {"psi_min", kernel.psi_min()},
                 {"psi_max", kernel.psi_max()},
                 {"E0", obs.E.front()},
                 {"E_T", obs.E.back()},
                 {"B_T", obs.brownian.back()},
                 {"series", {{"times", t}, {"E", e}}}};

  if (kernel.psi_min() > 0.0) {
    const auto decay = as_decay_check(obs, kernel, c.sigma, c.dt, tol_c);
    rep.results["decay_check"] = to_json(decay);
    rep.check("pathwise decay bound violated on < 1% of grid points", decay.fraction() < 0.01,
              "fraction=" + std::to_string(decay.fraction()));
  } else {
    rep.inform("pathwise decay bound", true, "skipped: psi_min = 0");
  }
  const auto es = energy_support_check(obs, kernel, c.sigma, c.dt, tol_c);
  rep.results["kinetic_check"] = to_json(es.kinetic);
  rep.results["support_check"] = to_json(es.support_proof);
  rep.results["support_check_stated"] = to_json(es.support_stated);
  rep.check("kinetic energy bound holds", es.kinetic.violations == 0,
            std::to_string(es.kinetic.violations) + " violations");
  rep.check("velocity support bound holds", es.support_proof.violations == 0,
            std::to_string(es.support_proof.violations) + " violations");

  const std::size_t d = c.d;
  auto& traj = out.table("trajectory.csv", "t,particle_id" + axis_header("x", d) + axis_header("v", d));
  for (const auto& s : sim.trajectory)
    for (std::size_t i = 0; i < s.size(); ++i) {
      traj << s.time() << ',' << i;
      for (double x : s.x(i)) traj << ',' << x;
      for (double v : s.v(i)) traj << ',' << v;
      traj << '\n';
    }
  auto& ob = out.table("observables.csv", "t,E,kinetic,support_radius" + axis_header("vbar", d) + ",B_t");
  for (std::size_t k = 0; k < obs.size(); ++k) {
    ob << obs.times[k] << ',' << obs.E[k] << ',' << obs.kinetic[k] << ',' << obs.support_radius[k];
    for (double v : obs.mean_velocity[k]) ob << ',' << v;
    ob << ',' << obs.brownian[k] << '\n';
  }
  out.plots = {PlotKind::series};
}

void run_phase_sweep(const RunConfig& c, const CommunicationKernel& kernel, Outputs& out) {
  PhaseSweepConfig cfg;
  cfg.initial = initial_ensemble(c);
  cfg.sigmas = c.params["sigmas"].get<std::vector<double>>();
  cfg.realizations = c.realizations;
  cfg.dt = c.dt;
  cfg.horizon = c.horizon;
  cfg.scheme = c.scheme;
  cfg.seed = c.seed;
  cfg.estimator = estimator_from_string(c.params["estimator"].get<std::string>());
  cfg.also_plain = c.params["also_plain"].get<bool>();
  cfg.allowance = c.params["allowance"].get<double>();
  cfg.jackknife_groups = c.params["jackknife_groups"].get<std::size_t>();
  cfg.series_stride = c.params["series_stride"].get<std::size_t>();
  auto res = phase_sweep(cfg, kernel);
  out.report = std::move(res.report);

  auto& series = out.table("series.csv", "sigma,t,mean,std_error");
  auto& rates = out.table("rates.csv", "sigma,rate,std_error,r_squared,samples,lower,upper,within");
  auto& paths = out.table("pathwise_rates.csv", "sigma,index,rate");
  for (const auto& o : res.outcomes) {
    for (std::size_t k = 0; k < o.times.size(); ++k)
      series << o.sigma << ',' << o.times[k] << ',' << o.mean[k] << ',' << o.std_error[k] << '\n';
    rates << o.sigma << ',' << o.fit.rate << ',' << o.fit.std_error << ',' << o.fit.r_squared << ','
          << o.fit.samples << ',' << o.lower << ',' << o.upper << ',' << (o.within ? 1 : 0) << '\n';
    for (std::size_t m = 0; m < o.pathwise_rates.size(); ++m)
      paths << o.sigma << ',' << m << ',' << o.pathwise_rates[m] << '\n';
  }
  out.plots = {PlotKind::series, PlotKind::phase_diagram};
  if (cfg.also_plain || cfg.estimator == Estimator::plain) out.plots.push_back(PlotKind::violin);
}

void run_meanfield(const RunConfig& c, const CommunicationKernel& kernel, Outputs& out) {
  MeanfieldConfig cfg;
  cfg.law = c.law;
  cfg.lo = c.params["lo"].get<std::vector<double>>();
  cfg.hi = c.params["hi"].get<std::vector<double>>();
  cfg.cells = c.params["cells"].get<std::vector<std::size_t>>();
  cfg.particles_per_atom = c.params["particles_per_atom"].get<std::size_t>();
  cfg.checkpoints = c.params["checkpoints"].get<std::size_t>();
  cfg.sigma = c.sigma;
  cfg.scheme = c.scheme;
  auto res = meanfield_study(cfg, kernel, master_path(c));
  out.report = std::move(res.report);
  auto& t = out.table("meanfield.csv", "cells,N,t,w2");
  const auto& times = out.report.results["times"];
  for (const auto& lv : out.report.results["levels"])
    for (std::size_t q = 0; q < times.size(); ++q)
      t << lv["cells"].get<std::size_t>() << ',' << lv["N"].get<std::size_t>() << ',' << times[q].get<double>()
        << ',' << lv["w2_series"][q].get<double>() << '\n';
}

void run_stability(const RunConfig& c, const CommunicationKernel& kernel, Outputs& out) {
  StabilityConfig cfg;
  cfg.sigma = c.sigma;
  cfg.scheme = c.scheme;
  cfg.checkpoints = c.params["checkpoints"].get<std::size_t>();
  cfg.velocity_weight = c.params["velocity_weight"].get<double>();
  const auto etas = c.params["etas"].get<std::vector<double>>();
  auto res = stability_experiment(initial_ensemble(c), etas, cfg, kernel, master_path(c), c.seed,
                                  c.params["max_spread"].get<double>());
  out.report = std::move(res.report);
  auto& t = out.table("stability.csv", "eta,t,w2");
  for (std::size_t q = 0; q < res.runs.size(); ++q)
    for (std::size_t k = 0; k < res.runs[q].times.size(); ++k)
      t << res.etas[q] << ',' << res.runs[q].times[k] << ',' << res.runs[q].distance[k] << '\n';
  for (std::size_t k = 0; k < res.zero.times.size(); ++k)
    t << 0.0 << ',' << res.zero.times[k] << ',' << res.zero.distance[k] << '\n';
}

void run_gronwall(const RunConfig& c, Outputs& out) {
  const auto path = master_path(c);
  const auto& a = c.params["A"];
  const std::string kind = a["kind"].get<std::string>();
  const double a0 = a["a"].get<double>();
  const double b = a.contains("b") ? a["b"].get<double>() : 0.0;
  GronwallInstance inst;
  inst.c1 = c.params["c1"].get<double>();
  inst.c2 = c.params["c2"].get<double>();
  inst.x0 = c.params["X0"].get<double>();
  inst.path = &path;
  if (kind == "constant") {
    inst.forcing = [a0](double) { return a0; };
    inst.forcing_label = std::to_string(a0);
  } else if (kind == "linear") {
    inst.forcing = [a0, b](double t) { return a0 + b * t; };
    inst.forcing_label = std::to_string(a0) + " + " + std::to_string(b) + " t";
  } else {
    inst.forcing = [a0, b](double t) { return a0 * std::exp(b * t); };
    inst.forcing_label = std::to_string(a0) + " exp(" + std::to_string(b) + " t)";
  }
  auto res = gronwall_check(inst, c.params["tolerance_c"].get<double>());
  out.report = std::move(res.report);
  auto& t = out.table("gronwall.csv", "t,X,stated,variant");
  for (std::size_t k = 0; k < res.times.size(); ++k)
    t << res.times[k] << ',' << res.x[k] << ',' << res.stated[k] << ',' << res.variant[k] << '\n';
}

void run_wasserstein(const RunConfig& c, Outputs& out) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t dim = 2 * c.d;
  auto law_from = [&](const json& spec) {
    if (spec["law"] == "uniform_box")
      return InitialLaw::uniform_box(spec["lo"].get<std::vector<double>>(), spec["hi"].get<std::vector<double>>());
    if (spec["law"] == "two_cluster")
      return InitialLaw::two_cluster(spec["mean_a"].get<std::vector<double>>(), spec["mean_b"].get<std::vector<double>>(),
                                     spec["stddev"].get<std::vector<double>>(), spec["weight_a"].get<double>());
    return InitialLaw::gaussian(spec["mean"].get<std::vector<double>>(), spec["stddev"].get<std::vector<double>>());
  };
  const auto source_law = c.params.contains("source") ? law_from(c.params["source"]) : c.law;
  const auto target_law = law_from(c.params["target"]);
  const double vw = c.params["velocity_weight"].get<double>();
  const auto a = EmpiricalMeasure::from_ensemble(
      sample_ensemble(source_law, c.params["source_N"].get<std::size_t>(), derive_seed(c.seed, kInitStream)), vw);
  const auto b = EmpiricalMeasure::from_ensemble(
      sample_ensemble(target_law, c.params["target_N"].get<std::size_t>(), derive_seed(c.seed, kTargetStream)), vw);

  auto& rep = out.report;
  rep.experiment = "wasserstein";
  rep.results = {{"source_N", a.size()}, {"target_N", b.size()}, {"dim", dim}};
  auto& plan = out.table("plan.csv", "source_idx,target_idx,mass");
  // auto: the assignment/LP solvers are cubic, so large problems go to Sinkhorn
  std::string method = c.params["method"].get<std::string>();
  if (method == "auto") method = std::max(a.size(), b.size()) <= 2000 ? "exact" : "sinkhorn";
  rep.results["method"] = method;
  if (method == "exact") {
    const auto r = w2(a, b);
    rep.results["distance"] = r.distance;
    rep.results["warnings"] = r.warnings;
    std::vector<double> row(a.size(), 0.0), col(b.size(), 0.0);
    for (const auto& p : r.plan.pairs) {
      plan << p.source << ',' << p.target << ',' << p.mass << '\n';
      row[p.source] += p.mass;
      col[p.target] += p.mass;
    }
    double err = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) err = std::max(err, std::abs(row[i] - a.weight(i)));
    for (std::size_t j = 0; j < b.size(); ++j) err = std::max(err, std::abs(col[j] - b.weight(j)));
    rep.results["marginal_error"] = err;
    rep.check("plan marginals match both measures", err <= 1e-9, "max error " + std::to_string(err));
  } else {
    const double eps = c.params["epsilon"].get<double>() * mean_cost(a, b);
    const auto r = sinkhorn_w2(a, b, eps);
    rep.results["distance"] = r.distance;
    rep.results["epsilon"] = eps;
    rep.results["iterations"] = r.iterations;
    rep.results["marginal_error"] = r.marginal_error;
    rep.results["warnings"] = r.warning.empty() ? json::array() : json::array({r.warning});
    rep.inform("Sinkhorn converged", r.converged, r.warning);
  }
  rep.timing = {{"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()},
                {"threads", 1}};
}

void run_weak_residual(const RunConfig& c, const CommunicationKernel& kernel, Outputs& out) {
  RefinementConfig cfg;
  cfg.initial = initial_ensemble(c);
  cfg.sigma = c.sigma;
  cfg.dt = c.dt;
  cfg.horizon = c.horizon;
  cfg.levels = c.refinement_levels + 1;
  cfg.seeds = c.params["seeds"].get<std::size_t>();
  cfg.seed = c.seed;
  const auto& tf = c.params["test_function"];
  const TestFunction phi(tf["family"] == "gaussian_bump" ? TestFamily::gaussian_bump : TestFamily::polynomial_cutoff,
                         tf["center_x"].get<std::vector<double>>(), tf["center_v"].get<std::vector<double>>(),
                         tf["scale_x"].get<double>(), tf["scale_v"].get<double>());
  auto res = weak_residual_study(cfg, kernel, phi, c.params["ratio_lo"].get<double>(), c.params["ratio_hi"].get<double>());
  out.report = std::move(res.report);
  auto& t = out.table("residual.csv", "seed,level,dt,residual");
  for (std::size_t s = 0; s < res.residual.size(); ++s)
    for (std::size_t l = 0; l < res.dts.size(); ++l)
      t << s << ',' << l << ',' << res.dts[l] << ',' << res.residual[s][l] << '\n';
  if (c.params["scheme_consistency"].get<bool>()) {
    auto gap = scheme_consistency_study(cfg, kernel, c.params["min_order"].get<double>());
    out.report.results["scheme_gap"] = gap.report.results;
    for (auto& a : gap.report.assertions) out.report.assertions.push_back(a);
    auto& g = out.table("scheme_gap.csv", "seed,level,dt,gap");
    for (std::size_t s = 0; s < gap.gap.size(); ++s)
      for (std::size_t l = 0; l < gap.dts.size(); ++l)
        g << s << ',' << l << ',' << gap.dts[l] << ',' << gap.gap[s][l] << '\n';
  }
}

bool writable_directory(const fs::path& dir, std::string& why) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    why = "cannot create output directory '" + dir.string() + "': " + ec.message();
    return false;
  }
  const auto probe = dir / ".csflock_probe";
  {
    std::ofstream f(probe);
    if (!f) {
      why = "output directory '" + dir.string() + "' is not writable";
      return false;
    }
  }
  fs::remove(probe, ec);
  return true;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
  if (!f) throw std::runtime_error("failed writing " + p.string());
}

}  // namespace

int run(const RunConfig& c, bool quiet, std::ostream& out, std::ostream& err) {
  const fs::path dir(c.directory);
  std::string why;
  if (!writable_directory(dir, why)) {
    err << "error: " << why << '\n';
    return 2;
  }
  std::error_code ec;
  fs::remove(dir / "PARTIAL", ec);

  Outputs o;
  try {
    const auto kernel = c.kernel.build();
    switch (c.experiment) {
      case Experiment::simulate: run_simulate(c, kernel, o); break;
      case Experiment::phase_sweep: run_phase_sweep(c, kernel, o); break;
      case Experiment::meanfield: run_meanfield(c, kernel, o); break;
      case Experiment::stability: run_stability(c, kernel, o); break;
      case Experiment::gronwall_check: run_gronwall(c, o); break;
      case Experiment::wasserstein: run_wasserstein(c, o); break;
      case Experiment::weak_residual: run_weak_residual(c, kernel, o); break;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    // Flush what we know with a partial marker.
    ExperimentReport partial;
    partial.experiment = std::string(to_string(c.experiment));
    partial.config = c.normalized;
    partial.results = {{"partial", true}, {"error", e.what()}};
    partial.check("run completed", false, e.what());
    write_file(dir / "report.json", partial.to_json().dump(2) + "\n");
    write_file(dir / "PARTIAL", std::string(e.what()) + "\n");
    err << "run aborted: " << e.what() << '\n';
    return 1;
  }

  // The library's own parameter echo sits next to the validated document.
  json details = o.report.config;
  o.report.config = c.normalized;
  if (!details.empty()) o.report.config["resolved"] = details;

  if (c.formats.count("json")) write_file(dir / "report.json", o.report.to_json().dump(2) + "\n");
  if (c.formats.count("csv"))
    for (const auto& t : o.csv) write_file(dir / t.name, t.body.str());
  if (c.formats.count("svg")) {
    const auto doc = o.report.to_json();
    for (auto kind : o.plots) {
      try {
        write_file(dir / (std::string(to_string(kind)) + ".svg"), render_svg(doc, kind));
      } catch (const ConfigError& e) {
        err << "plot " << to_string(kind) << " skipped: " << e.what() << '\n';
      }
    }
  }

  if (!quiet)
    for (const auto& a : o.report.assertions)
      out << (a.informational ? "INFO" : a.passed ? "PASS" : "FAIL") << ' ' << a.name
          << (a.detail.empty() ? "" : ": " + a.detail) << '\n';
  return o.report.passed() ? 0 : 1;
}

}  // namespace csflock::cli
