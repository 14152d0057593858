#include "csflock/experiments.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "csflock/errors.hpp"
#include "csflock/rng.hpp"

namespace csflock {

namespace {

using Clock = std::chrono::steady_clock;

json timing_block(Clock::time_point start) {
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  return {{"wall_seconds", secs}, {"threads", omp_get_max_threads()}};
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

double median(std::vector<double> xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(xs.begin(), xs.end());
  const std::size_t m = xs.size() / 2;
  return xs.size() % 2 ? xs[m] : 0.5 * (xs[m - 1] + xs[m]);
}

// JSON cannot carry NaN or infinities; those become null.
json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

// Least-squares slope and intercept of y on x.
std::pair<double, double> line_fit(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
  return {slope, my - slope * mx};
}

// Steps an ensemble along `path`, invoking visit(k, state) at every grid index.
// Returns the number of grid points visited (steps + 1 unless a step blew up).
template <class Visit>
std::size_t integrate(const Ensemble& init, const CommunicationKernel& kernel, double sigma,
                      Scheme scheme, const BrownianPath& path, Visit&& visit) {
  Stepper stepper(kernel, sigma, scheme);
  Ensemble state = init;
  state.set_time(0.0);
  visit(std::size_t{0}, state);
  const double dt = path.dt();
  for (std::size_t k = 0; k < path.steps(); ++k) {
    stepper.advance(state, dt, path.increment(k));
    state.set_time(static_cast<double>(k + 1) * dt);
    if (!state.all_finite()) return k + 1;
    visit(k + 1, state);
  }
  return path.steps() + 1;
}

SimConfig sim_config(double sigma, Scheme scheme, const BrownianPath& path, std::size_t stride) {
  SimConfig c;
  c.sigma = sigma;
  c.scheme = scheme;
  c.dt = path.dt();
  c.horizon = path.horizon();
  c.seed = path.seed();
  c.stride = stride;
  return c;
}

std::size_t steps_for(double horizon, double dt) {
  if (!(horizon > 0.0) || !(dt > 0.0)) throw ConfigError("need T > 0 and dt > 0");
  const double ratio = horizon / dt;
  const auto steps = static_cast<std::size_t>(std::llround(ratio));
  if (steps == 0 || std::abs(ratio - static_cast<double>(steps)) > 1e-9 * ratio)
    throw ConfigError("dt must divide T (T/dt = " + fmt(ratio) + ")");
  return steps;
}

// Generic value <= (1 + eps) bound scan.
template <class ValueAt, class BoundAt>
DecaySummary scan_bound(std::size_t points, double eps, ValueAt value_at, BoundAt bound_at) {
  DecaySummary s;
  s.points = points;
  s.eps_tol = eps;
  for (std::size_t k = 0; k < points; ++k) {
    const double value = value_at(k);
    const double bound = bound_at(k);
    bool violated;
    if (bound > 0.0) {
      const double rel = value / bound - 1.0;
      s.max_excess = std::max(s.max_excess, rel);
      s.max_abs_gap = std::max(s.max_abs_gap, std::abs(rel));
      violated = value > (1.0 + eps) * bound;
    } else {
      violated = value > 0.0;
    }
    if (violated) {
      if (s.violations == 0) {
        s.first_violation = k;
        s.first_value = value;
        s.first_bound = bound;
      }
      ++s.violations;
    }
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Reports

void ExperimentReport::check(std::string name, bool passed, std::string detail) {
  assertions.push_back({std::move(name), passed, false, std::move(detail)});
}

void ExperimentReport::inform(std::string name, bool passed, std::string detail) {
  assertions.push_back({std::move(name), passed, true, std::move(detail)});
}

bool ExperimentReport::passed() const {
  return std::all_of(assertions.begin(), assertions.end(),
                     [](const Assertion& a) { return a.informational || a.passed; });
}

json ExperimentReport::to_json() const {
  json list = json::array();
  for (const auto& a : assertions)
    list.push_back({{"name", a.name}, {"passed", a.passed}, {"informational", a.informational},
                    {"detail", a.detail}});
  return {{"schema_version", kSchemaVersion}, {"experiment", experiment}, {"config", config},
          {"results", results}, {"assertions", list}, {"timing", timing}};
}

ExperimentReport ExperimentReport::from_json(const json& doc) {
  try {
    if (!doc.is_object()) throw ConfigError("report must be a JSON object");
    for (const char* key : {"schema_version", "experiment", "config", "results", "assertions", "timing"})
      if (!doc.contains(key)) throw ConfigError(std::string("report is missing '") + key + "'");
    if (doc.at("schema_version").get<int>() != kSchemaVersion)
      throw ConfigError("unsupported report schema_version " + doc.at("schema_version").dump());
    ExperimentReport r;
    r.experiment = doc.at("experiment").get<std::string>();
    r.config = doc.at("config");
    r.results = doc.at("results");
    r.timing = doc.at("timing");
    for (const auto& a : doc.at("assertions"))
      r.assertions.push_back({a.at("name").get<std::string>(), a.at("passed").get<bool>(),
                              a.at("informational").get<bool>(), a.at("detail").get<std::string>()});
    return r;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("report does not match schema: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Fitting and tolerances

RateFit fit_decay_rate(std::span<const double> times, std::span<const double> values) {
  if (times.size() != values.size()) throw PreconditionError("times and values differ in length");
  if (values.size() < 10)
    throw PreconditionError("rate fit needs at least 10 samples, got " + std::to_string(values.size()));
  std::vector<double> logs(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] > 0.0))
      throw DomainError("rate fit needs positive values; entry " + std::to_string(i) + " is " +
                        fmt(values[i]));
    logs[i] = std::log(values[i]);
  }
  const auto [slope, intercept] = line_fit(times, logs);
  const double n = static_cast<double>(values.size());
  const double mt = std::accumulate(times.begin(), times.end(), 0.0) / n;
  const double my = std::accumulate(logs.begin(), logs.end(), 0.0) / n;
  double ssr = 0.0, sst = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double r = logs[i] - (intercept + slope * times[i]);
    ssr += r * r;
    sst += (logs[i] - my) * (logs[i] - my);
    sxx += (times[i] - mt) * (times[i] - mt);
  }
  RateFit fit;
  fit.rate = -slope;
  fit.samples = values.size();
  fit.std_error = sxx > 0.0 ? std::sqrt(ssr / (n - 2.0) / sxx) : 0.0;
  // A flat series has nothing left to explain.
  fit.r_squared = sst > 0.0 ? 1.0 - ssr / sst : 1.0;
  fit.residual_rms = std::sqrt(ssr / n);
  fit.t_begin = times.front();
  fit.t_end = times.back();
  return fit;
}

json to_json(const RateFit& f) {
  return {{"rate", f.rate},           {"std_error", f.std_error}, {"r_squared", f.r_squared},
          {"residual_rms", f.residual_rms}, {"samples", f.samples},    {"t_begin", f.t_begin},
          {"t_end", f.t_end}};
}

double pathwise_tolerance(double c, double dt, std::span<const double> brownian) {
  double sup = 0.0;
  for (double b : brownian) sup = std::max(sup, std::abs(b));
  return c * std::sqrt(dt) * (1.0 + sup);
}

std::vector<std::size_t> checkpoint_indices(std::size_t steps, std::size_t count) {
  if (count == 0) throw ConfigError("need at least one checkpoint");
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j <= count; ++j) {
    const std::size_t k = (j * steps + count / 2) / count;
    if (idx.empty() || k != idx.back()) idx.push_back(k);
  }
  return idx;
}

json to_json(const CommunicationKernel& kernel) {
  json j = {{"family", std::string(to_string(kernel.family()))},
            {"params", kernel.params()},
            {"psi_min", kernel.psi_min()},
            {"psi_max", kernel.psi_max()},
            {"lip", kernel.lip()}};
  if (std::isfinite(kernel.r_max())) j["r_max"] = kernel.r_max();
  return j;
}

json to_json(const Ensemble& ens) {
  const auto vbar = mean_velocity(ens);
  return {{"N", ens.size()}, {"d", ens.dim()}, {"mean_velocity", vbar},
          {"E0", variance_functional(ens, vbar)}, {"kinetic0", kinetic_energy(ens)}};
}

json to_json(const DecaySummary& s) {
  json j = {{"points", s.points},       {"violations", s.violations}, {"fraction", s.fraction()},
            {"max_excess", s.max_excess}, {"max_abs_gap", s.max_abs_gap}, {"eps_tol", s.eps_tol}};
  if (s.violations > 0)
    j["first_violation"] = {{"index", s.first_violation},
                            {"value", number_or_null(s.first_value)},
                            {"bound", number_or_null(s.first_bound)}};
  return j;
}

// ---------------------------------------------------------------------------
// Phase transition sweep

std::string_view to_string(Estimator e) { return e == Estimator::tilted ? "tilted" : "plain"; }

Estimator estimator_from_string(std::string_view name) {
  if (name == "tilted") return Estimator::tilted;
  if (name == "plain") return Estimator::plain;
  throw ConfigError("unknown estimator '" + std::string(name) + "'");
}

namespace {

// Per-realization weighted samples y_m(t_k) of E_t for one estimator.
struct EnsembleSamples {
  std::vector<std::vector<double>> y;  // [m][k]
  std::vector<std::size_t> valid;      // grid points available per realization
  std::size_t blowups = 0;
  std::size_t reruns = 0;
};

// One realization. Under the tilted estimator the system is driven by
// B = W + theta t with theta = -2 sqrt(2 sigma) and the sample is reweighted by
// the Girsanov density exp(-theta W_t - theta^2 t / 2), which keeps E[E_t]
// unbiased for every kernel while cancelling the lognormal factor exactly for
// constant psi.
void run_realization(const PhaseSweepConfig& cfg, const CommunicationKernel& kernel, double sigma,
                     Estimator est, const BrownianPath& w, std::vector<double>& y,
                     std::size_t& valid, bool& blew_up, bool& rerun) {
  const double theta = est == Estimator::tilted ? -2.0 * std::sqrt(2.0 * sigma) : 0.0;
  const auto wv = w.values();
  const auto vbar0 = mean_velocity(cfg.initial);
  const std::size_t steps = w.steps();
  const bool flocking = kernel.psi_min() > 2.0 * sigma;

  auto drive = [&](const BrownianPath& base) {
    if (theta == 0.0) return base;
    std::vector<double> inc(base.increments().begin(), base.increments().end());
    const double shift = theta * base.dt();
    for (double& x : inc) x += shift;
    return BrownianPath::from_increments(base.horizon(), std::move(inc), base.seed(), base.level());
  };

  y.assign(steps + 1, 0.0);
  blew_up = rerun = false;
  auto record = [&](std::size_t stride) {
    return [&, stride](std::size_t k, const Ensemble& e) {
      if (k % stride) return;
      y[k / stride] = variance_functional(e, vbar0);
    };
  };
  valid = integrate(cfg.initial, kernel, sigma, cfg.scheme, drive(w), record(1));
  if (valid <= steps) {
    blew_up = true;
    if (flocking) {
      // A flocking-regime blow-up is a step-size artefact: retry on dt / 2.
      rerun = true;
      const auto fine = w.refined();
      const std::size_t fine_valid =
          integrate(cfg.initial, kernel, sigma, cfg.scheme, drive(fine), record(2));
      valid = std::min(steps + 1, (fine_valid + 1) / 2);
    }
  }
  for (std::size_t k = 0; k < valid; ++k) {
    const double t = static_cast<double>(k) * w.dt();
    y[k] *= std::exp(-theta * wv[k] - 0.5 * theta * theta * t);
  }
}

EnsembleSamples collect(const PhaseSweepConfig& cfg, const CommunicationKernel& kernel, double sigma,
                        Estimator est, const std::vector<BrownianPath>& paths) {
  const std::size_t m = paths.size();
  EnsembleSamples out;
  out.y.resize(m);
  out.valid.resize(m);
  std::vector<char> blew(m, 0), rerun(m, 0);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < m; ++i) {
    bool b = false, r = false;
    run_realization(cfg, kernel, sigma, est, paths[i], out.y[i], out.valid[i], b, r);
    blew[i] = b;
    rerun[i] = r;
  }
  for (std::size_t i = 0; i < m; ++i) {
    out.blowups += blew[i];
    out.reruns += rerun[i];
  }
  return out;
}

struct MeanSeries {
  std::vector<double> mean, se;
  std::size_t usable = 0;  // grid points covered by every realization
};

MeanSeries mean_over(const EnsembleSamples& s, std::size_t skip_group = SIZE_MAX, std::size_t groups = 1) {
  MeanSeries out;
  out.usable = *std::min_element(s.valid.begin(), s.valid.end());
  out.mean.assign(out.usable, 0.0);
  out.se.assign(out.usable, 0.0);
  for (std::size_t k = 0; k < out.usable; ++k) {
    double sum = 0.0, sum2 = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      if (i % groups == skip_group) continue;
      sum += s.y[i][k];
      ++n;
    }
    const double mean = sum / static_cast<double>(n);
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      if (i % groups == skip_group) continue;
      sum2 += (s.y[i][k] - mean) * (s.y[i][k] - mean);
    }
    out.mean[k] = mean;
    out.se[k] = n > 1 ? std::sqrt(sum2 / static_cast<double>(n - 1) / static_cast<double>(n)) : 0.0;
  }
  return out;
}

// Rate fit on the prefix where the mean is resolved (> 10 standard errors)
// and below the growth cap of 1e6 E_0. Standard error by delete-a-group
// jackknife over realizations.
std::optional<RateFit> fit_samples(const EnsembleSamples& s, double dt, std::size_t groups) {
  const auto full = mean_over(s);
  if (full.usable == 0) return std::nullopt;
  const double e0 = full.mean[0];
  std::size_t end = 0;
  while (end < full.usable && full.mean[end] > 10.0 * full.se[end] && full.mean[end] <= 1e6 * e0) ++end;
  if (end < 10) return std::nullopt;
  std::vector<double> times(end);
  for (std::size_t k = 0; k < end; ++k) times[k] = static_cast<double>(k) * dt;
  auto fit = fit_decay_rate(times, std::span<const double>(full.mean).first(end));

  groups = std::min(groups, s.y.size());
  if (groups >= 2) {
    std::vector<double> rates;
    for (std::size_t g = 0; g < groups; ++g) {
      const auto part = mean_over(s, g, groups);
      bool ok = true;
      for (std::size_t k = 0; k < end; ++k) ok = ok && part.mean[k] > 0.0;
      if (!ok) continue;
      rates.push_back(fit_decay_rate(times, std::span<const double>(part.mean).first(end)).rate);
    }
    if (rates.size() >= 2) {
      const double g = static_cast<double>(rates.size());
      const double mean = std::accumulate(rates.begin(), rates.end(), 0.0) / g;
      double ss = 0.0;
      for (double r : rates) ss += (r - mean) * (r - mean);
      fit.std_error = std::sqrt((g - 1.0) / g * ss);
    }
  }
  return fit;
}

}  // namespace

PhaseSweepResult phase_sweep(const PhaseSweepConfig& cfg, const CommunicationKernel& kernel) {
  const auto start = Clock::now();
  if (cfg.sigmas.empty()) throw ConfigError("phase sweep needs at least one sigma");
  if (cfg.realizations < 30) throw ConfigError("phase sweep needs at least 30 realizations");
  if (cfg.initial.size() == 0) throw ConfigError("phase sweep needs an initial ensemble");
  for (double s : cfg.sigmas)
    if (!(s >= 0.0)) throw ConfigError("sigma must be >= 0");
  const std::size_t steps = steps_for(cfg.horizon, cfg.dt);
  const double allowance = cfg.allowance < 0.0 ? 10.0 * cfg.dt : cfg.allowance;
  const std::size_t stride = std::max<std::size_t>(1, cfg.series_stride);

  std::vector<BrownianPath> paths;
  paths.reserve(cfg.realizations);
  for (std::size_t m = 0; m < cfg.realizations; ++m)
    paths.push_back(BrownianPath::sample(cfg.horizon, steps, derive_seed(cfg.seed, m)));

  PhaseSweepResult result;
  auto& rep = result.report;
  rep.experiment = "phase-sweep";
  rep.config = {{"sigmas", cfg.sigmas},          {"realizations", cfg.realizations},
                {"dt", cfg.dt},                  {"T", cfg.horizon},
                {"scheme", to_string(cfg.scheme)}, {"seed", cfg.seed},
                {"estimator", to_string(cfg.estimator)}, {"also_plain", cfg.also_plain},
                {"allowance", allowance},        {"jackknife_groups", cfg.jackknife_groups},
                {"kernel", to_json(kernel)},     {"initial", to_json(cfg.initial)}};

  const double pm = kernel.psi_min(), pM = kernel.psi_max();
  json per_sigma = json::array();
  for (double sigma : cfg.sigmas) {
    SigmaOutcome out;
    out.sigma = sigma;
    const auto primary = collect(cfg, kernel, sigma, cfg.estimator, paths);
    out.blowups = primary.blowups;
    out.reruns = primary.reruns;
    const auto fit = fit_samples(primary, cfg.dt, cfg.jackknife_groups);
    const auto series = mean_over(primary);
    for (std::size_t k = 0; k < series.usable; k += stride) {
      out.times.push_back(static_cast<double>(k) * cfg.dt);
      out.mean.push_back(series.mean[k]);
      out.std_error.push_back(series.se[k]);
    }

    std::optional<EnsembleSamples> plain_samples;
    if (cfg.estimator == Estimator::plain) plain_samples = primary;
    if (cfg.also_plain) {
      const Estimator other = cfg.estimator == Estimator::tilted ? Estimator::plain : Estimator::tilted;
      auto samples = collect(cfg, kernel, sigma, other, paths);
      if (auto f = fit_samples(samples, cfg.dt, cfg.jackknife_groups)) out.other = *f;
      if (other == Estimator::plain) plain_samples = std::move(samples);
    }
    if (plain_samples) {
      for (std::size_t m = 0; m < plain_samples->y.size(); ++m) {
        const auto& y = plain_samples->y[m];
        if (plain_samples->valid[m] == steps + 1 && y.front() > 0.0 && y.back() > 0.0)
          out.pathwise_rates.push_back(-std::log(y.back() / y.front()) / cfg.horizon);
      }
    }

    const std::string name = "rate window sigma=" + fmt(sigma);
    json entry = {{"sigma", sigma}, {"blowups", out.blowups}, {"reruns", out.reruns}};
    if (fit) {
      out.fit = *fit;
      const double delta = 3.0 * fit->std_error + allowance;
      out.lower = 2.0 * (pm - 2.0 * sigma) - delta;
      out.upper = 2.0 * (pM - 2.0 * sigma) + delta;
      out.within = fit->rate >= out.lower && fit->rate <= out.upper;
      rep.check(name, out.within,
                "r=" + fmt(fit->rate) + " se=" + fmt(fit->std_error) + " window [" + fmt(out.lower) +
                    ", " + fmt(out.upper) + "] (" + std::string(to_string(cfg.estimator)) + ")");
      entry["fit"] = to_json(*fit);
      entry["lower"] = out.lower;
      entry["upper"] = out.upper;
      entry["within"] = out.within;
    } else {
      rep.check(name, false, "mean series never resolved above 10 standard errors for 10 samples");
      entry["fit"] = nullptr;
    }
    if (out.other) {
      const double delta = 3.0 * out.other->std_error + allowance;
      const bool ok = out.other->rate >= 2.0 * (pm - 2.0 * sigma) - delta &&
                      out.other->rate <= 2.0 * (pM - 2.0 * sigma) + delta;
      const std::string other_name =
          cfg.estimator == Estimator::tilted ? std::string("plain") : std::string("tilted");
      rep.inform(name + " (" + other_name + ")", ok,
                 "r=" + fmt(out.other->rate) + " se=" + fmt(out.other->std_error));
      entry["other_estimator"] = other_name;
      entry["other_fit"] = to_json(*out.other);
    }
    if (out.blowups > 0)
      rep.inform("blow-ups sigma=" + fmt(sigma), out.reruns == out.blowups,
                 std::to_string(out.blowups) + " realizations blew up, " + std::to_string(out.reruns) +
                     " rerun at dt/2");
    entry["series"] = {{"times", out.times}, {"mean", out.mean}, {"std_error", out.std_error}};
    entry["pathwise_rates"] = out.pathwise_rates;
    per_sigma.push_back(entry);
    result.outcomes.push_back(std::move(out));
  }

  // Empirical critical sigma: first sign change of r(sigma), linear interpolation.
  std::vector<std::size_t> order(result.outcomes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return result.outcomes[a].sigma < result.outcomes[b].sigma; });
  for (std::size_t q = 0; q + 1 < order.size(); ++q) {
    const auto& a = result.outcomes[order[q]];
    const auto& b = result.outcomes[order[q + 1]];
    if (a.fit.samples == 0 || b.fit.samples == 0) continue;
    if (a.fit.rate > 0.0 && b.fit.rate <= 0.0) {
      result.critical_sigma = a.sigma + (b.sigma - a.sigma) * a.fit.rate / (a.fit.rate - b.fit.rate);
      break;
    }
  }
  const double lo = 0.5 * pm - 0.05, hi = 0.5 * pM + 0.05;
  if (result.critical_sigma) {
    const double s = *result.critical_sigma;
    rep.check("critical sigma in [" + fmt(lo) + ", " + fmt(hi) + "]", s >= lo && s <= hi,
              "sigma*=" + fmt(s));
  } else {
    rep.inform("critical sigma", false, "no sign change of the fitted rate inside the sweep");
  }

  rep.results = {{"psi_min", pm},
                 {"psi_max", pM},
                 {"E0", variance_functional(cfg.initial, mean_velocity(cfg.initial))},
                 {"critical_sigma", result.critical_sigma ? json(*result.critical_sigma) : json(nullptr)},
                 {"critical_window", {lo, hi}},
                 {"sigmas", per_sigma}};
  rep.timing = timing_block(start);
  return result;
}

// ---------------------------------------------------------------------------
// Pathwise checks

DecaySummary as_decay_check(const ObservableSeries& obs, const CommunicationKernel& kernel,
                            double sigma, double dt, double c) {
  if (!(kernel.psi_min() > 0.0)) throw ConfigError("almost-sure decay check needs psi_min > 0");
  const double eps = pathwise_tolerance(c, dt, obs.brownian);
  const double e0 = obs.E.front();
  const double root = 2.0 * std::sqrt(2.0 * sigma);
  return scan_bound(
      obs.size(), eps, [&](std::size_t k) { return obs.E[k]; },
      [&](std::size_t k) {
        return e0 * std::exp(-2.0 * kernel.psi_min() * obs.times[k] - root * obs.brownian[k]);
      });
}

EnergySupportSummary energy_support_check(const ObservableSeries& obs,
                                          const CommunicationKernel& kernel, double sigma,
                                          double dt, double c) {
  const double eps = pathwise_tolerance(c, dt, obs.brownian);
  const double root = 2.0 * std::sqrt(2.0 * sigma);
  const double k0 = obs.E.front();  // centred kinetic energy at t = 0
  const double r0 = obs.support_radius.front();
  const double pM = kernel.psi_max();
  auto growth = [&](std::size_t k) { return std::exp(pM * obs.times[k] - root * obs.brownian[k]); };
  // (1 - e^{-psi_M t}) / psi_M, with its psi_M -> 0 limit t
  auto proof_factor = [&](double t) { return pM > 0.0 ? -std::expm1(-pM * t) / pM : t; };

  EnergySupportSummary s;
  s.kinetic = scan_bound(
      obs.size(), eps, [&](std::size_t k) { return obs.E[k]; },
      [&](std::size_t k) { return k0 * std::exp(-root * obs.brownian[k]); });
  s.support_proof = scan_bound(
      obs.size(), eps, [&](std::size_t k) { return obs.support_radius[k] * obs.support_radius[k]; },
      [&](std::size_t k) { return r0 * r0 * growth(k) * (k0 * proof_factor(obs.times[k]) + 1.0); });
  s.support_stated = scan_bound(
      obs.size(), eps, [&](std::size_t k) { return obs.support_radius[k] * obs.support_radius[k]; },
      [&](std::size_t k) {
        const double inv = pM > 0.0 ? 1.0 / pM : std::numeric_limits<double>::infinity();
        return r0 * r0 * growth(k) * (k0 * inv + 1.0);
      });
  return s;
}

PathwiseStudyResult pathwise_study(const PathwiseStudyConfig& cfg, const CommunicationKernel& kernel) {
  const auto start = Clock::now();
  if (cfg.paths == 0) throw ConfigError("pathwise study needs at least one path");
  if (!(cfg.sigma >= 0.0)) throw ConfigError("sigma must be >= 0");
  if (!(kernel.psi_min() > 0.0)) throw ConfigError("almost-sure decay check needs psi_min > 0");
  const std::size_t steps = steps_for(cfg.horizon, cfg.dt);
  const unsigned levels = cfg.refinements + 1;

  PathwiseStudyResult res;
  res.decay.assign(levels, std::vector<DecaySummary>(cfg.paths));
  res.energy.assign(levels, std::vector<EnergySupportSummary>(cfg.paths));

#pragma omp parallel for schedule(dynamic)
  for (std::size_t m = 0; m < cfg.paths; ++m) {
    auto path = BrownianPath::sample(cfg.horizon, steps, derive_seed(cfg.seed, m));
    for (unsigned l = 0; l < levels; ++l) {
      if (l > 0) path = path.refined();
      const auto sim = simulate(cfg.initial, sim_config(cfg.sigma, cfg.scheme, path, 0), kernel, path);
      res.decay[l][m] = as_decay_check(sim.observables, kernel, cfg.sigma, path.dt(), cfg.tolerance_c);
      res.energy[l][m] = energy_support_check(sim.observables, kernel, cfg.sigma, path.dt(), cfg.tolerance_c);
    }
  }

  auto& rep = res.report;
  rep.experiment = "pathwise";
  rep.config = {{"sigma", cfg.sigma},     {"dt", cfg.dt},          {"T", cfg.horizon},
                {"scheme", to_string(cfg.scheme)}, {"seed", cfg.seed}, {"paths", cfg.paths},
                {"refinements", cfg.refinements}, {"tolerance_c", cfg.tolerance_c},
                {"kernel", to_json(kernel)}, {"initial", to_json(cfg.initial)}};

  json per_level = json::array();
  json counterexamples = json::array();
  std::size_t kinetic_bad = 0, proof_bad = 0, stated_bad = 0;
  for (unsigned l = 0; l < levels; ++l) {
    std::vector<double> excess;
    std::size_t viol = 0, pts = 0;
    std::size_t lk = 0, lp = 0, ls = 0;
    for (std::size_t m = 0; m < cfg.paths; ++m) {
      const auto& d = res.decay[l][m];
      excess.push_back(d.max_excess);
      viol += d.violations;
      pts += d.points;
      const auto& e = res.energy[l][m];
      auto dump = [&](const char* check, const DecaySummary& s) {
        if (s.violations == 0 || counterexamples.size() >= cfg.counterexample_limit) return;
        counterexamples.push_back({{"check", check},
                                   {"path", m},
                                   {"level", l},
                                   {"index", s.first_violation},
                                   {"t", static_cast<double>(s.first_violation) * cfg.dt / std::ldexp(1.0, l)},
                                   {"value", number_or_null(s.first_value)},
                                   {"bound", number_or_null(s.first_bound)},
                                   {"eps_tol", s.eps_tol}});
      };
      dump("kinetic", e.kinetic);
      dump("support_proof", e.support_proof);
      dump("support_stated", e.support_stated);
      lk += e.kinetic.violations;
      lp += e.support_proof.violations;
      ls += e.support_stated.violations;
    }
    kinetic_bad += lk;
    proof_bad += lp;
    stated_bad += ls;
    res.median_max_excess.push_back(median(excess));
    const double frac = pts ? static_cast<double>(viol) / static_cast<double>(pts) : 0.0;
    if (l == 0) res.base_violation_fraction = frac;
    per_level.push_back({{"level", l},
                         {"dt", cfg.dt / std::ldexp(1.0, l)},
                         {"decay_violation_fraction", frac},
                         {"median_max_excess", res.median_max_excess.back()},
                         {"kinetic_violations", lk},
                         {"support_proof_violations", lp},
                         {"support_stated_violations", ls}});
  }

  rep.check("decay violations below " + fmt(100.0 * cfg.max_violation_fraction) + "% at base dt",
            res.base_violation_fraction < cfg.max_violation_fraction,
            "fraction=" + fmt(res.base_violation_fraction));
  bool monotone = true;
  std::string trail;
  for (unsigned l = 0; l < levels; ++l) {
    if (l > 0 && res.median_max_excess[l] > res.median_max_excess[l - 1]) monotone = false;
    trail += (l ? " -> " : "") + fmt(res.median_max_excess[l]);
  }
  rep.check("median max decay excess nonincreasing under refinement", monotone, trail);
  rep.check("kinetic energy bound holds", kinetic_bad == 0, std::to_string(kinetic_bad) + " violations");
  rep.check("velocity support bound holds (proof form)", proof_bad == 0,
            std::to_string(proof_bad) + " violations");
  rep.check("velocity support bound holds (stated form)", stated_bad == 0,
            std::to_string(stated_bad) + " violations");

  rep.results = {{"levels", per_level}, {"counterexamples", counterexamples}};
  rep.timing = timing_block(start);
  return res;
}

// ---------------------------------------------------------------------------
// Coupled stability

namespace {

std::vector<Ensemble> states_at(const Ensemble& init, const CommunicationKernel& kernel, double sigma,
                                Scheme scheme, const BrownianPath& path,
                                const std::vector<std::size_t>& idx) {
  std::vector<Ensemble> out;
  out.reserve(idx.size());
  std::size_t next = 0;
  const std::size_t reached = integrate(init, kernel, sigma, scheme, path, [&](std::size_t k, const Ensemble& e) {
    if (next < idx.size() && idx[next] == k) {
      out.push_back(e);
      ++next;
    }
  });
  if (reached <= path.steps()) throw BlowUpError(reached, static_cast<double>(reached) * path.dt());
  return out;
}

}  // namespace

StabilityRun coupled_distance(const Ensemble& a, const Ensemble& b, const StabilityConfig& cfg,
                              const CommunicationKernel& kernel, const BrownianPath& path) {
  if (a.size() != b.size() || a.dim() != b.dim())
    throw PreconditionError("coupled ensembles must have equal size and dimension");
  const auto idx = checkpoint_indices(path.steps(), cfg.checkpoints);
  const auto sa = states_at(a, kernel, cfg.sigma, cfg.scheme, path, idx);
  const auto sb = states_at(b, kernel, cfg.sigma, cfg.scheme, path, idx);
  StabilityRun run;
  run.times.resize(idx.size());
  run.distance.resize(idx.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t q = 0; q < idx.size(); ++q) {
    run.times[q] = static_cast<double>(idx[q]) * path.dt();
    run.distance[q] = w2_exact_uniform(EmpiricalMeasure::from_ensemble(sa[q], cfg.velocity_weight),
                                       EmpiricalMeasure::from_ensemble(sb[q], cfg.velocity_weight))
                          .distance;
  }
  const double w0 = run.distance.front();
  const double sup = *std::max_element(run.distance.begin(), run.distance.end());
  if (w0 > 0.0) {
    run.amplification = sup / w0;
  } else {
    run.determinism_ok = sup == 0.0;
  }
  return run;
}

StabilitySweepResult stability_experiment(const Ensemble& base, std::span<const double> etas,
                                          const StabilityConfig& cfg,
                                          const CommunicationKernel& kernel,
                                          const BrownianPath& path, std::uint64_t seed,
                                          double max_spread) {
  const auto start = Clock::now();
  if (etas.empty()) throw ConfigError("stability sweep needs at least one perturbation size");
  for (double e : etas)
    if (!(e > 0.0)) throw ConfigError("perturbation sizes must be > 0");

  // Fixed perturbation direction with unit rms over particles.
  const std::size_t n = base.size(), d = base.dim();
  std::vector<double> u(n * d);
  NormalStream normal(derive_seed(seed, 0x70657274ULL));
  double ss = 0.0;
  for (double& x : u) {
    x = normal();
    ss += x * x;
  }
  const double scale = 1.0 / std::sqrt(ss / static_cast<double>(n));
  for (double& x : u) x *= scale;

  StabilitySweepResult res;
  res.etas.assign(etas.begin(), etas.end());
  for (double eta : etas) {
    Ensemble pert = base;
    for (std::size_t q = 0; q < n * d; ++q) pert.v()[q] += eta * u[q];
    res.runs.push_back(coupled_distance(base, pert, cfg, kernel, path));
  }
  res.zero = coupled_distance(base, base, cfg, kernel, path);

  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  bool finite = true;
  for (const auto& r : res.runs) {
    finite = finite && std::isfinite(r.amplification) && r.amplification > 0.0;
    lo = std::min(lo, r.amplification);
    hi = std::max(hi, r.amplification);
  }
  res.spread = finite ? hi / lo : std::numeric_limits<double>::infinity();
  const bool zero_ok = std::all_of(res.zero.distance.begin(), res.zero.distance.end(),
                                   [](double w) { return w == 0.0; });

  auto& rep = res.report;
  rep.experiment = "stability";
  rep.config = {{"sigma", cfg.sigma},       {"scheme", to_string(cfg.scheme)},
                {"checkpoints", cfg.checkpoints}, {"velocity_weight", cfg.velocity_weight},
                {"etas", res.etas},         {"seed", seed},
                {"dt", path.dt()},          {"T", path.horizon()},
                {"path_seed", path.seed()}, {"kernel", to_json(kernel)},
                {"initial", to_json(base)}};
  json runs = json::array();
  for (std::size_t q = 0; q < res.runs.size(); ++q)
    runs.push_back({{"eta", res.etas[q]},
                    {"times", res.runs[q].times},
                    {"w2", res.runs[q].distance},
                    {"amplification", number_or_null(res.runs[q].amplification)}});
  rep.results = {{"runs", runs},
                 {"zero_perturbation", {{"times", res.zero.times}, {"w2", res.zero.distance}}},
                 {"spread", number_or_null(res.spread)}};
  rep.check("amplification finite", finite);
  rep.check("amplification within factor " + fmt(max_spread) + " across perturbations",
            finite && res.spread <= max_spread, "spread=" + fmt(res.spread));
  rep.check("zero perturbation stays at distance 0", zero_ok && res.zero.determinism_ok);
  rep.timing = timing_block(start);
  return res;
}

// ---------------------------------------------------------------------------
// Mean-field Cauchy behaviour

MeanfieldResult meanfield_study(const MeanfieldConfig& cfg, const CommunicationKernel& kernel,
                                const BrownianPath& path) {
  const auto start = Clock::now();
  if (cfg.cells.size() < 2) throw ConfigError("mean-field study needs at least two grid levels");
  for (std::size_t j = 0; j + 1 < cfg.cells.size(); ++j)
    if (cfg.cells[j] == 0 || cfg.cells[j + 1] <= cfg.cells[j] || cfg.cells[j + 1] % cfg.cells[j] != 0)
      throw ConfigError("cells_per_dim must increase with each level nested in the next");
  if (cfg.particles_per_atom == 0) throw ConfigError("particles_per_atom must be >= 1");
  const std::size_t dim = cfg.law.phase_dim();
  const std::size_t levels = cfg.cells.size();
  const auto idx = checkpoint_indices(path.steps(), cfg.checkpoints);

  MeanfieldResult res;
  std::vector<std::vector<Ensemble>> states(levels);
  for (std::size_t j = 0; j < levels; ++j) {
    const auto q = quantize_grid(cfg.law, cfg.cells[j], cfg.lo, cfg.hi);
    std::size_t n = cfg.particles_per_atom;
    for (std::size_t k = 0; k < dim; ++k) n *= cfg.cells[j];
    const auto ens = to_uniform_ensemble(q, n);
    res.particles.push_back(n);
    states[j] = states_at(ens, kernel, cfg.sigma, cfg.scheme, path, idx);
  }

  auto distance = [&](std::size_t j, std::size_t q) {
    if (j == levels - 1) return 0.0;  // N_max against itself
    return w2(EmpiricalMeasure::from_ensemble(states[j][q]),
              EmpiricalMeasure::from_ensemble(states[levels - 1][q]))
        .distance;
  };
  res.initial_distance.assign(levels, 0.0);
  res.sup_distance.assign(levels, 0.0);
  std::vector<std::vector<double>> series(levels, std::vector<double>(idx.size(), 0.0));
#pragma omp parallel for collapse(2) schedule(dynamic)
  for (std::size_t j = 0; j < levels; ++j)
    for (std::size_t q = 0; q < idx.size(); ++q) series[j][q] = distance(j, q);
  for (std::size_t j = 0; j < levels; ++j) {
    res.initial_distance[j] = series[j][0];
    res.sup_distance[j] = *std::max_element(series[j].begin(), series[j].end());
  }

  auto& rep = res.report;
  rep.experiment = "meanfield";
  rep.config = {{"law", std::string(to_string(cfg.law.kind))},
                {"lo", cfg.lo},
                {"hi", cfg.hi},
                {"cells", cfg.cells},
                {"particles_per_atom", cfg.particles_per_atom},
                {"sigma", cfg.sigma},
                {"scheme", to_string(cfg.scheme)},
                {"checkpoints", cfg.checkpoints},
                {"dt", path.dt()},
                {"T", path.horizon()},
                {"path_seed", path.seed()},
                {"kernel", to_json(kernel)}};

  bool monotone = true;
  std::string trail;
  for (std::size_t j = 0; j < levels; ++j) {
    if (j > 0 && res.sup_distance[j] > (1.0 + cfg.monotone_slack) * res.sup_distance[j - 1]) monotone = false;
    trail += (j ? " -> " : "") + fmt(res.sup_distance[j]);
  }
  rep.check("D_N nonincreasing within " + fmt(100.0 * cfg.monotone_slack) + "%", monotone, trail);

  // Initial quantization distance should shrink like the cell width.
  for (std::size_t j = 0; j + 2 < levels; ++j) {
    const double expected = static_cast<double>(cfg.cells[j]) / static_cast<double>(cfg.cells[j + 1]);
    const double ratio = res.initial_distance[j + 1] / res.initial_distance[j];
    rep.check("initial W2 ratio cells " + std::to_string(cfg.cells[j]) + "->" + std::to_string(cfg.cells[j + 1]),
              std::abs(ratio - expected) <= cfg.halving_tolerance * expected,
              "ratio=" + fmt(ratio) + " expected " + fmt(expected));
  }

  // D_N <= C W0_N^alpha fitted on the levels below N_max.
  std::vector<double> lx, ly;
  for (std::size_t j = 0; j + 1 < levels; ++j)
    if (res.initial_distance[j] > 0.0 && res.sup_distance[j] > 0.0) {
      lx.push_back(std::log(res.initial_distance[j]));
      ly.push_back(std::log(res.sup_distance[j]));
    }
  if (lx.size() >= 2) {
    res.fit_alpha = line_fit(lx, ly).first;
  } else {
    res.fit_alpha = 1.0;
  }
  for (std::size_t q = 0; q < lx.size(); ++q)
    res.fit_c = std::max(res.fit_c, std::exp(ly[q] - res.fit_alpha * lx[q]));
  rep.check("power-law fit exponent alpha > 0", res.fit_alpha > 0.0,
            "C=" + fmt(res.fit_c) + " alpha=" + fmt(res.fit_alpha) +
                (lx.size() < 2 ? " (single level; alpha fixed at 1)" : ""));
  if (cfg.sigma == 0.0 && kernel.family() == KernelFamily::constant) {
    bool contracted = true;
    for (std::size_t j = 0; j + 1 < levels; ++j)
      contracted = contracted && res.sup_distance[j] <= res.initial_distance[j] * (1.0 + 1e-12);
    rep.inform("noise-free constant kernel: D_N <= W2 at t=0", contracted);
  }

  json lv = json::array();
  for (std::size_t j = 0; j < levels; ++j)
    lv.push_back({{"cells", cfg.cells[j]},
                  {"N", res.particles[j]},
                  {"initial_w2", res.initial_distance[j]},
                  {"D_N", res.sup_distance[j]},
                  {"w2_series", series[j]}});
  json times = json::array();
  for (std::size_t k : idx) times.push_back(static_cast<double>(k) * path.dt());
  rep.results = {{"levels", lv}, {"times", times}, {"fit", {{"C", res.fit_c}, {"alpha", res.fit_alpha}}}};
  rep.timing = timing_block(start);
  return res;
}

// ---------------------------------------------------------------------------
// Stochastic Gronwall

GronwallResult gronwall_check(const GronwallInstance& inst, double c) {
  const auto start = Clock::now();
  if (inst.path == nullptr) throw ConfigError("Gronwall instance needs a Brownian path");
  if (!inst.forcing) throw ConfigError("Gronwall instance needs a forcing function");
  if (!(inst.x0 >= 0.0)) throw DomainError("Gronwall check needs X0 >= 0");
  const auto& path = *inst.path;
  const double dt = path.dt();
  if (!(dt * (inst.c1 * inst.c1 + inst.c2 * inst.c2) < 0.1))
    throw ConfigError("grid too coarse: dt (c1^2 + c2^2) must be < 0.1");
  const std::size_t steps = path.steps();
  const auto b = path.values();

  GronwallResult res;
  res.times.resize(steps + 1);
  std::vector<double> a(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) {
    res.times[k] = static_cast<double>(k) * dt;
    a[k] = inst.forcing(res.times[k]);
    if (!(a[k] >= 0.0)) throw ConfigError("forcing A must be >= 0 on the grid");
  }

  res.x.resize(steps + 1);
  res.x[0] = inst.x0;
  for (std::size_t k = 0; k < steps; ++k)
    res.x[k + 1] = res.x[k] + (inst.c1 * res.x[k] + a[k]) * dt - inst.c2 * res.x[k] * path.increment(k);

  const double drift = inst.c1 - 0.5 * inst.c2 * inst.c2;
  res.stated.resize(steps + 1);
  res.variant.resize(steps + 1);
  double integral = 0.0;  // left-endpoint sum of e^{-drift s} e^{c2 B_s} A_s ds
  for (std::size_t k = 0; k <= steps; ++k) {
    const double g = std::exp(drift * res.times[k] - inst.c2 * b[k]);
    res.stated[k] = inst.x0 * g * (integral + 1.0);
    res.variant[k] = g * (inst.x0 + integral);
    if (k < steps) integral += std::exp(-drift * res.times[k] + inst.c2 * b[k]) * a[k] * dt;
  }

  const double eps = pathwise_tolerance(c, dt, b);
  auto xs = [&](std::size_t k) { return res.x[k]; };
  res.stated_check = scan_bound(steps + 1, eps, xs, [&](std::size_t k) { return res.stated[k]; });
  res.variant_check = scan_bound(steps + 1, eps, xs, [&](std::size_t k) { return res.variant[k]; });
  res.max_rel_gap_stated = res.stated_check.max_abs_gap;
  res.max_rel_gap_variant = res.variant_check.max_abs_gap;

  auto& rep = res.report;
  rep.experiment = "gronwall-check";
  rep.config = {{"c1", inst.c1},       {"c2", inst.c2},       {"A", inst.forcing_label},
                {"X0", inst.x0},       {"dt", dt},            {"T", path.horizon()},
                {"path_seed", path.seed()}, {"tolerance_c", c}};
  rep.check("variant bound (integral term not scaled by X0) holds", res.variant_check.violations == 0,
            std::to_string(res.variant_check.violations) + " violations, max excess " +
                fmt(res.variant_check.max_excess));
  std::string stated_detail = std::to_string(res.stated_check.violations) + " violations";
  if (inst.x0 == 0.0 && res.x.back() > 0.0)
    stated_detail += "; stated form evaluates to 0 with X0 = 0 while X_T = " + fmt(res.x.back());
  rep.inform("stated bound (integral term scaled by X0) holds", res.stated_check.violations == 0,
             stated_detail);
  const std::size_t thin = std::max<std::size_t>(1, steps / 400);
  json t = json::array(), x = json::array(), st = json::array(), va = json::array();
  for (std::size_t k = 0; k <= steps; k += thin) {
    t.push_back(res.times[k]);
    x.push_back(res.x[k]);
    st.push_back(res.stated[k]);
    va.push_back(res.variant[k]);
  }
  rep.results = {{"stated", to_json(res.stated_check)},
                 {"variant", to_json(res.variant_check)},
                 {"max_rel_gap_stated", res.max_rel_gap_stated},
                 {"max_rel_gap_variant", res.max_rel_gap_variant},
                 {"stated_discrepancy", res.stated_check.violations > 0},
                 {"series", {{"times", t}, {"X", x}, {"stated", st}, {"variant", va}}}};
  rep.timing = timing_block(start);
  return res;
}

// ---------------------------------------------------------------------------
// Refinement studies

namespace {

std::vector<BrownianPath> level_paths(const RefinementConfig& cfg, std::size_t seed_index) {
  const std::size_t steps = steps_for(cfg.horizon, cfg.dt);
  std::vector<BrownianPath> out;
  out.push_back(BrownianPath::sample(cfg.horizon, steps, derive_seed(cfg.seed, seed_index)));
  for (unsigned l = 1; l < cfg.levels; ++l) out.push_back(out.back().refined());
  return out;
}

json refinement_config(const RefinementConfig& cfg, const CommunicationKernel& kernel) {
  return {{"sigma", cfg.sigma}, {"dt", cfg.dt},       {"T", cfg.horizon},
          {"levels", cfg.levels}, {"seeds", cfg.seeds}, {"seed", cfg.seed},
          {"kernel", to_json(kernel)}, {"initial", to_json(cfg.initial)}};
}

}  // namespace

ResidualStudyResult weak_residual_study(const RefinementConfig& cfg, const CommunicationKernel& kernel,
                                        const TestFunction& phi, double ratio_lo, double ratio_hi) {
  const auto start = Clock::now();
  if (cfg.levels < 2) throw ConfigError("residual study needs at least two levels");
  if (cfg.seeds == 0) throw ConfigError("residual study needs at least one seed");
  ResidualStudyResult res;
  for (unsigned l = 0; l < cfg.levels; ++l) res.dts.push_back(cfg.dt / std::ldexp(1.0, l));
  res.residual.assign(cfg.seeds, std::vector<double>(cfg.levels, 0.0));
#pragma omp parallel for schedule(dynamic)
  for (std::size_t s = 0; s < cfg.seeds; ++s) {
    const auto paths = level_paths(cfg, s);
    for (unsigned l = 0; l < cfg.levels; ++l) {
      const auto sc = sim_config(cfg.sigma, Scheme::ito_euler, paths[l], 1);
      const auto sim = simulate(cfg.initial, sc, kernel, paths[l]);
      res.residual[s][l] = weak_form_residual(sim.trajectory, paths[l], sc, kernel, phi);
    }
  }
  auto& rep = res.report;
  rep.experiment = "weak-residual";
  rep.config = refinement_config(cfg, kernel);
  rep.config["test_function"] = phi.family() == TestFamily::gaussian_bump ? "gaussian_bump" : "polynomial_cutoff";
  json ratios = json::array();
  for (unsigned l = 0; l + 1 < cfg.levels; ++l) {
    std::vector<double> r;
    for (std::size_t s = 0; s < cfg.seeds; ++s)
      r.push_back(res.residual[s][l + 1] > 0.0 ? res.residual[s][l] / res.residual[s][l + 1]
                                               : std::numeric_limits<double>::infinity());
    res.median_ratio.push_back(median(r));
    const double m = res.median_ratio.back();
    rep.check("median Richardson ratio dt=" + fmt(res.dts[l]) + " in [" + fmt(ratio_lo) + ", " + fmt(ratio_hi) + "]",
              m >= ratio_lo && m <= ratio_hi, "median=" + fmt(m));
    ratios.push_back(number_or_null(m));
  }
  rep.results = {{"dts", res.dts}, {"residual", res.residual}, {"median_ratio", ratios}};
  rep.timing = timing_block(start);
  return res;
}

SchemeGapResult scheme_consistency_study(const RefinementConfig& cfg, const CommunicationKernel& kernel,
                                         double min_order) {
  const auto start = Clock::now();
  if (cfg.levels < 2) throw ConfigError("scheme study needs at least two levels");
  if (cfg.seeds == 0) throw ConfigError("scheme study needs at least one seed");
  SchemeGapResult res;
  for (unsigned l = 0; l < cfg.levels; ++l) res.dts.push_back(cfg.dt / std::ldexp(1.0, l));
  res.gap.assign(cfg.seeds, std::vector<double>(cfg.levels, 0.0));
  const std::size_t n = cfg.initial.size(), d = cfg.initial.dim();
#pragma omp parallel for schedule(dynamic)
  for (std::size_t s = 0; s < cfg.seeds; ++s) {
    const auto paths = level_paths(cfg, s);
    for (unsigned l = 0; l < cfg.levels; ++l) {
      const auto& p = paths[l];
      const auto ito = simulate(cfg.initial, sim_config(cfg.sigma, Scheme::ito_euler, p, p.steps()), kernel, p);
      const auto heun =
          simulate(cfg.initial, sim_config(cfg.sigma, Scheme::stratonovich_heun, p, p.steps()), kernel, p);
      const auto& a = ito.trajectory.back();
      const auto& b = heun.trajectory.back();
      double ss = 0.0;
      for (std::size_t q = 0; q < n * d; ++q) {
        ss += (a.x()[q] - b.x()[q]) * (a.x()[q] - b.x()[q]);
        ss += (a.v()[q] - b.v()[q]) * (a.v()[q] - b.v()[q]);
      }
      res.gap[s][l] = std::sqrt(ss / static_cast<double>(n));
    }
  }
  std::vector<double> lx, ly;
  for (unsigned l = 0; l < cfg.levels; ++l) {
    double ss = 0.0;
    for (std::size_t s = 0; s < cfg.seeds; ++s) ss += res.gap[s][l] * res.gap[s][l];
    res.rms_gap.push_back(std::sqrt(ss / static_cast<double>(cfg.seeds)));
    lx.push_back(std::log(res.dts[l]));
    ly.push_back(std::log(res.rms_gap.back()));
  }
  res.order = line_fit(lx, ly).first;
  auto& rep = res.report;
  rep.experiment = "scheme-consistency";
  rep.config = refinement_config(cfg, kernel);
  rep.check("empirical strong order >= " + fmt(min_order), res.order >= min_order, "order=" + fmt(res.order));
  rep.results = {{"dts", res.dts}, {"rms_gap", res.rms_gap}, {"order", res.order}, {"gap", res.gap}};
  rep.timing = timing_block(start);
  return res;
}

}  // namespace csflock
