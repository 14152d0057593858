#include "csflock/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "csflock/errors.hpp"

namespace csflock {

std::string_view to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::ito_euler: return "ito_euler";
    case Scheme::stratonovich_heun: return "stratonovich_heun";
  }
  return "unknown";
}

Scheme scheme_from_string(std::string_view name) {
  if (name == "ito_euler") return Scheme::ito_euler;
  if (name == "stratonovich_heun") return Scheme::stratonovich_heun;
  throw ConfigError("unknown scheme '" + std::string(name) + "'");
}

namespace {

// Mean taken as V^0 + mean(V^i - V^0): an exact consensus yields exactly V^0.
void mean_rows(std::span<const double> rows, std::size_t n, std::size_t d, std::span<double> out) {
  for (std::size_t k = 0; k < d; ++k) {
    const double ref = rows[k];
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += rows[i * d + k] - ref;
    out[k] = ref + acc / static_cast<double>(n);
  }
}

}  // namespace

std::vector<double> mean_velocity(const Ensemble& ens) {
  std::vector<double> vbar(ens.dim());
  mean_rows(ens.v(), ens.size(), ens.dim(), vbar);
  return vbar;
}

double variance_functional(const Ensemble& ens, std::span<const double> vbar0) {
  double acc = 0.0;
  for (std::size_t i = 0; i < ens.size(); ++i) {
    const auto vi = ens.v(i);
    for (std::size_t k = 0; k < ens.dim(); ++k) acc += (vbar0[k] - vi[k]) * (vbar0[k] - vi[k]);
  }
  return acc / static_cast<double>(ens.size());
}

double kinetic_energy(const Ensemble& ens) {
  double acc = 0.0;
  for (double c : ens.v()) acc += c * c;
  return acc / static_cast<double>(ens.size());
}

double support_radius(const Ensemble& ens, std::span<const double> vbar0) {
  double best = 0.0;
  for (std::size_t i = 0; i < ens.size(); ++i) {
    const auto vi = ens.v(i);
    double r2 = 0.0;
    for (std::size_t k = 0; k < ens.dim(); ++k) r2 += (vi[k] - vbar0[k]) * (vi[k] - vbar0[k]);
    best = std::max(best, r2);
  }
  return std::sqrt(best);
}

Stepper::Stepper(const CommunicationKernel& kernel, double sigma, Scheme scheme)
    : kernel_(&kernel), sigma_(sigma), scheme_(scheme) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("sigma must be >= 0");
}

void Stepper::advance(Ensemble& ens, double dt, double dB) {
  if (!(dt > 0.0)) throw ConfigError("dt must be > 0");
  force_.resize(ens.size() * ens.dim());
  mean_.resize(ens.dim());
  mean_pred_.resize(ens.dim());
  if (scheme_ == Scheme::ito_euler)
    advance_ito(ens, dt, dB);
  else
    advance_heun(ens, dt, dB);
  ens.set_time(ens.time() + dt);
}

void Stepper::advance_ito(Ensemble& ens, double dt, double dB) {
  const std::size_t n = ens.size();
  const std::size_t d = ens.dim();
  auto& mean = mean_;
  mean_rows(ens.v(), n, d, mean);
  alignment_force_all(ens, *kernel_, force_);

  const double noise = std::sqrt(2.0 * sigma_) * dB;
  auto x = ens.x();
  auto v = ens.v();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      const std::size_t idx = i * d + k;
      const double dev = mean[k] - v[idx];
      x[idx] += v[idx] * dt;
      v[idx] += (force_[idx] - sigma_ * dev) * dt + dev * noise;
    }
  }
}

void Stepper::advance_heun(Ensemble& ens, double dt, double dB) {
  const std::size_t n = ens.size();
  const std::size_t d = ens.dim();
  auto& mean = mean_;
  auto& mean_pred = mean_pred_;
  mean_rows(ens.v(), n, d, mean);
  alignment_force_all(ens, *kernel_, force_);

  const double noise = std::sqrt(2.0 * sigma_) * dB;
  auto x = ens.x();
  auto v = ens.v();
  predictor_.resize(n * d);
  for (std::size_t idx = 0; idx < n * d; ++idx) {
    const double dev = mean[idx % d] - v[idx];
    predictor_[idx] = v[idx] + force_[idx] * dt + dev * noise;
  }
  mean_rows(predictor_, n, d, mean_pred);
  for (std::size_t idx = 0; idx < n * d; ++idx) {
    const std::size_t k = idx % d;
    const double dev = mean[k] - v[idx];
    const double dev_pred = mean_pred[k] - predictor_[idx];
    x[idx] += v[idx] * dt;
    v[idx] += force_[idx] * dt + 0.5 * (dev + dev_pred) * noise;
  }
}

Ensemble step_ito(const Ensemble& ens, const CommunicationKernel& kernel, double sigma, double dt,
                  double dB) {
  Ensemble next = ens;
  Stepper(kernel, sigma, Scheme::ito_euler).advance(next, dt, dB);
  if (!next.all_finite()) throw BlowUpError(1, next.time());
  return next;
}

Ensemble step_stratonovich_heun(const Ensemble& ens, const CommunicationKernel& kernel,
                                double sigma, double dt, double dB) {
  Ensemble next = ens;
  Stepper(kernel, sigma, Scheme::stratonovich_heun).advance(next, dt, dB);
  if (!next.all_finite()) throw BlowUpError(1, next.time());
  return next;
}

namespace {

void check_grid(const SimConfig& config, const BrownianPath& path) {
  if (!(config.dt > 0.0)) throw ConfigError("dt must be > 0");
  if (!(config.horizon > 0.0)) throw ConfigError("T must be > 0");
  const double rel = 1e-9;
  if (std::abs(path.horizon() - config.horizon) > rel * config.horizon)
    throw ConfigError("Brownian path horizon does not match T");
  if (std::abs(path.dt() - config.dt) > rel * config.dt)
    throw ConfigError("Brownian path step " + std::to_string(path.dt()) +
                      " does not match dt = " + std::to_string(config.dt));
}

void record(ObservableSeries& obs, const Ensemble& ens, std::span<const double> vbar0, double b) {
  obs.times.push_back(ens.time());
  obs.E.push_back(variance_functional(ens, vbar0));
  obs.kinetic.push_back(kinetic_energy(ens));
  obs.support_radius.push_back(support_radius(ens, vbar0));
  obs.mean_velocity.push_back(mean_velocity(ens));
  obs.brownian.push_back(b);
}

}  // namespace

SimulationResult simulate(const Ensemble& init, const SimConfig& config,
                          const CommunicationKernel& kernel, const BrownianPath& path) {
  check_grid(config, path);
  if (!init.all_finite()) throw ConfigError("initial ensemble has non-finite entries");

  const std::size_t steps = path.steps();
  const double dt = path.dt();
  const auto b = path.values();
  const auto vbar0 = mean_velocity(init);

  SimulationResult result;
  auto& obs = result.observables;
  obs.times.reserve(steps + 1);
  obs.E.reserve(steps + 1);
  obs.kinetic.reserve(steps + 1);
  obs.support_radius.reserve(steps + 1);
  obs.mean_velocity.reserve(steps + 1);
  obs.brownian.reserve(steps + 1);

  Ensemble state = init;
  state.set_time(0.0);
  record(obs, state, vbar0, 0.0);
  if (config.stride > 0) result.trajectory.push_back(state);

  Stepper stepper(kernel, config.sigma, config.scheme);
  for (std::size_t k = 0; k < steps; ++k) {
    stepper.advance(state, dt, path.increment(k));
    // Grid time from the index, not the running sum.
    state.set_time(static_cast<double>(k + 1) * dt);
    if (!state.all_finite()) throw BlowUpError(k + 1, state.time());
    record(obs, state, vbar0, b[k + 1]);
    if (config.stride > 0 && ((k + 1) % config.stride == 0 || k + 1 == steps))
      result.trajectory.push_back(state);
  }
  return result;
}

TestFunction::TestFunction(TestFamily family, std::vector<double> center_x,
                           std::vector<double> center_v, double scale)
    : TestFunction(family, std::move(center_x), std::move(center_v), scale, scale) {}

TestFunction::TestFunction(TestFamily family, std::vector<double> center_x,
                           std::vector<double> center_v, double scale_x, double scale_v)
    : family_(family), cx_(std::move(center_x)), cv_(std::move(center_v)) {
  if (cx_.empty() || cx_.size() != cv_.size())
    throw ConfigError("test function centres must be nonempty d-vectors of equal length");
  if (!(scale_x > 0.0) || !(scale_v > 0.0) || !std::isfinite(scale_v))
    throw ConfigError("test function scales must be > 0");
  inv_sx2_ = std::isinf(scale_x) ? 0.0 : 1.0 / (scale_x * scale_x);
  inv_sv2_ = 1.0 / (scale_v * scale_v);
}

double TestFunction::rho2(std::span<const double> x, std::span<const double> v) const {
  double ax = 0.0;
  double av = 0.0;
  for (std::size_t k = 0; k < cx_.size(); ++k) {
    ax += (x[k] - cx_[k]) * (x[k] - cx_[k]);
    av += (v[k] - cv_[k]) * (v[k] - cv_[k]);
  }
  return ax * inv_sx2_ + av * inv_sv2_;
}

void TestFunction::profile(double r2, double& g, double& dg, double& d2g) const {
  if (family_ == TestFamily::gaussian_bump) {
    g = std::exp(-0.5 * r2);
    dg = -0.5 * g;
    d2g = 0.25 * g;
    return;
  }
  if (r2 >= 1.0) {
    g = dg = d2g = 0.0;
    return;
  }
  const double u = 1.0 - r2;
  g = u * u * u;
  dg = -3.0 * u * u;
  d2g = 6.0 * u;
}

double TestFunction::value(std::span<const double> x, std::span<const double> v) const {
  double g, dg, d2g;
  profile(rho2(x, v), g, dg, d2g);
  return g;
}

// phi = g(rho^2); d rho^2 / dx = 2 (x - cx) / sx^2, likewise in v.
void TestFunction::grad_x(std::span<const double> x, std::span<const double> v,
                          std::span<double> out) const {
  double g, dg, d2g;
  profile(rho2(x, v), g, dg, d2g);
  for (std::size_t k = 0; k < cx_.size(); ++k) out[k] = dg * 2.0 * (x[k] - cx_[k]) * inv_sx2_;
}

void TestFunction::grad_v(std::span<const double> x, std::span<const double> v,
                          std::span<double> out) const {
  double g, dg, d2g;
  profile(rho2(x, v), g, dg, d2g);
  for (std::size_t k = 0; k < cv_.size(); ++k) out[k] = dg * 2.0 * (v[k] - cv_[k]) * inv_sv2_;
}

void TestFunction::hess_v(std::span<const double> x, std::span<const double> v,
                          std::span<double> out) const {
  double g, dg, d2g;
  profile(rho2(x, v), g, dg, d2g);
  const std::size_t d = cv_.size();
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t c = 0; c < d; ++c) {
      const double outer = 4.0 * (v[a] - cv_[a]) * (v[c] - cv_[c]) * inv_sv2_ * inv_sv2_;
      out[a * d + c] = d2g * outer + (a == c ? dg * 2.0 * inv_sv2_ : 0.0);
    }
  }
}

double weak_form_residual(std::span<const Ensemble> trajectory, const BrownianPath& path,
                          const SimConfig& config, const CommunicationKernel& kernel,
                          const TestFunction& phi) {
  const std::size_t steps = path.steps();
  if (trajectory.size() != steps + 1)
    throw PreconditionError("weak-form residual needs the full-resolution trajectory (stride 1): "
                            "expected " + std::to_string(steps + 1) + " states, got " +
                            std::to_string(trajectory.size()));
  const std::size_t n = trajectory.front().size();
  const std::size_t d = trajectory.front().dim();
  if (phi.dim() != d) throw ConfigError("test function dimension does not match ensemble");

  const double dt = path.dt();
  const double sigma = config.sigma;
  const double root = std::sqrt(2.0 * sigma);
  const double inv_n = 1.0 / static_cast<double>(n);

  auto pairing = [&](const Ensemble& e) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += phi.value(e.x(i), e.v(i));
    return acc * inv_n;
  };

  std::vector<double> force(n * d), gx(d), gv(d), hv(d * d), dev(d);
  double residual = pairing(trajectory.back()) - pairing(trajectory.front());
  for (std::size_t k = 0; k < steps; ++k) {
    const Ensemble& e = trajectory[k];
    const auto vbar = mean_velocity(e);
    alignment_force_all(e, kernel, force);
    double drift = 0.0;
    double martingale = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto xi = e.x(i);
      const auto vi = e.v(i);
      phi.grad_x(xi, vi, gx);
      phi.grad_v(xi, vi, gv);
      phi.hess_v(xi, vi, hv);
      for (std::size_t a = 0; a < d; ++a) dev[a] = vbar[a] - vi[a];
      double term = 0.0;
      double noise = 0.0;
      for (std::size_t a = 0; a < d; ++a) {
        term += vi[a] * gx[a];
        term += (force[i * d + a] - sigma * dev[a]) * gv[a];
        noise += dev[a] * gv[a];
        for (std::size_t c = 0; c < d; ++c) term += sigma * dev[a] * dev[c] * hv[a * d + c];
      }
      drift += term;
      martingale += noise;
    }
    residual -= drift * inv_n * dt;
    residual -= root * martingale * inv_n * path.increment(k);
  }
  return std::abs(residual);
}

}  // namespace csflock
