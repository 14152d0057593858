#include "csflock/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "csflock/errors.hpp"

namespace csflock {

std::string_view to_string(KernelFamily family) {
  switch (family) {
    case KernelFamily::constant: return "constant";
    case KernelFamily::rational: return "rational";
    case KernelFamily::exponential: return "exponential";
    case KernelFamily::tabulated: return "tabulated";
  }
  return "unknown";
}

KernelFamily kernel_family_from_string(std::string_view name) {
  if (name == "constant") return KernelFamily::constant;
  if (name == "rational") return KernelFamily::rational;
  if (name == "exponential") return KernelFamily::exponential;
  if (name == "tabulated" || name == "custom-tabulated") return KernelFamily::tabulated;
  throw ConfigError("unknown kernel family '" + std::string(name) + "'");
}

CommunicationKernel CommunicationKernel::constant(double k) {
  if (!(k >= 0.0) || !std::isfinite(k)) throw ConfigError("constant kernel needs K >= 0");
  CommunicationKernel kern;
  kern.family_ = KernelFamily::constant;
  kern.params_ = {k};
  kern.psi_min_ = k;
  kern.psi_max_ = k;
  kern.lip_ = 0.0;
  kern.r_max_ = std::numeric_limits<double>::infinity();
  return kern;
}

CommunicationKernel CommunicationKernel::rational(double k, double beta, double floor) {
  if (!(k >= 0.0) || !(beta > 0.0) || !(floor >= 0.0))
    throw ConfigError("rational kernel needs K >= 0, beta > 0, floor >= 0");
  CommunicationKernel kern;
  kern.family_ = KernelFamily::rational;
  kern.params_ = {k, beta, floor};
  kern.psi_min_ = floor;
  kern.psi_max_ = floor + k;
  // |d/dr K (1+r^2)^-beta| peaks at r^2 = 1/(2 beta + 1).
  const double r_star = 1.0 / std::sqrt(2.0 * beta + 1.0);
  kern.lip_ = 2.0 * beta * k * r_star / std::pow(1.0 + r_star * r_star, beta + 1.0);
  kern.r_max_ = std::numeric_limits<double>::infinity();
  return kern;
}

CommunicationKernel CommunicationKernel::exponential(double k, double length, double floor) {
  if (!(k >= 0.0) || !(length > 0.0) || !(floor >= 0.0))
    throw ConfigError("exponential kernel needs K >= 0, length > 0, floor >= 0");
  CommunicationKernel kern;
  kern.family_ = KernelFamily::exponential;
  kern.params_ = {k, length, floor};
  kern.psi_min_ = floor;
  kern.psi_max_ = floor + k;
  kern.lip_ = k / length;
  kern.r_max_ = std::numeric_limits<double>::infinity();
  return kern;
}

CommunicationKernel CommunicationKernel::tabulated(std::vector<double> values, double r_max) {
  if (values.size() < 2) throw ConfigError("tabulated kernel needs at least two samples");
  if (!(r_max > 0.0) || !std::isfinite(r_max)) throw ConfigError("tabulated kernel needs r_max > 0");
  for (double y : values)
    if (!(y >= 0.0) || !std::isfinite(y)) throw ConfigError("tabulated kernel values must be finite and >= 0");
  CommunicationKernel kern;
  kern.family_ = KernelFamily::tabulated;
  kern.r_max_ = r_max;
  kern.table_step_ = r_max / static_cast<double>(values.size() - 1);
  kern.psi_min_ = *std::min_element(values.begin(), values.end());
  kern.psi_max_ = *std::max_element(values.begin(), values.end());
  double lip = 0.0;
  for (std::size_t i = 1; i < values.size(); ++i)
    lip = std::max(lip, std::abs(values[i] - values[i - 1]) / kern.table_step_);
  kern.lip_ = lip;
  kern.params_ = values;
  kern.table_ = std::move(values);
  return kern;
}

CommunicationKernel CommunicationKernel::from_params(KernelFamily family, std::span<const double> p,
                                                     double r_max) {
  auto need = [&](std::size_t lo, std::size_t hi) {
    if (p.size() < lo || p.size() > hi)
      throw ConfigError("kernel family '" + std::string(to_string(family)) + "' takes " +
                        std::to_string(lo) + ".." + std::to_string(hi) + " params, got " +
                        std::to_string(p.size()));
  };
  switch (family) {
    case KernelFamily::constant:
      need(1, 1);
      return constant(p[0]);
    case KernelFamily::rational:
      need(2, 3);
      return rational(p[0], p[1], p.size() > 2 ? p[2] : 0.0);
    case KernelFamily::exponential:
      need(2, 3);
      return exponential(p[0], p[1], p.size() > 2 ? p[2] : 0.0);
    case KernelFamily::tabulated:
      return tabulated(std::vector<double>(p.begin(), p.end()), r_max);
  }
  throw ConfigError("unknown kernel family");
}

double CommunicationKernel::weight_sq(double r2) const noexcept {
  switch (family_) {
    case KernelFamily::constant:
      return params_[0];
    case KernelFamily::rational: {
      const double base = 1.0 + r2;
      const double beta = params_[1];
      // pow is several times slower than these common exponents
      double decay;
      if (beta == 1.0) decay = 1.0 / base;
      else if (beta == 0.5) decay = 1.0 / std::sqrt(base);
      else if (beta == 2.0) decay = 1.0 / (base * base);
      else decay = std::pow(base, -beta);
      return params_[2] + params_[0] * decay;
    }
    case KernelFamily::exponential:
      return params_[2] + params_[0] * std::exp(-std::sqrt(r2) / params_[1]);
    case KernelFamily::tabulated: {
      const double r = std::sqrt(r2);
      if (r > r_max_) return std::numeric_limits<double>::quiet_NaN();
      const double s = r / table_step_;
      const std::size_t i = std::min(static_cast<std::size_t>(s), table_.size() - 2);
      const double frac = s - static_cast<double>(i);
      return table_[i] + frac * (table_[i + 1] - table_[i]);
    }
  }
  return 0.0;
}

double CommunicationKernel::operator()(double r) const {
  if (!(r >= 0.0)) throw DomainError("psi evaluated at negative distance " + std::to_string(r));
  if (family_ == KernelFamily::tabulated && r > r_max_)
    throw RangeError("distance " + std::to_string(r) + " beyond tabulated range " +
                     std::to_string(r_max_));
  return weight_sq(r * r);
}

double eval_psi(const CommunicationKernel& kernel, double r) { return kernel(r); }

std::vector<double> alignment_force(const Ensemble& ens, const CommunicationKernel& kernel,
                                    std::size_t i) {
  const std::size_t n = ens.size();
  const std::size_t d = ens.dim();
  if (i >= n) throw RangeError("particle index " + std::to_string(i) + " out of range");
  std::vector<double> f(d, 0.0);
  const auto xi = ens.x(i);
  const auto vi = ens.v(i);
  for (std::size_t j = 0; j < n; ++j) {
    const auto xj = ens.x(j);
    const auto vj = ens.v(j);
    double r2 = 0.0;
    for (std::size_t k = 0; k < d; ++k) r2 += (xj[k] - xi[k]) * (xj[k] - xi[k]);
    const double r = std::sqrt(r2);
    const double w = kernel(r);
    for (std::size_t k = 0; k < d; ++k) f[k] += w * (vj[k] - vi[k]);
  }
  for (double& c : f) c /= static_cast<double>(n);
  return f;
}

namespace {

// Row-gather kernel. Dim > 0 fixes d at compile time; Dim == 0 reads it at runtime.
template <std::size_t Dim, class Weight>
void force_rows(const Ensemble& ens, Weight weight, std::span<double> out) {
  const std::size_t n = ens.size();
  const std::size_t d = Dim > 0 ? Dim : ens.dim();
  const double* x = ens.x().data();
  const double* v = ens.v().data();
  double* f = out.data();
  const double inv_n = 1.0 / static_cast<double>(n);
  const long long rows = static_cast<long long>(n);

#pragma omp parallel for schedule(static) if (rows >= 128)
  for (long long ii = 0; ii < rows; ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    const double* xi = x + i * d;
    const double* vi = v + i * d;
    double* fi = f + i * d;
    for (std::size_t k = 0; k < d; ++k) fi[k] = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double* xj = x + j * d;
      const double* vj = v + j * d;
      double r2 = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double dx = xj[k] - xi[k];
        r2 += dx * dx;
      }
      const double w = weight(r2);
      for (std::size_t k = 0; k < d; ++k) fi[k] += w * (vj[k] - vi[k]);
    }
    for (std::size_t k = 0; k < d; ++k) fi[k] *= inv_n;
  }
}

template <class Weight>
void force_rows_dispatch(const Ensemble& ens, Weight weight, std::span<double> out) {
  switch (ens.dim()) {
    case 1: force_rows<1>(ens, weight, out); break;
    case 2: force_rows<2>(ens, weight, out); break;
    case 3: force_rows<3>(ens, weight, out); break;
    default: force_rows<0>(ens, weight, out); break;
  }
}

}  // namespace

void alignment_force_all(const Ensemble& ens, const CommunicationKernel& kernel,
                         std::span<double> out) {
  const std::size_t n = ens.size();
  const std::size_t d = ens.dim();
  if (out.size() != n * d) throw ConfigError("force buffer must have N*d entries");

  switch (kernel.family()) {
    case KernelFamily::constant: {
      // psi == K collapses the pair sum to K (Vbar - V^i).
      const double k = kernel.params()[0];
      std::vector<double> vbar(d, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) vbar[c] += ens.v(i)[c];
      for (double& c : vbar) c /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) out[i * d + c] = k * (vbar[c] - ens.v(i)[c]);
      return;
    }
    case KernelFamily::rational: {
      const double k = kernel.params()[0];
      const double beta = kernel.params()[1];
      const double floor = kernel.params()[2];
      if (beta == 1.0)
        force_rows_dispatch(ens, [=](double r2) { return floor + k / (1.0 + r2); }, out);
      else if (beta == 0.5)
        force_rows_dispatch(ens, [=](double r2) { return floor + k / std::sqrt(1.0 + r2); }, out);
      else
        force_rows_dispatch(
            ens, [=](double r2) { return floor + k * std::pow(1.0 + r2, -beta); }, out);
      return;
    }
    case KernelFamily::exponential:
    case KernelFamily::tabulated:
      force_rows_dispatch(ens, [&kernel](double r2) { return kernel.weight_sq(r2); }, out);
      break;
  }
  if (kernel.family() == KernelFamily::tabulated) {
    for (double c : out)
      if (std::isnan(c)) throw RangeError("pair distance beyond tabulated kernel range");
  }
}

std::vector<double> alignment_force_all(const Ensemble& ens, const CommunicationKernel& kernel) {
  std::vector<double> out(ens.size() * ens.dim());
  alignment_force_all(ens, kernel, out);
  return out;
}

void alignment_force_all_serial(const Ensemble& ens, const CommunicationKernel& kernel,
                                std::span<double> out) {
  const std::size_t n = ens.size();
  const std::size_t d = ens.dim();
  if (out.size() != n * d) throw ConfigError("force buffer must have N*d entries");
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto xi = ens.x(i);
    const auto vi = ens.v(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto xj = ens.x(j);
      const auto vj = ens.v(j);
      double r2 = 0.0;
      for (std::size_t k = 0; k < d; ++k) r2 += (xj[k] - xi[k]) * (xj[k] - xi[k]);
      const double w = kernel(std::sqrt(r2));
      for (std::size_t k = 0; k < d; ++k) {
        const double term = w * (vj[k] - vi[k]);
        out[i * d + k] += term;
        out[j * d + k] -= term;
      }
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (double& c : out) c *= inv_n;
}

}  // namespace csflock
