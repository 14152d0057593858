#include "csflock/initial_law.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "csflock/errors.hpp"
#include "csflock/rng.hpp"

namespace csflock {

namespace {

void require_even_dim(std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw ConfigError("phase-space dimension must be 2d with d >= 1");
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

InitialLaw InitialLaw::uniform_box(std::vector<double> lo, std::vector<double> hi) {
  require_even_dim(lo.size());
  if (hi.size() != lo.size()) throw ConfigError("box corners differ in dimension");
  for (std::size_t k = 0; k < lo.size(); ++k)
    if (!(hi[k] > lo[k])) throw ConfigError("box must have hi > lo in every coordinate");
  InitialLaw law;
  law.kind = Kind::uniform_box;
  law.lo = std::move(lo);
  law.hi = std::move(hi);
  return law;
}

InitialLaw InitialLaw::gaussian(std::vector<double> mean, std::vector<double> stddev) {
  require_even_dim(mean.size());
  if (stddev.size() != mean.size()) throw ConfigError("gaussian mean and stddev differ in dimension");
  for (double s : stddev)
    if (!(s > 0.0)) throw ConfigError("gaussian stddev must be > 0");
  InitialLaw law;
  law.kind = Kind::gaussian;
  law.mean = std::move(mean);
  law.stddev = std::move(stddev);
  return law;
}

InitialLaw InitialLaw::two_cluster(std::vector<double> mean_a, std::vector<double> mean_b,
                                   std::vector<double> stddev, double weight_a) {
  require_even_dim(mean_a.size());
  if (mean_b.size() != mean_a.size() || stddev.size() != mean_a.size())
    throw ConfigError("cluster centres and stddev differ in dimension");
  for (double s : stddev)
    if (!(s > 0.0)) throw ConfigError("cluster stddev must be > 0");
  if (!(weight_a > 0.0 && weight_a < 1.0)) throw ConfigError("cluster weight must lie in (0, 1)");
  InitialLaw law;
  law.kind = Kind::two_cluster;
  law.mean = std::move(mean_a);
  law.mean2 = std::move(mean_b);
  law.stddev = std::move(stddev);
  law.first_weight = weight_a;
  return law;
}

std::size_t InitialLaw::phase_dim() const {
  return kind == Kind::uniform_box ? lo.size() : mean.size();
}

double InitialLaw::cell_mass(std::span<const double> a, std::span<const double> b) const {
  const std::size_t dim = phase_dim();
  auto gaussian_mass = [&](const std::vector<double>& centre) {
    double p = 1.0;
    for (std::size_t k = 0; k < dim; ++k)
      p *= normal_cdf((b[k] - centre[k]) / stddev[k]) - normal_cdf((a[k] - centre[k]) / stddev[k]);
    return p;
  };
  switch (kind) {
    case Kind::uniform_box: {
      double p = 1.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double overlap = std::min(b[k], hi[k]) - std::max(a[k], lo[k]);
        if (overlap <= 0.0) return 0.0;
        p *= overlap / (hi[k] - lo[k]);
      }
      return p;
    }
    case Kind::gaussian:
      return gaussian_mass(mean);
    case Kind::two_cluster:
      return first_weight * gaussian_mass(mean) + (1.0 - first_weight) * gaussian_mass(mean2);
  }
  return 0.0;
}

std::string_view to_string(InitialLaw::Kind kind) {
  switch (kind) {
    case InitialLaw::Kind::uniform_box: return "uniform_box";
    case InitialLaw::Kind::gaussian: return "gaussian";
    case InitialLaw::Kind::two_cluster: return "two_cluster";
  }
  return "unknown";
}

InitialLaw::Kind initial_law_kind_from_string(std::string_view name) {
  if (name == "uniform_box") return InitialLaw::Kind::uniform_box;
  if (name == "gaussian") return InitialLaw::Kind::gaussian;
  if (name == "two_cluster") return InitialLaw::Kind::two_cluster;
  throw ConfigError("unknown initial law '" + std::string(name) + "'");
}

EmpiricalMeasure quantize_grid(const InitialLaw& law, std::size_t cells_per_dim,
                               std::span<const double> lo, std::span<const double> hi) {
  const std::size_t dim = law.phase_dim();
  if (cells_per_dim == 0) throw ConfigError("cells_per_dim must be >= 1");
  if (lo.size() != dim || hi.size() != dim) throw ConfigError("quantization bounds must match the law's dimension");
  for (std::size_t k = 0; k < dim; ++k)
    if (!(hi[k] > lo[k])) throw ConfigError("quantization bounds need hi > lo");

  std::size_t cells = 1;
  for (std::size_t k = 0; k < dim; ++k) {
    if (cells > (std::size_t{1} << 26) / cells_per_dim) throw ConfigError("quantization grid too large");
    cells *= cells_per_dim;
  }

  std::vector<double> width(dim);
  for (std::size_t k = 0; k < dim; ++k) width[k] = (hi[k] - lo[k]) / static_cast<double>(cells_per_dim);

  std::vector<double> atoms;
  std::vector<double> weights;
  std::vector<std::size_t> index(dim, 0);
  std::vector<double> a(dim), b(dim), centre(dim);
  for (std::size_t c = 0; c < cells; ++c) {
    std::size_t rem = c;
    // Last coordinate varies fastest.
    for (std::size_t k = dim; k-- > 0;) {
      index[k] = rem % cells_per_dim;
      rem /= cells_per_dim;
    }
    for (std::size_t k = 0; k < dim; ++k) {
      a[k] = lo[k] + width[k] * static_cast<double>(index[k]);
      b[k] = index[k] + 1 == cells_per_dim ? hi[k] : a[k] + width[k];
      centre[k] = 0.5 * (a[k] + b[k]);
    }
    const double mass = law.cell_mass(a, b);
    if (mass <= 0.0) continue;
    atoms.insert(atoms.end(), centre.begin(), centre.end());
    weights.push_back(mass);
  }
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0)) throw ConfigError("initial law has zero mass inside the quantization bounds");
  for (double& w : weights) w /= total;
  // Renormalized sum may miss 1 by a few ulps; fold the remainder into the heaviest atom.
  const double drift = 1.0 - std::accumulate(weights.begin(), weights.end(), 0.0);
  *std::max_element(weights.begin(), weights.end()) += drift;
  return EmpiricalMeasure(dim, std::move(atoms), std::move(weights));
}

Ensemble to_uniform_ensemble(const EmpiricalMeasure& measure, std::size_t particles) {
  require_even_dim(measure.dim());
  if (particles == 0) throw ConfigError("particle count must be >= 1");
  const std::size_t m = measure.size();
  const std::size_t d = measure.dim() / 2;
  std::vector<std::size_t> copies(m);
  std::vector<double> remainder(m);
  std::size_t placed = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double exact = measure.weight(i) * static_cast<double>(particles);
    copies[i] = static_cast<std::size_t>(std::floor(exact));
    remainder[i] = exact - static_cast<double>(copies[i]);
    placed += copies[i];
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t p, std::size_t q) { return remainder[p] > remainder[q]; });
  for (std::size_t k = 0; placed < particles && k < m; ++k, ++placed) ++copies[order[k]];
  if (placed != particles) throw ConfigError("largest-remainder rounding failed to place all particles");

  Ensemble ens(particles, d);
  std::size_t p = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto z = measure.atom(i);
    for (std::size_t c = 0; c < copies[i]; ++c, ++p) {
      for (std::size_t k = 0; k < d; ++k) {
        ens.x(p)[k] = z[k];
        ens.v(p)[k] = z[d + k];
      }
    }
  }
  return ens;
}

Ensemble sample_ensemble(const InitialLaw& law, std::size_t n, std::uint64_t seed) {
  const std::size_t dim = law.phase_dim();
  const std::size_t d = dim / 2;
  NormalStream rng(derive_seed(seed, 0x696e6974ULL));
  Ensemble ens(n, d);
  std::vector<double> z(dim);
  for (std::size_t i = 0; i < n; ++i) {
    switch (law.kind) {
      case InitialLaw::Kind::uniform_box:
        for (std::size_t k = 0; k < dim; ++k) z[k] = law.lo[k] + (law.hi[k] - law.lo[k]) * rng.uniform();
        break;
      case InitialLaw::Kind::gaussian:
        for (std::size_t k = 0; k < dim; ++k) z[k] = law.mean[k] + law.stddev[k] * rng();
        break;
      case InitialLaw::Kind::two_cluster: {
        const auto& centre = rng.uniform() < law.first_weight ? law.mean : law.mean2;
        for (std::size_t k = 0; k < dim; ++k) z[k] = centre[k] + law.stddev[k] * rng();
        break;
      }
    }
    for (std::size_t k = 0; k < d; ++k) {
      ens.x(i)[k] = z[k];
      ens.v(i)[k] = z[d + k];
    }
  }
  return ens;
}

}  // namespace csflock
