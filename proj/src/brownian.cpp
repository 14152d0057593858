#include "csflock/brownian.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

#include "csflock/errors.hpp"
#include "csflock/rng.hpp"

namespace csflock {

namespace {

constexpr std::uint64_t kRefineStream = 0x6272696467650000ULL;  // "bridge"

// Increments live on the lattice 2^-40 Z. Sums of lattice values below 2^13 in
// magnitude are exact in double precision, so bridge splits and prefix sums
// never round.
constexpr double kLattice = 0x1p-40;
constexpr double kLatticeBound = 0x1p13;

double to_lattice(double x) { return std::nearbyint(x / kLattice) * kLattice; }

void put_u64(std::ostream& out, std::uint64_t value) {
  std::array<char, 8> bytes{};
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xffU);
  out.write(bytes.data(), bytes.size());
}

std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw ConfigError("truncated Brownian path file");
  std::uint64_t value = 0;
  for (int i = 0; i < 8; ++i) value |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

BrownianPath BrownianPath::sample(double horizon, std::size_t steps, std::uint64_t seed) {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ConfigError("Brownian path needs T > 0");
  if (steps == 0) throw ConfigError("Brownian path needs K >= 1");
  BrownianPath path;
  path.horizon_ = horizon;
  path.seed_ = seed;
  path.level_ = 0;
  path.increments_.resize(steps);
  const double scale = std::sqrt(horizon / static_cast<double>(steps));
  NormalStream normal(derive_seed(seed, 0));
  for (double& inc : path.increments_) inc = to_lattice(scale * normal());
  path.check_range();
  return path;
}

BrownianPath BrownianPath::from_increments(double horizon, std::vector<double> increments,
                                           std::uint64_t seed, unsigned level) {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ConfigError("Brownian path needs T > 0");
  if (increments.empty()) throw ConfigError("Brownian path needs K >= 1");
  if (level >= 63 || (increments.size() >> level) << level != increments.size() ||
      (increments.size() >> level) == 0)
    throw ConfigError("increment count must be a multiple of 2^level");
  BrownianPath path;
  path.horizon_ = horizon;
  path.increments_ = std::move(increments);
  for (double& inc : path.increments_) {
    if (!std::isfinite(inc)) throw ConfigError("Brownian increments must be finite");
    inc = to_lattice(inc);
  }
  path.seed_ = seed;
  path.level_ = level;
  path.check_range();
  return path;
}

BrownianPath BrownianPath::refined() const {
  BrownianPath fine;
  fine.horizon_ = horizon_;
  fine.seed_ = seed_;
  fine.level_ = level_ + 1;
  fine.increments_.resize(2 * increments_.size());
  // Bridge midpoint over an interval of length h: mean = half the increment,
  // variance h/4.
  const double mid_sd = std::sqrt(dt() / 4.0);
  NormalStream normal(derive_seed(derive_seed(seed_, fine.level_), kRefineStream));
  for (std::size_t k = 0; k < increments_.size(); ++k) {
    const double parent = increments_[k];
    const double a = to_lattice(0.5 * parent + mid_sd * normal());
    fine.increments_[2 * k] = a;
    fine.increments_[2 * k + 1] = parent - a;  // exact on the lattice
  }
  return fine;
}

void BrownianPath::check_range() const {
  double b = 0.0;
  for (double inc : increments_) {
    b += inc;
    if (!(std::abs(b) < kLatticeBound)) throw RangeError("Brownian path leaves the exact-summation range");
  }
}

std::vector<double> BrownianPath::values() const {
  std::vector<double> vals(increments_.size() + 1, 0.0);
  for (std::size_t k = 0; k < increments_.size(); ++k) vals[k + 1] = vals[k] + increments_[k];
  return vals;
}

double BrownianPath::value_at(std::size_t k) const {
  if (k > increments_.size())
    throw RangeError("grid index " + std::to_string(k) + " beyond K = " +
                     std::to_string(increments_.size()));
  double b = 0.0;
  for (std::size_t j = 0; j < k; ++j) b += increments_[j];
  return b;
}

void BrownianPath::write_binary(std::ostream& out) const {
  put_u64(out, std::bit_cast<std::uint64_t>(horizon_));
  put_u64(out, increments_.size());
  put_u64(out, seed_);
  put_u64(out, level_);
  for (double inc : increments_) put_u64(out, std::bit_cast<std::uint64_t>(inc));
}

BrownianPath BrownianPath::read_binary(std::istream& in) {
  const double horizon = std::bit_cast<double>(get_u64(in));
  const std::uint64_t steps = get_u64(in);
  const std::uint64_t seed = get_u64(in);
  const std::uint64_t level = get_u64(in);
  if (steps == 0 || steps > (std::uint64_t{1} << 40)) throw ConfigError("bad step count in path file");
  std::vector<double> inc(steps);
  for (double& x : inc) x = std::bit_cast<double>(get_u64(in));
  return from_increments(horizon, std::move(inc), seed, static_cast<unsigned>(level));
}

BrownianPath sample_path(double horizon, std::size_t steps, std::uint64_t seed) {
  return BrownianPath::sample(horizon, steps, seed);
}

BrownianPath refine(const BrownianPath& path) { return path.refined(); }

}  // namespace csflock
