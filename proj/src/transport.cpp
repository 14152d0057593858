#include "csflock/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <string>

#include "csflock/errors.hpp"

namespace csflock {

EmpiricalMeasure::EmpiricalMeasure(std::size_t dim, std::vector<double> atoms,
                                   std::vector<double> weights)
    : dim_(dim), atoms_(std::move(atoms)), weights_(std::move(weights)) {
  if (dim_ == 0) throw ConfigError("measure dimension must be >= 1");
  if (weights_.empty()) throw ConfigError("measure needs at least one atom");
  if (atoms_.size() != weights_.size() * dim_)
    throw ConfigError("atom array must have M*dim entries");
  for (double a : atoms_)
    if (!std::isfinite(a)) throw ConfigError("measure atoms must be finite");
  double total = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("measure weights must be >= 0");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw ConfigError("measure weights sum to " + std::to_string(total) + ", not 1");
}

EmpiricalMeasure EmpiricalMeasure::uniform(std::size_t dim, std::vector<double> atoms) {
  if (dim == 0 || atoms.empty() || atoms.size() % dim != 0)
    throw ConfigError("uniform measure needs a nonempty M*dim atom array");
  const std::size_t m = atoms.size() / dim;
  return EmpiricalMeasure(dim, std::move(atoms), std::vector<double>(m, 1.0 / static_cast<double>(m)));
}

EmpiricalMeasure EmpiricalMeasure::from_ensemble(const Ensemble& ens, double velocity_weight) {
  if (!(velocity_weight > 0.0)) throw ConfigError("velocity weight must be > 0");
  const std::size_t n = ens.size();
  const std::size_t d = ens.dim();
  const double vs = std::sqrt(velocity_weight);
  std::vector<double> atoms(n * 2 * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      atoms[i * 2 * d + k] = ens.x(i)[k];
      atoms[i * 2 * d + d + k] = vs * ens.v(i)[k];
    }
  }
  return uniform(2 * d, std::move(atoms));
}

bool EmpiricalMeasure::is_uniform() const noexcept {
  const double w0 = weights_.front();
  return std::all_of(weights_.begin(), weights_.end(), [w0](double w) { return w == w0; });
}

std::vector<double> cost_matrix(const EmpiricalMeasure& a, const EmpiricalMeasure& b, bool squared) {
  if (a.dim() != b.dim()) throw ConfigError("measures live in different dimensions");
  const std::size_t m = a.size();
  const std::size_t n = b.size();
  const std::size_t dim = a.dim();
  std::vector<double> cost(m * n);
  const long long rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * n >= 16384)
  for (long long ii = 0; ii < rows; ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    const auto ai = a.atom(i);
    for (std::size_t j = 0; j < n; ++j) {
      const auto bj = b.atom(j);
      double r2 = 0.0;
      for (std::size_t k = 0; k < dim; ++k) r2 += (ai[k] - bj[k]) * (ai[k] - bj[k]);
      cost[i * n + j] = squared ? r2 : std::sqrt(r2);
    }
  }
  return cost;
}

std::vector<std::size_t> solve_assignment(std::span<const double> cost, std::size_t n) {
  if (cost.size() != n * n) throw ConfigError("assignment needs an n x n cost matrix");
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is a virtual root.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t row = 1; row <= n; ++row) {
    match[0] = row;
    std::size_t col0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[col0] = 1;
      const std::size_t r = match[col0];
      double delta = inf;
      std::size_t col1 = 0;
      for (std::size_t c = 1; c <= n; ++c) {
        if (used[c]) continue;
        const double reduced = cost[(r - 1) * n + (c - 1)] - u[r] - v[c];
        if (reduced < minv[c]) {
          minv[c] = reduced;
          way[c] = col0;
        }
        if (minv[c] < delta) {
          delta = minv[c];
          col1 = c;
        }
      }
      for (std::size_t c = 0; c <= n; ++c) {
        if (used[c]) {
          u[match[c]] += delta;
          v[c] -= delta;
        } else {
          minv[c] -= delta;
        }
      }
      col0 = col1;
    } while (match[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      match[col0] = match[col1];
      col0 = col1;
    } while (col0 != 0);
  }
  std::vector<std::size_t> assignment(n);
  for (std::size_t c = 1; c <= n; ++c) assignment[match[c] - 1] = c - 1;
  return assignment;
}

namespace {

struct BasicCell {
  std::size_t row;
  std::size_t col;
  double mass;
};

}  // namespace

TransportPlan solve_transport(std::span<const double> supply, std::span<const double> demand,
                              std::span<const double> cost) {
  const std::size_t m = supply.size();
  const std::size_t n = demand.size();
  if (m == 0 || n == 0 || cost.size() != m * n)
    throw ConfigError("transport problem needs an m x n cost matrix");

  // North-west corner start: exactly m + n - 1 basic cells, some possibly 0.
  std::vector<BasicCell> basis;
  basis.reserve(m + n - 1);
  std::vector<char> is_basic(m * n, 0);
  {
    std::vector<double> s(supply.begin(), supply.end());
    std::vector<double> d(demand.begin(), demand.end());
    std::size_t i = 0, j = 0;
    while (true) {
      const double x = std::min(s[i], d[j]);
      basis.push_back({i, j, x});
      is_basic[i * n + j] = 1;
      if (s[i] <= d[j]) {
        d[j] -= s[i];
        s[i] = 0.0;
      } else {
        s[i] -= d[j];
        d[j] = 0.0;
      }
      if (i == m - 1 && j == n - 1) break;
      if (i == m - 1)
        ++j;
      else if (j == n - 1)
        ++i;
      else if (s[i] == 0.0)
        ++i;
      else
        ++j;
    }
  }

  double scale = 0.0;
  for (double c : cost) scale = std::max(scale, std::abs(c));
  const double tol = 1e-12 * std::max(scale, 1e-300);

  const std::size_t nodes = m + n;
  std::vector<std::vector<std::size_t>> adj(nodes);
  std::vector<double> u(m), v(n);
  std::vector<char> seen(nodes);
  std::vector<std::size_t> parent_edge(nodes), parent_node(nodes);

  std::size_t degenerate_run = 0;
  const std::size_t max_iter = 1000 + 50 * m * n;
  for (std::size_t iter = 0;; ++iter) {
    if (iter > max_iter) throw std::runtime_error("transportation simplex did not terminate");

    for (auto& a : adj) a.clear();
    for (std::size_t c = 0; c < basis.size(); ++c) {
      adj[basis[c].row].push_back(c);
      adj[m + basis[c].col].push_back(c);
    }

    // Dual potentials from the spanning tree: u_i + v_j = C_ij on basic cells.
    std::fill(seen.begin(), seen.end(), 0);
    std::queue<std::size_t> queue;
    u[0] = 0.0;
    seen[0] = 1;
    queue.push(0);
    while (!queue.empty()) {
      const std::size_t node = queue.front();
      queue.pop();
      for (std::size_t c : adj[node]) {
        const auto& cell = basis[c];
        const std::size_t other = node < m ? m + cell.col : cell.row;
        if (seen[other]) continue;
        seen[other] = 1;
        if (node < m)
          v[cell.col] = cost[cell.row * n + cell.col] - u[cell.row];
        else
          u[cell.row] = cost[cell.row * n + cell.col] - v[cell.col];
        queue.push(other);
      }
    }

    // Entering cell: most negative reduced cost (Dantzig), or the first
    // negative one (Bland) after a long run of degenerate pivots.
    const bool bland = degenerate_run > m + n;
    std::size_t enter_row = m, enter_col = n;
    double best = -tol;
    for (std::size_t i = 0; i < m && !(bland && enter_row < m); ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (is_basic[i * n + j]) continue;
        const double reduced = cost[i * n + j] - u[i] - v[j];
        if (reduced < best) {
          best = reduced;
          enter_row = i;
          enter_col = j;
          if (bland) break;
        }
      }
    }
    if (enter_row == m) break;

    // Tree path from the entering row to the entering column closes the cycle.
    std::fill(seen.begin(), seen.end(), 0);
    seen[enter_row] = 1;
    queue.push(enter_row);
    const std::size_t goal = m + enter_col;
    while (!queue.empty()) {
      const std::size_t node = queue.front();
      queue.pop();
      if (node == goal) break;
      for (std::size_t c : adj[node]) {
        const auto& cell = basis[c];
        const std::size_t other = node < m ? m + cell.col : cell.row;
        if (seen[other]) continue;
        seen[other] = 1;
        parent_edge[other] = c;
        parent_node[other] = node;
        queue.push(other);
      }
    }
    while (!queue.empty()) queue.pop();

    // Walking back from the column: the first tree cell loses mass, then alternate.
    std::vector<std::size_t> cycle;
    for (std::size_t node = goal; node != enter_row; node = parent_node[node])
      cycle.push_back(parent_edge[node]);
    double theta = std::numeric_limits<double>::infinity();
    std::size_t leaving = basis.size();
    for (std::size_t k = 0; k < cycle.size(); k += 2) {
      const auto& cell = basis[cycle[k]];
      const bool better = cell.mass < theta ||
                          (cell.mass == theta && leaving < basis.size() &&
                           cell.row * n + cell.col < basis[leaving].row * n + basis[leaving].col);
      if (better) {
        theta = cell.mass;
        leaving = cycle[k];
      }
    }
    for (std::size_t k = 0; k < cycle.size(); ++k) {
      auto& cell = basis[cycle[k]];
      if (k % 2 == 0)
        cell.mass = std::max(0.0, cell.mass - theta);
      else
        cell.mass += theta;
    }
    degenerate_run = theta == 0.0 ? degenerate_run + 1 : 0;
    auto& out = basis[leaving];
    is_basic[out.row * n + out.col] = 0;
    out = {enter_row, enter_col, theta};
    is_basic[enter_row * n + enter_col] = 1;
  }

  TransportPlan plan;
  std::sort(basis.begin(), basis.end(), [](const BasicCell& a, const BasicCell& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  for (const auto& cell : basis) {
    if (cell.mass <= 0.0) continue;
    plan.pairs.push_back({cell.row, cell.col, cell.mass});
    plan.cost += cell.mass * cost[cell.row * n + cell.col];
  }
  return plan;
}

TransportResult w2_exact_uniform(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  if (a.size() != b.size() || !a.is_uniform() || !b.is_uniform())
    throw PreconditionError("w2_exact_uniform needs uniform measures of equal size; use w2_general");
  const std::size_t n = a.size();
  const auto cost = cost_matrix(a, b);
  const auto assignment = solve_assignment(cost, n);
  TransportResult result;
  const double mass = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double c = cost[i * n + assignment[i]];
    total += c;
    result.plan.pairs.push_back({i, assignment[i], mass});
  }
  result.plan.cost = total / static_cast<double>(n);
  result.distance = std::sqrt(std::max(0.0, result.plan.cost));
  return result;
}

namespace {

TransportResult general_lp(const EmpiricalMeasure& a, const EmpiricalMeasure& b, bool squared) {
  if (a.dim() != b.dim()) throw ConfigError("measures live in different dimensions");
  TransportResult result;
  std::vector<std::size_t> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.weight(i) > 0.0) rows.push_back(i);
  for (std::size_t j = 0; j < b.size(); ++j)
    if (b.weight(j) > 0.0) cols.push_back(j);
  if (rows.size() < a.size())
    result.warnings.push_back("dropped " + std::to_string(a.size() - rows.size()) +
                              " zero-weight source atoms");
  if (cols.size() < b.size())
    result.warnings.push_back("dropped " + std::to_string(b.size() - cols.size()) +
                              " zero-weight target atoms");

  const auto full = cost_matrix(a, b, squared);
  std::vector<double> supply(rows.size()), demand(cols.size()), cost(rows.size() * cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i) supply[i] = a.weight(rows[i]);
  for (std::size_t j = 0; j < cols.size(); ++j) demand[j] = b.weight(cols[j]);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) cost[i * cols.size() + j] = full[rows[i] * b.size() + cols[j]];

  auto plan = solve_transport(supply, demand, cost);
  for (auto& pair : plan.pairs) {
    pair.source = rows[pair.source];
    pair.target = cols[pair.target];
  }
  result.plan = std::move(plan);
  result.distance = squared ? std::sqrt(std::max(0.0, result.plan.cost)) : result.plan.cost;
  return result;
}

}  // namespace

TransportResult w2_general(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  return general_lp(a, b, true);
}

TransportResult w1_general(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  return general_lp(a, b, false);
}

double w2_bruteforce(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  if (a.size() != b.size() || !a.is_uniform() || !b.is_uniform())
    throw PreconditionError("w2_bruteforce needs uniform measures of equal size");
  const std::size_t n = a.size();
  if (n > 8) throw RangeError("w2_bruteforce enumerates M! permutations; M must be <= 8");
  const auto cost = cost_matrix(a, b);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += cost[i * n + perm[i]];
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(std::max(0.0, best / static_cast<double>(n)));
}

TransportResult w2(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  if (a.size() == b.size() && a.is_uniform() && b.is_uniform()) return w2_exact_uniform(a, b);
  return w2_general(a, b);
}

double mean_cost(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  const auto cost = cost_matrix(a, b);
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) total += a.weight(i) * b.weight(j) * cost[i * b.size() + j];
  return total;
}

SinkhornResult sinkhorn_w2(const EmpiricalMeasure& a, const EmpiricalMeasure& b, double epsilon,
                           std::size_t max_iter, double tol) {
  if (!(epsilon > 0.0)) throw ConfigError("Sinkhorn needs epsilon > 0");
  const std::size_t m = a.size();
  const std::size_t n = b.size();
  const auto cost = cost_matrix(a, b);
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();

  std::vector<double> log_a(m), log_b(n), f(m, 0.0), g(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) log_a[i] = a.weight(i) > 0.0 ? std::log(a.weight(i)) : neg_inf;
  for (std::size_t j = 0; j < n; ++j) log_b[j] = b.weight(j) > 0.0 ? std::log(b.weight(j)) : neg_inf;

  auto logsumexp = [](std::span<const double> z) {
    double hi = neg_inf;
    for (double x : z) hi = std::max(hi, x);
    if (hi == neg_inf) return neg_inf;
    double s = 0.0;
    for (double x : z) s += std::exp(x - hi);
    return hi + std::log(s);
  };

  // Columns are exact after a g update; measure the row marginal.
  auto row_error = [&](double eps) {
    double err = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < n; ++j) row += std::exp((f[i] + g[j] - cost[i * n + j]) / eps);
      err += std::abs(row - a.weight(i));
    }
    return err;
  };

  std::vector<double> buf(std::max(m, n));
  auto sweep = [&](double eps) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) buf[j] = (g[j] - cost[i * n + j]) / eps;
      f[i] = eps * (log_a[i] - logsumexp({buf.data(), n}));
    }
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < m; ++i) buf[i] = (f[i] - cost[i * n + j]) / eps;
      g[j] = eps * (log_b[j] - logsumexp({buf.data(), m}));
    }
    return row_error(eps);
  };

  // epsilon scaling: warm-start the potentials from a coarse problem, halving
  // epsilon down to the target. Intermediate stages only need a loose fit.
  const double cmax = cost.empty() ? 0.0 : *std::max_element(cost.begin(), cost.end());
  SinkhornResult result;
  double stage = std::max(epsilon, cmax);
  while (stage > epsilon && result.iterations < max_iter) {
    for (int k = 0; k < 50 && result.iterations < max_iter; ++k) {
      ++result.iterations;
      if (sweep(stage) <= 1e-3) break;
    }
    stage = std::max(epsilon, 0.5 * stage);
  }
  while (result.iterations < max_iter) {
    ++result.iterations;
    result.marginal_error = sweep(epsilon);
    if (result.marginal_error <= tol) {
      result.converged = true;
      break;
    }
  }
  if (!result.converged) {
    result.marginal_error = row_error(epsilon);
    result.warning = "Sinkhorn stopped after " + std::to_string(result.iterations) +
                     " iterations with marginal error " + std::to_string(result.marginal_error);
  }

  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double c = cost[i * n + j];
      total += std::exp((f[i] + g[j] - c) / epsilon) * c;
    }
  result.distance = std::sqrt(std::max(0.0, total));
  return result;
}

}  // namespace csflock
