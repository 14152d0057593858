#pragma once
// Independent reference computations for the tests. Deliberately naive:
// nothing here shares code with the library beyond the Ensemble container.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "csflock/ensemble.hpp"

namespace oracle {

// F_i = (1/N) sum_j psi(|X_i - X_j|)(V_j - V_i) in long double.
inline std::vector<double> direct_force(const csflock::Ensemble& ens,
                                        const std::function<double(double)>& psi) {
  const std::size_t n = ens.size(), d = ens.dim();
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<long double> acc(d, 0.0L);
    for (std::size_t j = 0; j < n; ++j) {
      long double r2 = 0.0L;
      for (std::size_t k = 0; k < d; ++k) {
        const long double dx = static_cast<long double>(ens.x(i)[k]) - ens.x(j)[k];
        r2 += dx * dx;
      }
      const long double w = psi(static_cast<double>(std::sqrt(r2)));
      for (std::size_t k = 0; k < d; ++k)
        acc[k] += w * (static_cast<long double>(ens.v(j)[k]) - ens.v(i)[k]);
    }
    for (std::size_t k = 0; k < d; ++k) out[i * d + k] = static_cast<double>(acc[k] / n);
  }
  return out;
}

inline double sq_dist(const double* a, const double* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t k = 0; k < dim; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

// Minimum over all permutations of (1/M) sum |a_i - b_pi(i)|^2, square-rooted.
inline double permutation_w2(const std::vector<double>& a, const std::vector<double>& b,
                             std::size_t dim) {
  const std::size_t m = a.size() / dim;
  std::vector<std::size_t> p(m);
  std::iota(p.begin(), p.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < m; ++i) c += sq_dist(&a[i * dim], &b[p[i] * dim], dim);
    best = std::min(best, c);
  } while (std::next_permutation(p.begin(), p.end()));
  return std::sqrt(best / static_cast<double>(m));
}

// Exhaustive basic-feasible-solution enumeration for the m x n transportation
// LP. Every vertex of the transportation polytope is supported on a forest of
// the bipartite graph K_{m,n}, which extends to a spanning tree; a spanning tree
// fixes the flows (edge flow = net supply of the subtree below it). So the
// minimum over all spanning trees with nonnegative flows is the LP optimum.
class TransportVertexOracle {
 public:
  TransportVertexOracle(std::vector<double> supply, std::vector<double> demand,
                        std::vector<double> cost)
      : m_(supply.size()), n_(demand.size()), cost_(std::move(cost)) {
    net_ = std::move(supply);
    for (double b : demand) net_.push_back(-b);
    const std::size_t nodes = m_ + n_;
    parent_.resize(nodes);
    adj_.resize(nodes * nodes);
    adj_cell_.resize(nodes * nodes);
    deg_.resize(nodes);
    seen_.resize(nodes);
    stack_.resize(nodes);
    order_.resize(nodes);
    up_.resize(nodes);
    up_cell_.resize(nodes);
    sub_.resize(nodes);
  }

  double solve() {
    best_ = std::numeric_limits<double>::infinity();
    chosen_.clear();
    std::iota(parent_.begin(), parent_.end(), 0);
    search(0);
    return best_;
  }

  std::size_t trees_visited() const { return trees_; }

 private:
  std::size_t find(std::size_t u) const {
    while (parent_[u] != u) u = parent_[u];
    return u;
  }

  void search(std::size_t cell) {
    const std::size_t need = m_ + n_ - 1;
    if (chosen_.size() == need) {
      evaluate();
      return;
    }
    const std::size_t cells = m_ * n_;
    if (cell == cells || chosen_.size() + (cells - cell) < need) return;
    const std::size_t r = cell / n_, c = m_ + cell % n_;
    const std::size_t ra = find(r), rb = find(c);
    if (ra != rb) {
      // union without path compression so it can be undone
      parent_[ra] = rb;
      chosen_.push_back(cell);
      search(cell + 1);
      chosen_.pop_back();
      parent_[ra] = ra;
    }
    search(cell + 1);
  }

  void evaluate() {
    ++trees_;
    const std::size_t nodes = m_ + n_;
    // adjacency in flat fixed-size buffers; a tree node has degree < nodes
    std::fill(deg_.begin(), deg_.end(), 0);
    for (std::size_t cell : chosen_) {
      const std::size_t r = cell / n_, c = m_ + cell % n_;
      adj_[r * nodes + deg_[r]] = c;
      adj_cell_[r * nodes + deg_[r]++] = cell;
      adj_[c * nodes + deg_[c]] = r;
      adj_cell_[c * nodes + deg_[c]++] = cell;
    }
    // DFS from node 0, then accumulate subtree sums in reverse visiting order.
    std::fill(seen_.begin(), seen_.end(), 0);
    std::size_t top = 0, count = 0;
    stack_[top++] = 0;
    seen_[0] = 1;
    while (top > 0) {
      const std::size_t u = stack_[--top];
      order_[count++] = u;
      for (std::size_t e = 0; e < deg_[u]; ++e) {
        const std::size_t w = adj_[u * nodes + e];
        if (!seen_[w]) {
          seen_[w] = 1;
          up_[w] = u;
          up_cell_[w] = adj_cell_[u * nodes + e];
          stack_[top++] = w;
        }
      }
    }
    std::copy(net_.begin(), net_.end(), sub_.begin());
    double total = 0.0;
    for (std::size_t k = count; k-- > 1;) {
      const std::size_t u = order_[k];
      // flow on edge (u, parent) carries sub[u] from a row toward a column
      const double flow = u < m_ ? sub_[u] : -sub_[u];
      if (flow < -1e-12) return;
      total += std::max(flow, 0.0) * cost_[up_cell_[u]];
      sub_[up_[u]] += sub_[u];
    }
    best_ = std::min(best_, total);
  }

  std::size_t m_, n_;
  std::vector<double> cost_;
  std::vector<double> net_;
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> chosen_;
  std::vector<std::size_t> adj_, adj_cell_, deg_, stack_, order_, up_, up_cell_;
  std::vector<char> seen_;
  std::vector<double> sub_;
  double best_ = 0.0;
  std::size_t trees_ = 0;
};

// Kolmogorov-Smirnov statistic of a sample against the standard normal CDF.
inline double ks_normal(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = 0.5 * std::erfc(-xs[i] / std::sqrt(2.0));
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  return d;
}

}  // namespace oracle
