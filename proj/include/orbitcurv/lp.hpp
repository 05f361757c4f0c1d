#pragma once

// Exact discrete optimal transport (Kantorovich problem) by the primal
// transportation simplex. Used as an independent oracle for the quantile
// formulas: it never sorts atoms and knows nothing about the line.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <vector>

#include "orbitcurv/errors.hpp"

namespace orbitcurv {

struct PlanEntry {
  std::size_t source;
  std::size_t target;
  double weight;
};

struct TransportPlan {
  std::size_t n_source = 0;
  std::size_t n_target = 0;
  std::vector<PlanEntry> entries;

  /// Largest violation of the marginal constraints.
  double marginal_defect(std::span<const double> a, std::span<const double> b) const {
    std::vector<double> rs(n_source, 0.0), cs(n_target, 0.0);
    for (const auto& e : entries) {
      rs[e.source] += e.weight;
      cs[e.target] += e.weight;
    }
    double worst = 0;
    for (std::size_t i = 0; i < n_source; ++i) worst = std::max(worst, std::abs(rs[i] - a[i]));
    for (std::size_t j = 0; j < n_target; ++j) worst = std::max(worst, std::abs(cs[j] - b[j]));
    return worst;
  }

  double cost(std::span<const double> c) const {
    double s = 0;
    for (const auto& e : entries) s += e.weight * c[e.source * n_target + e.target];
    return s;
  }
};

struct KantorovichResult {
  TransportPlan plan;
  double cost = 0;
  std::size_t pivots = 0;
};

/// Cost of the independent coupling a x b.
inline double product_plan_cost(std::span<const double> a, std::span<const double> b,
                                std::span<const double> c) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) s += a[i] * b[j] * c[i * b.size() + j];
  }
  return s;
}

/// Squared-distance cost matrix between two point sets on the line.
inline std::vector<double> squared_distance_cost(std::span<const double> x, std::span<const double> y) {
  std::vector<double> c(x.size() * y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < y.size(); ++j) {
      const double d = x[i] - y[j];
      c[i * y.size() + j] = d * d;
    }
  }
  return c;
}

/// Minimizes sum c_ij pi_ij over couplings of a and b. `cost` is row-major
/// n x m. Exact up to floating-point pivoting.
inline KantorovichResult kantorovich_lp(std::span<const double> a, std::span<const double> b,
                                        std::span<const double> cost) {
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  if (n == 0 || m == 0) throw MassError("kantorovich_lp: empty marginal");
  if (cost.size() != n * m) throw ShapeError("kantorovich_lp: cost must be n x m");
  for (double v : a) {
    if (!(v >= 0)) throw MassError("kantorovich_lp: negative source weight");
  }
  for (double v : b) {
    if (!(v >= 0)) throw MassError("kantorovich_lp: negative target weight");
  }
  const double sa = std::accumulate(a.begin(), a.end(), 0.0);
  const double sb = std::accumulate(b.begin(), b.end(), 0.0);
  if (std::abs(sa - sb) > 1e-9) {
    std::ostringstream os;
    os << "kantorovich_lp: marginals carry different mass (" << sa << " vs " << sb << ")";
    throw MassError(os.str());
  }

  // Basis: exactly n + m - 1 cells forming a spanning tree of rows + columns.
  struct Cell {
    std::size_t i, j;
    double x;
  };
  std::vector<Cell> basis;
  basis.reserve(n + m - 1);
  {
    std::size_t i = 0, j = 0;
    double ra = a[0], rb = b[0];
    while (true) {
      const double x = std::min(ra, rb);
      basis.push_back({i, j, x});
      if (i == n - 1 && j == m - 1) break;
      if (j == m - 1 || (i < n - 1 && ra <= rb)) {
        rb -= x;
        ++i;
        ra = a[i];
      } else {
        ra -= x;
        ++j;
        rb = b[j];
      }
    }
  }

  const std::size_t nodes = n + m;
  std::vector<std::vector<std::size_t>> adj(nodes);
  std::vector<double> pot(nodes, 0.0);
  std::vector<std::size_t> parent(nodes), parent_cell(nodes), depth(nodes), queue;
  std::vector<char> seen(nodes);

  auto rebuild = [&]() {
    for (auto& l : adj) l.clear();
    for (std::size_t k = 0; k < basis.size(); ++k) {
      adj[basis[k].i].push_back(k);
      adj[n + basis[k].j].push_back(k);
    }
    std::fill(seen.begin(), seen.end(), 0);
    queue.clear();
    queue.push_back(0);
    seen[0] = 1;
    pot[0] = 0;
    depth[0] = 0;
    parent[0] = 0;
    for (std::size_t q = 0; q < queue.size(); ++q) {
      const std::size_t v = queue[q];
      for (std::size_t k : adj[v]) {
        const std::size_t w = (v < n) ? n + basis[k].j : basis[k].i;
        if (seen[w]) continue;
        seen[w] = 1;
        parent[w] = v;
        parent_cell[w] = k;
        depth[w] = depth[v] + 1;
        const double c = cost[basis[k].i * m + basis[k].j];
        pot[w] = c - pot[v];  // u_i + v_j = c_ij on basic cells
        queue.push_back(w);
      }
    }
    if (queue.size() != nodes) throw Error("kantorovich_lp: basis is not a spanning tree");
  };

  double cmax = 0;
  for (double c : cost) cmax = std::max(cmax, std::abs(c));
  const double eps = 1e-13 * std::max(1.0, cmax);
  const std::size_t total = n * m;
  const std::size_t block = std::max<std::size_t>(64, static_cast<std::size_t>(std::sqrt(double(total))));
  const std::size_t max_pivots = 200 * (n + m) + 10000;
  std::size_t cursor = 0;

  KantorovichResult res;
  std::vector<std::size_t> up_a, up_b;
  while (true) {
    rebuild();
    // Block pricing: most negative reduced cost within the first block that has one.
    std::size_t enter = total;
    double best = -eps;
    std::size_t scanned = 0;
    while (scanned < total) {
      const std::size_t end = std::min(scanned + block, total);
      for (std::size_t s = scanned; s < end; ++s) {
        const std::size_t idx = (cursor + s) % total;
        const std::size_t i = idx / m, j = idx % m;
        const double r = cost[idx] - pot[i] - pot[n + j];
        if (r < best) {
          best = r;
          enter = idx;
        }
      }
      scanned = end;
      if (enter != total) break;
    }
    if (enter == total) break;
    cursor = (enter + 1) % total;
    if (++res.pivots > max_pivots) throw Error("kantorovich_lp: pivot limit exceeded");

    const std::size_t ei = enter / m, ej = enter % m;
    // Tree path between row ei and column ej.
    std::size_t x = ei, y = n + ej;
    up_a.clear();
    up_b.clear();
    while (depth[x] > depth[y]) {
      up_a.push_back(parent_cell[x]);
      x = parent[x];
    }
    while (depth[y] > depth[x]) {
      up_b.push_back(parent_cell[y]);
      y = parent[y];
    }
    while (x != y) {
      up_a.push_back(parent_cell[x]);
      x = parent[x];
      up_b.push_back(parent_cell[y]);
      y = parent[y];
    }
    // Cycle order: entering (+), then from column ej to the meeting node, then down to row ei.
    std::vector<std::size_t> cycle(up_b.begin(), up_b.end());
    cycle.insert(cycle.end(), up_a.rbegin(), up_a.rend());
    double step = std::numeric_limits<double>::infinity();
    std::size_t leave = cycle.size();
    for (std::size_t k = 0; k < cycle.size(); k += 2) {
      if (basis[cycle[k]].x < step) {
        step = basis[cycle[k]].x;
        leave = k;
      }
    }
    for (std::size_t k = 0; k < cycle.size(); ++k) {
      basis[cycle[k]].x += (k % 2 == 0) ? -step : step;
    }
    const std::size_t out = cycle[leave];
    basis[out] = Cell{ei, ej, step};
  }

  res.plan.n_source = n;
  res.plan.n_target = m;
  for (const auto& c : basis) {
    const double w = std::max(0.0, c.x);
    if (w > 0) res.plan.entries.push_back({c.i, c.j, w});
  }
  res.cost = res.plan.cost(cost);
  return res;
}

}  // namespace orbitcurv
