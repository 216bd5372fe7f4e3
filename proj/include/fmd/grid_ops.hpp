#pragma once

// Cell-centred gradient / node divergence pair on a masked grid, source
// compatibility with the operator range, and minimal-norm flux correction
// through a sparse factorization of grad^T grad.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "fmd/fields.hpp"

namespace fmd {

/// Precomputed active-cell stencil. The cell gradient only sees the two
/// diagonal differences u11 - u00 and u10 - u01, so the operator splits the
/// node lattice into two interleaved diagonal sublattices.
class CellStencil {
 public:
  explicit CellStencil(GridPtr grid) : grid_(std::move(grid)) {
    const Grid& g = *grid_;
    for (std::size_t c = 0; c < g.num_cells(); ++c) {
      if (!g.cell_active[c]) continue;
      const auto k = g.cell_corners(c);
      cells_.push_back(static_cast<std::uint32_t>(c));
      n00_.push_back(static_cast<std::uint32_t>(k[0]));
      n10_.push_back(static_cast<std::uint32_t>(k[1]));
      n01_.push_back(static_cast<std::uint32_t>(k[2]));
      n11_.push_back(static_cast<std::uint32_t>(k[3]));
    }
  }

  const Grid& grid() const { return *grid_; }
  const GridPtr& grid_ptr() const { return grid_; }
  std::size_t size() const { return cells_.size(); }
  std::size_t cell(std::size_t a) const { return cells_[a]; }

  /// Gradient on active cells (others left untouched); 1/h scaling included.
  void grad(const std::vector<double>& u, std::vector<Vec2>& g) const {
    const double inv2h = 0.5 / grid_->h;
    for (std::size_t a = 0; a < cells_.size(); ++a) {
      const double d1 = u[n11_[a]] - u[n00_[a]];
      const double d2 = u[n10_[a]] - u[n01_[a]];
      g[cells_[a]] = {(d1 + d2) * inv2h, (d1 - d2) * inv2h};
    }
  }

  /// Corner nodes of the a-th active cell in the order (0,0), (1,0), (0,1), (1,1).
  std::array<std::size_t, 4> corners(std::size_t a) const { return {n00_[a], n10_[a], n01_[a], n11_[a]}; }

  Vec2 grad_at(const std::vector<double>& u, std::size_t a) const {
    const double inv2h = 0.5 / grid_->h;
    const double d1 = u[n11_[a]] - u[n00_[a]];
    const double d2 = u[n10_[a]] - u[n01_[a]];
    return {(d1 + d2) * inv2h, (d1 - d2) * inv2h};
  }

  /// Negative adjoint of grad: sum_c grad(u)_c . p_c = -sum_i u_i div(p)_i.
  /// Overwrites div on every node.
  void div(const std::vector<Vec2>& p, std::vector<double>& d) const {
    std::fill(d.begin(), d.end(), 0.0);
    add_div(p, d, 1.0);
  }

  /// d += scale * div(p).
  void add_div(const std::vector<Vec2>& p, std::vector<double>& d, double scale) const {
    const double inv2h = 0.5 / grid_->h * scale;
    for (std::size_t a = 0; a < cells_.size(); ++a) {
      const Vec2 v = p[cells_[a]];
      const double al = (v.x + v.y) * inv2h;
      const double be = (v.x - v.y) * inv2h;
      d[n11_[a]] -= al;
      d[n00_[a]] += al;
      d[n10_[a]] -= be;
      d[n01_[a]] += be;
    }
  }

  /// Labels each supported node with its connected component in the
  /// diagonal-sublattice graph; unsupported nodes get -1. Returns the count.
  int sublattice_components(std::vector<int>& label) const {
    const Grid& g = *grid_;
    std::vector<std::uint32_t> parent(g.num_nodes());
    std::iota(parent.begin(), parent.end(), 0u);
    auto find = [&](std::uint32_t x) {
      while (parent[x] != x) {
        parent[x] = parent[parent[x]];
        x = parent[x];
      }
      return x;
    };
    auto unite = [&](std::uint32_t a, std::uint32_t b) {
      a = find(a);
      b = find(b);
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    };
    for (std::size_t a = 0; a < cells_.size(); ++a) {
      unite(n00_[a], n11_[a]);
      unite(n10_[a], n01_[a]);
    }
    label.assign(g.num_nodes(), -1);
    std::vector<int> root_label(g.num_nodes(), -1);
    int count = 0;
    for (std::size_t k = 0; k < g.num_nodes(); ++k) {
      if (!g.node_supported[k]) continue;
      const std::uint32_t r = find(static_cast<std::uint32_t>(k));
      if (root_label[r] < 0) root_label[r] = count++;
      label[k] = root_label[r];
    }
    return count;
  }

 private:
  GridPtr grid_;
  std::vector<std::uint32_t> cells_;
  std::vector<std::uint32_t> n00_, n10_, n01_, n11_;
};

inline std::vector<Vec2> discrete_grad(const PotentialField& u) {
  const CellStencil st(u.grid);
  std::vector<Vec2> g(u.grid->num_cells(), Vec2{});
  st.grad(u.u, g);
  return g;
}

/// Node divergence of a cell measure (mass units), exact negative adjoint of discrete_grad.
inline std::vector<double> discrete_div(const FluxMeasure& p) {
  const CellStencil st(p.grid);
  std::vector<double> d(p.grid->num_nodes(), 0.0);
  st.div(p.p, d);
  return d;
}

/// Removes the per-component mean on every diagonal sublattice; afterwards the
/// field is orthogonal to the null space of the cell gradient. Returns the
/// l1 norm of what was removed.
inline double project_to_range(const CellStencil& st, std::vector<double>& r) {
  std::vector<int> label;
  const int n = st.sublattice_components(label);
  std::vector<double> sum(n, 0.0);
  std::vector<std::size_t> cnt(n, 0);
  for (std::size_t k = 0; k < r.size(); ++k) {
    if (label[k] < 0) continue;
    sum[label[k]] += r[k];
    ++cnt[label[k]];
  }
  double removed = 0.0;
  for (std::size_t k = 0; k < r.size(); ++k) {
    if (label[k] < 0) {
      removed += std::abs(r[k]);
      r[k] = 0.0;
      continue;
    }
    const double m = sum[label[k]] / static_cast<double>(cnt[label[k]]);
    r[k] -= m;
    removed += std::abs(m);
  }
  return removed;
}

/// Source compatible with the cell-gradient scheme: every node keeps half its
/// weight and spreads the other half evenly over its supported axis
/// neighbours (which lie on the other sublattice), so each sublattice carries
/// a balanced share. The result is then projected onto the operator range.
struct CompatibleSource {
  RasterSource source;
  double removed = 0.0;  // l1 mass discarded by the range projection
};

inline CompatibleSource make_compatible(const RasterSource& q) {
  const Grid& g = *q.grid;
  RasterSource out{q.grid, std::vector<double>(g.num_nodes(), 0.0)};
  auto shares_active_cell = [&](int i0, int j0, int i1, int j1) {
    // Axis neighbours share one or two cells; either must be active.
    if (j0 == j1) {
      const int i = std::min(i0, i1);
      return (j0 < g.ny && g.cell_active[g.cell(i, j0)]) || (j0 > 0 && g.cell_active[g.cell(i, j0 - 1)]);
    }
    const int j = std::min(j0, j1);
    return (i0 < g.nx && g.cell_active[g.cell(i0, j)]) || (i0 > 0 && g.cell_active[g.cell(i0 - 1, j)]);
  };
  for (std::size_t k = 0; k < g.num_nodes(); ++k) {
    const double w = q.q[k];
    if (w == 0.0) continue;
    const int i = g.node_i(k);
    const int j = g.node_j(k);
    std::array<std::size_t, 4> nb{};
    int cnt = 0;
    const int di[4] = {1, -1, 0, 0};
    const int dj[4] = {0, 0, 1, -1};
    for (int d = 0; d < 4; ++d) {
      const int ii = i + di[d];
      const int jj = j + dj[d];
      if (ii < 0 || jj < 0 || ii > g.nx || jj > g.ny) continue;
      if (!shares_active_cell(i, j, ii, jj)) continue;
      nb[cnt++] = g.node(ii, jj);
    }
    if (cnt == 0) {
      out.q[k] += w;
      continue;
    }
    out.q[k] += 0.5 * w;
    for (int d = 0; d < cnt; ++d) out.q[nb[d]] += 0.5 * w / cnt;
  }
  CompatibleSource cs{std::move(out), 0.0};
  const CellStencil st(q.grid);
  cs.removed = project_to_range(st, cs.source.q);
  return cs;
}

/// Shifts each diagonal sublattice component of u by a constant so that axis
/// neighbours agree on average. The cell gradient and the pairing with any
/// compatible source are unchanged; only the invisible checkerboard mode goes.
inline void align_sublattices(const CellStencil& st, std::vector<double>& u) {
  std::vector<int> label;
  const int n = st.sublattice_components(label);
  if (n < 2) return;
  std::map<std::pair<int, int>, std::pair<double, int>> diff;
  auto add = [&](std::size_t i, std::size_t j) {
    const int a = label[i];
    const int b = label[j];
    if (a == b) return;
    auto& e = a < b ? diff[{a, b}] : diff[{b, a}];
    e.first += a < b ? u[i] - u[j] : u[j] - u[i];
    ++e.second;
  };
  for (std::size_t a = 0; a < st.size(); ++a) {
    const auto k = st.corners(a);
    add(k[0], k[1]);
    add(k[0], k[2]);
    add(k[1], k[3]);
    add(k[2], k[3]);
  }
  std::vector<std::vector<std::pair<int, double>>> adj(n);
  for (const auto& [key, e] : diff) {
    const double m = e.first / e.second;  // mean of u_a - u_b
    adj[key.first].push_back({key.second, m});
    adj[key.second].push_back({key.first, -m});
  }
  std::vector<double> shift(n, 0.0);
  std::vector<char> seen(n, 0);
  for (int root = 0; root < n; ++root) {
    if (seen[root]) continue;
    seen[root] = 1;
    std::vector<int> stack{root};
    while (!stack.empty()) {
      const int a = stack.back();
      stack.pop_back();
      for (const auto& [b, m] : adj[a]) {
        if (seen[b]) continue;
        seen[b] = 1;
        // After shifting, mean(u_a + s_a - u_b - s_b) = 0.
        shift[b] = shift[a] + m;
        stack.push_back(b);
      }
    }
  }
  for (std::size_t k = 0; k < u.size(); ++k) {
    if (label[k] >= 0) u[k] += shift[label[k]];
  }
}

/// Sparse Cholesky factor of grad^T grad on the supported nodes. One node per
/// diagonal-sublattice component is pinned, which removes the null space, so
/// solve() returns the minimal-energy potential for any right-hand side in
/// the range of div.
class GradNormalFactor {
 public:
  explicit GradNormalFactor(const CellStencil& st) : st_(&st) {
    const Grid& g = st.grid();
    std::vector<int> label;
    const int ncomp = st.sublattice_components(label);
    std::vector<char> pinned_comp(ncomp, 0);
    index_.assign(g.num_nodes(), -1);
    int n = 0;
    for (std::size_t k = 0; k < g.num_nodes(); ++k) {
      if (label[k] < 0) continue;
      if (!pinned_comp[label[k]]) {
        pinned_comp[label[k]] = 1;
        continue;
      }
      index_[k] = n++;
    }
    if (n == 0) throw std::invalid_argument("GradNormalFactor: no free nodes");
    // Per cell, h^2 |grad u|^2 = ((u11 - u00)^2 + (u10 - u01)^2) / 2.
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(st.size() * 8);
    auto edge = [&](std::size_t a, std::size_t b) {
      const int ia = index_[a];
      const int ib = index_[b];
      if (ia >= 0) trip.emplace_back(ia, ia, 0.5);
      if (ib >= 0) trip.emplace_back(ib, ib, 0.5);
      if (ia >= 0 && ib >= 0) {
        trip.emplace_back(ia, ib, -0.5);
        trip.emplace_back(ib, ia, -0.5);
      }
    };
    for (std::size_t a = 0; a < st.size(); ++a) {
      const auto k = st.corners(a);
      edge(k[0], k[3]);
      edge(k[1], k[2]);
    }
    Eigen::SparseMatrix<double> m(n, n);
    m.setFromTriplets(trip.begin(), trip.end());
    ldlt_.compute(m);
    if (ldlt_.info() != Eigen::Success) throw std::runtime_error("GradNormalFactor: factorization failed");
    rhs_.resize(n);
  }

  /// phi with grad^T grad phi = r after projecting r onto the range; pinned nodes get 0.
  void solve(std::vector<double> r, std::vector<double>& phi) {
    const Grid& g = st_->grid();
    project_to_range(*st_, r);
    const double h2 = g.h * g.h;
    for (std::size_t k = 0; k < r.size(); ++k) {
      if (index_[k] >= 0) rhs_[index_[k]] = r[k] * h2;
    }
    const Eigen::VectorXd x = ldlt_.solve(rhs_);
    phi.assign(r.size(), 0.0);
    for (std::size_t k = 0; k < r.size(); ++k) {
      if (index_[k] >= 0) phi[k] = x[index_[k]];
    }
  }

  /// Minimal Euclidean-norm increment dp (cell measures) with div(dp) = -r for
  /// r in the range of div; returns the l1 norm of div(dp) + r.
  double correct(const std::vector<double>& r, std::vector<Vec2>& dp) {
    std::vector<double> phi;
    solve(r, phi);
    dp.assign(st_->grid().num_cells(), Vec2{});
    st_->grad(phi, dp);
    std::vector<double> check(r.size(), 0.0);
    st_->div(dp, check);
    double l1 = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) l1 += std::abs(check[k] + r[k]);
    return l1;
  }

 private:
  const CellStencil* st_;
  std::vector<int> index_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
  Eigen::VectorXd rhs_;
};

}  // namespace fmd
