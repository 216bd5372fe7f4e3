#pragma once

// Primal-dual solver for
//   sup { <q, u> : |grad u| <= 1 on every active cell }
//     = min { sum_c |p_c| h^2 : div p + q / h^2 = 0 }
// on a masked grid, with an exact duality-gap certificate.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmd/fields.hpp"
#include "fmd/grid_ops.hpp"

namespace fmd {

enum class DualStep {
  /// u <- u + s (div p + q): scalar step, tau s L^2 <= 1 with L = sqrt(8) / h.
  scalar,
  /// u <- u + (tau grad^T grad)^{-1} (div p + q): the step matrix meets the
  /// same bound with equality, one sparse back-substitution per iteration.
  laplacian,
};

struct SolverParams {
  int max_iter = 0;  // 0 selects 200 * resolution
  double tol_gap = 1e-3;
  double tol_div = 1e-6;
  /// Step sizes in per-unit-area scaling; 0 selects the default for `dual_step`
  /// (tau = s = h / sqrt(8) for scalar, tau = 30 for laplacian).
  double tau = 0.0;
  double s = 0.0;
  double theta = 1.0;
  DualStep dual_step = DualStep::laplacian;
  /// Rebalance tau at every check from the two repair costs (laplacian step only;
  /// the scalar iteration runs with fixed steps).
  bool adaptive = true;
  /// Iterations between certificate checks (and history records).
  int check_every = 10;
  /// Single-cell projection sweeps applied to u before the final scaling.
  int repair_sweeps = 20;

  void validate() const {
    if (max_iter < 0) throw std::invalid_argument("solver: max_iter must be non-negative");
    if (!(tol_gap > 0.0) || !(tol_div > 0.0)) throw std::invalid_argument("solver: tolerances must be positive");
    if (tau < 0.0 || s < 0.0) throw std::invalid_argument("solver: step sizes must be positive");
    if (theta < 0.0 || theta > 1.0) throw std::invalid_argument("solver: theta must lie in [0, 1]");
    if (check_every <= 0) throw std::invalid_argument("solver: check_every must be positive");
    if (repair_sweeps < 0) throw std::invalid_argument("solver: repair_sweeps must be non-negative");
  }
};

/// Certificate recorded at one check. `value` and `pairing` come from a
/// divergence-exact flux and a Lipschitz-feasible potential, so weak duality
/// applies to them directly; the raw_* fields describe the iterate itself.
struct IterateRecord {
  int iteration = 0;
  double value = 0.0;
  double pairing = 0.0;
  double gap = 0.0;           // value - pairing
  double residual_div = 0.0;  // |div p + q|_1 / |q|_1 of the raw iterate
  double raw_value = 0.0;
  double raw_pairing = 0.0;
  double raw_lipschitz = 0.0;
  double slack = 0.0;  // <div p + q, u> of the raw iterate
};

struct KantorovichSolution {
  PotentialField u;
  FluxMeasure p;
  /// Source actually solved for (compatible with the scheme's range).
  RasterSource q;
  double value = 0.0;
  double pairing = 0.0;
  double gap = 0.0;
  double residual_div = 0.0;
  double lipschitz = 0.0;
  double incompatible_mass = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<IterateRecord> history;

  double relative_gap() const { return value > 0.0 ? gap / value : gap; }
};

struct GapReport {
  double gap = 0.0;
  double value = 0.0;
  double pairing = 0.0;
  double lipschitz_violation = 0.0;  // max(0, max |grad u| - 1)
  double residual_div = 0.0;         // |div p + q|_1 / |q|_1
};

inline double max_cell_gradient(const CellStencil& st, const std::vector<double>& u) {
  double m = 0.0;
  for (std::size_t a = 0; a < st.size(); ++a) {
    const Vec2 g = st.grad_at(u, a);
    m = std::max(m, g.x * g.x + g.y * g.y);
  }
  return std::sqrt(m);
}

inline double dot_nodes(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

/// Pulls u towards the Lipschitz ball by sweeps of exact single-cell
/// projections, then scales uniformly so that every cell meets the bound.
/// Returns the scale factor.
inline double lipschitz_repair(const CellStencil& st, std::vector<double>& u, int sweeps) {
  const double h = st.grid().h;
  const std::size_t n = st.size();
  for (int s = 0; s < sweeps; ++s) {
    bool any = false;
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t a = (s % 2 == 0) ? t : n - 1 - t;
      const Vec2 gr = st.grad_at(u, a);
      const double m = norm(gr);
      if (m <= 1.0) continue;
      any = true;
      // u <- u - G^T (g - g / |g|) h^2, using G G^T = I / h^2 on one cell.
      const Vec2 e = gr * ((1.0 - 1.0 / m) * 0.5 * h);
      const auto k = st.corners(a);
      u[k[3]] -= e.x + e.y;
      u[k[0]] += e.x + e.y;
      u[k[1]] -= e.x - e.y;
      u[k[2]] += e.x - e.y;
    }
    if (!any) break;
  }
  const double lip = max_cell_gradient(st, u);
  if (lip <= 1.0) return 1.0;
  for (double& v : u) v /= lip;
  return 1.0 / lip;
}

/// sum_c |p_c| - sum_i q_i u_i with the feasibility violations reported alongside.
inline GapReport duality_gap(const RasterSource& q, const PotentialField& u, const FluxMeasure& p) {
  if (!q.grid->same_shape(*u.grid) || !q.grid->same_shape(*p.grid)) {
    throw std::invalid_argument("duality_gap: fields live on different grids");
  }
  const CellStencil st(q.grid);
  GapReport r;
  r.value = p.mass();
  r.pairing = dot_nodes(q.q, u.u);
  r.gap = r.value - r.pairing;
  r.lipschitz_violation = std::max(0.0, max_cell_gradient(st, u.u) - 1.0);
  std::vector<double> d(q.grid->num_nodes(), 0.0);
  st.div(p.p, d);
  double res = 0.0;
  for (std::size_t k = 0; k < d.size(); ++k) res += std::abs(d[k] + q.q[k]);
  const double tv = q.total_variation();
  r.residual_div = tv > 0.0 ? res / tv : res;
  return r;
}

namespace detail {

inline void pin(std::vector<double>& u, std::size_t anchor) {
  const double c = u[anchor];
  if (c == 0.0) return;
  for (double& v : u) v -= c;
}

inline std::size_t default_anchor(const Grid& g) {
  for (std::size_t k = 0; k < g.num_nodes(); ++k) {
    if (g.node_supported[k]) return k;
  }
  return 0;
}

}  // namespace detail

/// Primal-dual iteration on the compatible part of q, in per-unit-area
/// scaling (p density, q / h^2):
///
///   u  <- u + S (div p + q / h^2)
///   ub <- u + theta (u - u_prev)
///   p  <- shrink(p + tau grad ub, tau)
///
/// with S = s I or S = (tau grad^T grad)^{-1}. Every `check_every` iterations
/// the flux is made divergence-exact by a minimal-norm correction, the
/// potential is repaired into the Lipschitz ball, and the resulting gap is
/// recorded. The steps are rebalanced so that both repairs cost about the same.
inline KantorovichSolution solve(const RasterSource& q_in, SolverParams params, std::size_t anchor = SIZE_MAX) {
  params.validate();
  const Grid& g = *q_in.grid;
  const double tv_in = q_in.total_variation();
  if (std::abs(q_in.sum()) > 1e-9 * std::max(tv_in, 1e-300)) {
    throw std::invalid_argument("solve: unbalanced source, residual " + std::to_string(q_in.sum()));
  }
  if (anchor == SIZE_MAX) anchor = detail::default_anchor(g);
  if (anchor >= g.num_nodes() || !g.node_supported[anchor]) {
    throw std::invalid_argument("solve: anchor node is not supported");
  }

  CompatibleSource cs = make_compatible(q_in);
  KantorovichSolution sol;
  sol.q = cs.source;
  sol.incompatible_mass = cs.removed;
  sol.u = {q_in.grid, std::vector<double>(g.num_nodes(), 0.0), anchor};
  sol.p = {q_in.grid, std::vector<Vec2>(g.num_cells(), Vec2{})};
  const std::vector<double>& q = sol.q.q;
  const double tvq = sol.q.total_variation();
  if (tvq == 0.0) {
    sol.iterations = 1;
    sol.converged = true;
    sol.history.push_back({1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0});
    return sol;
  }

  const CellStencil st(q_in.grid);
  GradNormalFactor factor(st);
  const double h = g.h;
  const double h2 = h * h;
  const int max_iter = params.max_iter > 0 ? params.max_iter : 200 * std::max(g.nx, g.ny);
  const bool scalar = params.dual_step == DualStep::scalar;
  double tau = params.tau > 0.0 ? params.tau : (scalar ? h / std::sqrt(8.0) : 30.0);
  double sig = params.s > 0.0 ? params.s : h / std::sqrt(8.0);
  if (scalar && tau * sig * 8.0 / h2 > 1.0 + 1e-12) {
    throw std::invalid_argument("solve: step sizes violate tau s L^2 <= 1");
  }

  const std::size_t nn = g.num_nodes();
  const std::size_t nc = g.num_cells();
  std::vector<double> u(nn, 0.0), u_prev(nn, 0.0), ubar(nn, 0.0), divp(nn, 0.0), rhs(nn, 0.0), phi;
  std::vector<Vec2> p(nc, Vec2{}), gbar(nc, Vec2{}), pm(nc, Vec2{}), dp;
  std::vector<double> qd(nn);
  for (std::size_t k = 0; k < nn; ++k) qd[k] = q[k] / h2;

  double stretch = 1.0;  // step rebalancing factor, decays so the steps settle
  constexpr double kBalance = 2.0;
  constexpr double kDecay = 0.9;

  for (int it = 1; it <= max_iter; ++it) {
    u_prev = u;
    st.div(p, divp);
    for (std::size_t k = 0; k < nn; ++k) rhs[k] = divp[k] + qd[k];
    if (scalar) {
      for (std::size_t k = 0; k < nn; ++k) {
        if (g.node_supported[k]) u[k] += sig * rhs[k];
      }
    } else {
      factor.solve(rhs, phi);
      for (std::size_t k = 0; k < nn; ++k) u[k] += phi[k] / tau;
    }
    for (std::size_t k = 0; k < nn; ++k) ubar[k] = u[k] + params.theta * (u[k] - u_prev[k]);
    st.grad(ubar, gbar);
    for (std::size_t a = 0; a < st.size(); ++a) {
      const std::size_t c = st.cell(a);
      const Vec2 v = p[c] + tau * gbar[c];
      const double m = norm(v);
      p[c] = m > tau ? v * (1.0 - tau / m) : Vec2{};
    }

    if (it % params.check_every != 0 && it != max_iter) continue;

    IterateRecord rec;
    rec.iteration = it;
    std::vector<double> uf(u);
    detail::pin(uf, anchor);
    st.div(p, divp);
    double res = 0.0, slack = 0.0, raw_mass = 0.0;
    for (std::size_t k = 0; k < nn; ++k) {
      rhs[k] = divp[k] * h2 + q[k];
      res += std::abs(rhs[k]);
      slack += rhs[k] * uf[k];
    }
    for (std::size_t c = 0; c < nc; ++c) {
      pm[c] = p[c] * h2;
      raw_mass += norm(pm[c]);
    }
    const double corr_residual = factor.correct(rhs, dp);
    double mass = 0.0, corr_mass = 0.0;
    for (std::size_t c = 0; c < nc; ++c) {
      corr_mass += norm(dp[c]);
      pm[c] += dp[c];
      mass += norm(pm[c]);
    }
    rec.raw_lipschitz = max_cell_gradient(st, uf);
    rec.raw_pairing = dot_nodes(q, uf);
    lipschitz_repair(st, uf, params.repair_sweeps);
    detail::pin(uf, anchor);
    rec.value = mass;
    rec.pairing = dot_nodes(q, uf);
    rec.gap = mass - rec.pairing;
    rec.residual_div = res / tvq;
    rec.raw_value = raw_mass;
    rec.slack = slack;
    sol.history.push_back(rec);

    const bool done = rec.gap <= params.tol_gap * mass && corr_residual <= params.tol_div * tvq;
    if (done || it == max_iter) {
      align_sublattices(st, uf);
      detail::pin(uf, anchor);
      sol.u.u = std::move(uf);
      sol.p.p = pm;
      const GapReport gr = duality_gap(sol.q, sol.u, sol.p);
      sol.value = gr.value;
      sol.pairing = gr.pairing;
      sol.gap = gr.gap;
      sol.residual_div = gr.residual_div;
      sol.lipschitz = max_cell_gradient(st, sol.u.u);
      sol.iterations = it;
      sol.converged = done;
      return sol;
    }

    if (params.adaptive && !scalar) {
      // Larger tau favours the potential, smaller tau the flux.
      const double cost_p = corr_mass / mass;
      const double cost_u = std::max(0.0, rec.raw_pairing - rec.pairing) / mass;
      if (cost_p > kBalance * cost_u) {
        tau /= 1.0 + stretch;
        stretch *= kDecay;
      } else if (cost_u > kBalance * cost_p) {
        tau *= 1.0 + stretch;
        stretch *= kDecay;
      }
    }
  }
  return sol;
}

/// Writes iteration,value,gap,residual_div rows.
inline void write_history_csv(const std::string& path, const std::vector<IterateRecord>& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_history_csv: cannot open " + path);
  out.precision(17);
  out << "iteration,value,gap,residual_div\n";
  for (const auto& r : history) out << r.iteration << ',' << r.value << ',' << r.gap << ',' << r.residual_div << '\n';
  if (!out) throw std::runtime_error("write_history_csv: write failed for " + path);
}

}  // namespace fmd
