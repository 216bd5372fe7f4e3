#pragma once

// Optimal conductivity tensor C = rho n (x) n assembled from a converged
// Kantorovich pair, the optimal temperature, and the energy bookkeeping.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmd/fields.hpp"
#include "fmd/grid_ops.hpp"
#include "fmd/solver_flow.hpp"

namespace fmd {

/// Rank-one cell tensors C_c = rho_c n_c (x) n_c. rho is the cell integral
/// of the trace, so sum(rho) is the total budget.
struct TensorField {
  GridPtr grid;
  std::vector<double> rho;
  std::vector<Vec2> n;
  double lambda0 = 0.0;
  double value_Q1 = 0.0;

  double trace_total() const {
    double s = 0.0;
    for (double r : rho) s += r;
    return s;
  }
};

/// Relative flux floor below which a cell gets no material.
inline constexpr double kFluxFloor = 1e-12;

inline TensorField build_optimal_tensor(const PotentialField& u, const FluxMeasure& p, double lambda0) {
  if (!(lambda0 > 0.0)) throw std::invalid_argument("build_optimal_tensor: lambda0 must be positive");
  if (!u.grid->same_shape(*p.grid)) throw std::invalid_argument("build_optimal_tensor: fields live on different grids");
  TensorField t{p.grid, std::vector<double>(p.p.size(), 0.0), std::vector<Vec2>(p.p.size(), Vec2{}), lambda0, p.mass()};
  if (!(t.value_Q1 > 0.0)) throw std::invalid_argument("build_optimal_tensor: flux has zero mass");
  const double floor = kFluxFloor * p.max_magnitude();
  // Normalized by the mass that survives the floor so the budget is met exactly.
  double kept = 0.0;
  for (Vec2 v : p.p) {
    if (norm(v) > floor) kept += norm(v);
  }
  for (std::size_t c = 0; c < p.p.size(); ++c) {
    const double m = norm(p.p[c]);
    if (m <= floor) continue;
    t.rho[c] = lambda0 * m / kept;
    t.n[c] = p.p[c] / m;
  }
  return t;
}

/// u_tilde = (value_Q1 / lambda0) u.
inline PotentialField optimal_temperature(const PotentialField& u, double value_Q1, double lambda0) {
  if (!(lambda0 > 0.0)) throw std::invalid_argument("optimal_temperature: lambda0 must be positive");
  PotentialField out = u;
  const double s = value_Q1 / lambda0;
  for (double& v : out.u) v *= s;
  return out;
}

namespace detail {

inline void check_same_grid(const Grid& a, const Grid& b, const char* what) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": fields live on different grids");
}

/// sum_c rho_c (n_c . grad u_c)^2.
inline double quadratic_form(const TensorField& C, const PotentialField& u) {
  const CellStencil st(C.grid);
  double s = 0.0;
  for (std::size_t a = 0; a < st.size(); ++a) {
    const std::size_t c = st.cell(a);
    if (C.rho[c] == 0.0) continue;
    const double d = dot(C.n[c], st.grad_at(u.u, a));
    s += C.rho[c] * d * d;
  }
  return s;
}

}  // namespace detail

/// E(C, u) = 1/2 sum_c rho_c (n_c . grad u_c)^2 - sum_i q_i u_i.
inline double energy(const TensorField& C, const PotentialField& u, const RasterSource& q) {
  detail::check_same_grid(*C.grid, *u.grid, "energy");
  detail::check_same_grid(*C.grid, *q.grid, "energy");
  double lin = 0.0;
  for (std::size_t k = 0; k < q.q.size(); ++k) lin += q.q[k] * u.u[k];
  return 0.5 * detail::quadratic_form(C, u) - lin;
}

/// Raised when <C, grad u (x) grad u> vanishes while <Q, u> does not: the
/// compliance of C is unbounded along u.
class UnboundedCompliance : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// max over t of -2 E(C, t u) = <Q,u>^2 / <C, grad u (x) grad u>.
inline double compliance_lower_bound(const TensorField& C, const PotentialField& u, const RasterSource& q) {
  detail::check_same_grid(*C.grid, *u.grid, "compliance_lower_bound");
  detail::check_same_grid(*C.grid, *q.grid, "compliance_lower_bound");
  double pairing = 0.0;
  double scale = 0.0;
  for (std::size_t k = 0; k < q.q.size(); ++k) {
    pairing += q.q[k] * u.u[k];
    scale += std::abs(q.q[k] * u.u[k]);
  }
  // A pairing at round-off level means u is orthogonal to Q.
  if (std::abs(pairing) <= 1e-12 * scale) pairing = 0.0;
  const double quad = detail::quadratic_form(C, u);
  if (quad == 0.0) {
    if (pairing == 0.0) return 0.0;
    throw UnboundedCompliance("compliance_lower_bound: zero quadratic form with nonzero pairing " +
                              std::to_string(pairing));
  }
  return pairing * pairing / quad;
}

/// Flux induced by the design, p_tilde_c = rho_c (n_c . grad u_c) n_c.
inline FluxMeasure induced_flux(const TensorField& C, const PotentialField& u) {
  detail::check_same_grid(*C.grid, *u.grid, "induced_flux");
  const CellStencil st(C.grid);
  FluxMeasure out{C.grid, std::vector<Vec2>(C.rho.size(), Vec2{})};
  for (std::size_t a = 0; a < st.size(); ++a) {
    const std::size_t c = st.cell(a);
    if (C.rho[c] == 0.0) continue;
    out.p[c] = C.rho[c] * dot(C.n[c], st.grad_at(u.u, a)) * C.n[c];
  }
  return out;
}

/// sum |p_tilde - p| / sum |p|; zero for zero flux.
inline double flux_consistency(const TensorField& C, const PotentialField& u_tilde, const FluxMeasure& p) {
  detail::check_same_grid(*C.grid, *p.grid, "flux_consistency");
  const FluxMeasure pt = induced_flux(C, u_tilde);
  double num = 0.0;
  for (std::size_t c = 0; c < p.p.size(); ++c) num += norm(pt.p[c] - p.p[c]);
  const double den = p.mass();
  return den > 0.0 ? num / den : 0.0;
}

/// mu-weighted mean of 1 - sigma . grad u; zero for zero flux.
inline double support_condition(const PotentialField& u, const FluxMeasure& p) {
  detail::check_same_grid(*u.grid, *p.grid, "support_condition");
  const CellStencil st(p.grid);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t a = 0; a < st.size(); ++a) {
    const std::size_t c = st.cell(a);
    const double m = norm(p.p[c]);
    if (m == 0.0) continue;
    num += m - dot(p.p[c], st.grad_at(u.u, a));
    den += m;
  }
  return den > 0.0 ? num / den : 0.0;
}

/// Largest |second eigenvalue| / rho over cells with material, computed from
/// the assembled 2x2 matrices.
inline double rank_one_violation(const TensorField& C) {
  double worst = 0.0;
  for (std::size_t c = 0; c < C.rho.size(); ++c) {
    const double r = C.rho[c];
    if (r == 0.0) continue;
    const double a = r * C.n[c].x * C.n[c].x;
    const double b = r * C.n[c].x * C.n[c].y;
    const double d = r * C.n[c].y * C.n[c].y;
    const double tr = a + d;
    const double disc = std::sqrt(std::max(0.0, 0.25 * (a - d) * (a - d) + b * b));
    const double small = 0.5 * tr - disc;
    worst = std::max(worst, std::abs(small) / r);
  }
  return worst;
}

struct ComplianceReport {
  double Y_formula = 0.0;
  double Y_energy = 0.0;
  double compliance_gap = 0.0;
  double flux_mismatch = 0.0;
};

inline ComplianceReport compliance_report(const TensorField& C, const PotentialField& u_tilde, const FluxMeasure& p,
                                          const RasterSource& q) {
  ComplianceReport r;
  r.Y_formula = C.value_Q1 * C.value_Q1 / C.lambda0;
  r.Y_energy = -2.0 * energy(C, u_tilde, q);
  r.compliance_gap = std::abs(r.Y_formula - r.Y_energy);
  r.flux_mismatch = flux_consistency(C, u_tilde, p);
  return r;
}

/// Design concentrated on the edges of a visibility-graph flow: a uniform
/// rank-one strip along each edge carrying flow.
struct SegmentTensor {
  Point a;
  Point b;
  double rho = 0.0;  // total trace on the segment
  Vec2 n;
};

inline std::vector<SegmentTensor> build_edge_tensor(const FlowNetwork& net, const FlowSolution& sol, double lambda0) {
  if (!(lambda0 > 0.0)) throw std::invalid_argument("build_edge_tensor: lambda0 must be positive");
  if (!(sol.objective > 0.0)) throw std::invalid_argument("build_edge_tensor: flow has zero cost");
  std::vector<SegmentTensor> out;
  for (std::size_t e = 0; e < net.edges.size(); ++e) {
    if (sol.flow[e] == 0) continue;
    const auto& ed = net.edges[e];
    const Point a = net.nodes[ed.a];
    const Point b = net.nodes[ed.b];
    const double f = sol.flow_value(e);
    const Vec2 dir = (b - a) / norm(b - a);
    out.push_back({a, b, lambda0 * std::abs(f) * ed.cost / sol.objective, f > 0 ? -dir : dir});
  }
  return out;
}

}  // namespace fmd
