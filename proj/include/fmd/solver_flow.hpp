#pragma once

// Exact graph backend: min sum_e cost_e |f_e| subject to flow conservation,
// solved by successive shortest paths with Dijkstra on reduced costs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <queue>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "fmd/fields.hpp"
#include "fmd/geometry.hpp"
#include "fmd/grid_ops.hpp"
#include "fmd/measures.hpp"

namespace fmd {

enum class NetworkMode { grid, visibility };

/// Supplies are carried as integers in units of 1 / kSupplyScale.
inline constexpr double kSupplyScale = 1e12;

struct NetworkOptions {
  NetworkMode mode = NetworkMode::grid;
  int resolution = 128;
  /// 8 (axis and diagonal moves) or 16 (adds the (2,1) knight moves).
  int neighborhood = 16;
};

struct FlowNetwork {
  struct Edge {
    std::uint32_t a = 0;
    std::uint32_t b = 0;
    double cost = 0.0;
  };

  NetworkMode mode = NetworkMode::grid;
  std::vector<Point> nodes;
  std::vector<Edge> edges;
  std::vector<std::int64_t> supply;
  /// Grid mode only: node k is grid node k, and `source` is the raster of Q.
  GridPtr grid;
  RasterSource source;

  double supply_value(std::size_t k) const { return static_cast<double>(supply[k]) / kSupplyScale; }
};

struct FlowSolution {
  /// Signed flow per edge in supply units; positive means a -> b.
  std::vector<std::int64_t> flow;
  /// LP duals: objective = sum_i b_i pi_i, |pi_a - pi_b| <= cost on every
  /// edge, pi_a - pi_b = cost where flow runs a -> b. Anchored at the first
  /// supply node.
  std::vector<double> potential;
  double objective = 0.0;
  int augmentations = 0;

  double flow_value(std::size_t e) const { return static_cast<double>(flow[e]) / kSupplyScale; }
};

namespace detail {

/// Rounds heat weights to supply integers and absorbs the rounding residue
/// at the node of largest magnitude so that the supplies sum to zero exactly.
inline std::vector<std::int64_t> scaled_supplies(const std::vector<double>& w) {
  std::vector<std::int64_t> b(w.size(), 0);
  std::int64_t total = 0;
  std::size_t big = 0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    const double s = w[k] * kSupplyScale;
    if (!(std::abs(s) < 9e18)) throw std::invalid_argument("build_network: supply too large for scaled integers");
    b[k] = std::llround(s);
    total += b[k];
    if (std::abs(b[k]) > std::abs(b[big])) big = k;
  }
  b[big] -= total;
  return b;
}

inline std::vector<std::pair<int, int>> lattice_moves(int neighborhood) {
  std::vector<std::pair<int, int>> m{{1, 0}, {0, 1}, {1, 1}, {1, -1}};
  if (neighborhood == 16) {
    m.insert(m.end(), {{2, 1}, {1, 2}, {2, -1}, {1, -2}});
  } else if (neighborhood != 8) {
    throw std::invalid_argument("build_network: neighborhood must be 8 or 16");
  }
  return m;
}

}  // namespace detail

inline FlowNetwork build_grid_network(const SourceMeasure& Q, int resolution, int neighborhood = 16) {
  check_balance(Q);
  FlowNetwork net;
  net.mode = NetworkMode::grid;
  net.grid = std::make_shared<const Grid>(build_grid(Q.domain, resolution));
  const Grid& g = *net.grid;
  net.source = rasterize(Q, net.grid);
  net.nodes.resize(g.num_nodes());
  for (std::size_t k = 0; k < g.num_nodes(); ++k) net.nodes[k] = g.node_point(k);
  const double tol = kBoundaryTolerance * g.h;
  for (int j = 0; j <= g.ny; ++j) {
    for (int i = 0; i <= g.nx; ++i) {
      const std::size_t a = g.node(i, j);
      if (!g.node_supported[a]) continue;
      for (const auto& [di, dj] : detail::lattice_moves(neighborhood)) {
        const int ii = i + di;
        const int jj = j + dj;
        if (ii < 0 || jj < 0 || ii > g.nx || jj > g.ny) continue;
        const std::size_t b = g.node(ii, jj);
        if (!g.node_supported[b]) continue;
        if (!Q.domain.segment_inside(net.nodes[a], net.nodes[b], tol)) continue;
        net.edges.push_back({static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), g.h * std::hypot(di, dj)});
      }
    }
  }
  net.supply = detail::scaled_supplies(net.source.q);
  return net;
}

inline FlowNetwork build_visibility_network(const SourceMeasure& Q) {
  check_balance(Q);
  const double tol = kBoundaryTolerance * Q.domain.bounding_box().longest_side();
  std::vector<Point> sites;
  std::vector<double> weight;
  for (const auto& comp : Q.components) {
    const Atom* atom = std::get_if<Atom>(&comp);
    if (atom == nullptr) throw std::invalid_argument("build_network: visibility mode needs a purely atomic source");
    if (!Q.domain.contains(atom->at, tol)) {
      throw std::invalid_argument("build_network: atom at (" + std::to_string(atom->at.x) + ", " +
                                  std::to_string(atom->at.y) + ") lies outside the domain");
    }
    const auto it = std::find(sites.begin(), sites.end(), atom->at);
    if (it == sites.end()) {
      sites.push_back(atom->at);
      weight.push_back(atom->weight);
    } else {
      weight[static_cast<std::size_t>(it - sites.begin())] += atom->weight;
    }
  }
  const VisibilityGraph vg = build_visibility_graph(Q.domain, sites);
  FlowNetwork net;
  net.mode = NetworkMode::visibility;
  net.nodes = vg.nodes;
  for (const auto& e : vg.edges) {
    net.edges.push_back({static_cast<std::uint32_t>(e.a), static_cast<std::uint32_t>(e.b), e.length});
  }
  weight.resize(net.nodes.size(), 0.0);
  net.supply = detail::scaled_supplies(weight);
  return net;
}

inline FlowNetwork build_network(const SourceMeasure& Q, const NetworkOptions& opt) {
  return opt.mode == NetworkMode::grid ? build_grid_network(Q, opt.resolution, opt.neighborhood)
                                       : build_visibility_network(Q);
}

/// Successive shortest paths: repeatedly route from a node with excess to
/// the nearest node with deficit, keeping reduced costs non-negative.
inline FlowSolution min_cost_flow(const FlowNetwork& net) {
  const std::size_t n = net.nodes.size();
  if (net.supply.size() != n) throw std::invalid_argument("min_cost_flow: supply size mismatch");
  std::int64_t total = 0;
  for (std::int64_t s : net.supply) total += s;
  if (total != 0) throw std::invalid_argument("min_cost_flow: unbalanced supplies, residual " + std::to_string(total));

  // Incidence lists: (edge, +1 when the node is endpoint a).
  std::vector<std::uint32_t> start(n + 1, 0);
  for (const auto& e : net.edges) {
    if (!(e.cost > 0.0)) throw std::invalid_argument("min_cost_flow: edge costs must be positive");
    ++start[e.a + 1];
    ++start[e.b + 1];
  }
  for (std::size_t v = 0; v < n; ++v) start[v + 1] += start[v];
  std::vector<std::pair<std::uint32_t, int>> inc(start[n]);
  {
    std::vector<std::uint32_t> fill(start.begin(), start.end() - 1);
    for (std::size_t e = 0; e < net.edges.size(); ++e) {
      inc[fill[net.edges[e].a]++] = {static_cast<std::uint32_t>(e), 1};
      inc[fill[net.edges[e].b]++] = {static_cast<std::uint32_t>(e), -1};
    }
  }

  // Connectivity of the supply support.
  {
    std::vector<int> comp(n, -1);
    int nc = 0;
    for (std::size_t s = 0; s < n; ++s) {
      if (comp[s] >= 0) continue;
      std::vector<std::size_t> stack{s};
      comp[s] = nc;
      while (!stack.empty()) {
        const std::size_t v = stack.back();
        stack.pop_back();
        for (std::uint32_t k = start[v]; k < start[v + 1]; ++k) {
          const auto& e = net.edges[inc[k].first];
          const std::size_t w = inc[k].second > 0 ? e.b : e.a;
          if (comp[w] < 0) {
            comp[w] = nc;
            stack.push_back(w);
          }
        }
      }
      ++nc;
    }
    std::vector<std::int64_t> balance(nc, 0);
    for (std::size_t v = 0; v < n; ++v) balance[comp[v]] += net.supply[v];
    for (int c = 0; c < nc; ++c) {
      if (balance[c] != 0) {
        throw std::invalid_argument("min_cost_flow: supply support is disconnected; component " + std::to_string(c) +
                                    " carries net supply " + std::to_string(static_cast<double>(balance[c]) / kSupplyScale));
      }
    }
  }

  FlowSolution sol;
  sol.flow.assign(net.edges.size(), 0);
  std::vector<double> pot(n, 0.0);  // shortest-path potentials; duals are -pot
  std::vector<std::int64_t> excess = net.supply;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(n, inf);
  std::vector<std::int64_t> parent(n, -1);  // incidence slot used to reach the node
  std::vector<char> done(n, 0);
  std::vector<std::uint32_t> touched;
  std::vector<std::uint32_t> sources;
  for (std::size_t v = 0; v < n; ++v) {
    if (excess[v] > 0) sources.push_back(static_cast<std::uint32_t>(v));
  }
  using Item = std::pair<double, std::uint32_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;

  // All excess nodes start at distance 0 (a virtual super source), so each
  // search stops at the deficit nearest to any of them.
  for (;;) {
    sources.erase(std::remove_if(sources.begin(), sources.end(), [&](std::uint32_t v) { return excess[v] <= 0; }),
                  sources.end());
    if (sources.empty()) break;

    for (std::uint32_t v : touched) {
      dist[v] = inf;
      parent[v] = -1;
      done[v] = 0;
    }
    touched.clear();
    pq = {};
    for (std::uint32_t s : sources) {
      dist[s] = 0.0;
      touched.push_back(s);
      pq.push({0.0, s});
    }
    std::int64_t t = -1;
    while (!pq.empty()) {
      const auto [d, v] = pq.top();
      pq.pop();
      if (done[v] || d > dist[v]) continue;
      done[v] = 1;
      if (excess[v] < 0) {
        t = v;
        break;
      }
      for (std::uint32_t k = start[v]; k < start[v + 1]; ++k) {
        const auto [ei, dir] = inc[k];
        const auto& e = net.edges[ei];
        const std::uint32_t w = dir > 0 ? e.b : e.a;
        if (done[w]) continue;
        // Moving along dir against existing flow cancels it at cost -c.
        const std::int64_t f = sol.flow[ei] * dir;
        const double c = f < 0 ? -e.cost : e.cost;
        const double nd = d + std::max(0.0, c + pot[v] - pot[w]);
        if (nd < dist[w]) {
          if (dist[w] == inf) touched.push_back(w);
          dist[w] = nd;
          parent[w] = k;
          pq.push({nd, w});
        }
      }
    }
    if (t < 0) throw std::logic_error("min_cost_flow: no deficit reachable from an excess node");
    const double dt = dist[t];
    for (std::uint32_t v : touched) pot[v] += std::min(dist[v], dt) - dt;

    std::int64_t delta = -excess[t];
    std::uint32_t s = static_cast<std::uint32_t>(t);
    while (parent[s] >= 0) {
      const auto [ei, dir] = inc[parent[s]];
      const std::int64_t f = sol.flow[ei] * dir;
      if (f < 0) delta = std::min(delta, -f);
      const auto& e = net.edges[ei];
      s = dir > 0 ? e.a : e.b;
    }
    delta = std::min(delta, excess[s]);
    for (std::uint32_t v = static_cast<std::uint32_t>(t); v != s;) {
      const auto [ei, dir] = inc[parent[v]];
      sol.flow[ei] += delta * dir;
      const auto& e = net.edges[ei];
      v = dir > 0 ? e.a : e.b;
    }
    excess[s] -= delta;
    excess[t] += delta;
    ++sol.augmentations;
  }

  double obj = 0.0;
  for (std::size_t e = 0; e < net.edges.size(); ++e) {
    obj += net.edges[e].cost * std::abs(static_cast<double>(sol.flow[e]));
  }
  sol.objective = obj / kSupplyScale;
  std::size_t anchor = 0;
  while (anchor < n && net.supply[anchor] == 0) ++anchor;
  const double ref = anchor < n ? pot[anchor] : 0.0;
  sol.potential.resize(n);
  for (std::size_t v = 0; v < n; ++v) sol.potential[v] = ref - pot[v];
  return sol;
}

/// Largest violation of |pi_a - pi_b| <= cost over all edges and of
/// pi_a - pi_b = cost over flow-carrying edges.
struct SlacknessReport {
  double lipschitz_violation = 0.0;
  double equality_violation = 0.0;
};

inline SlacknessReport complementary_slackness(const FlowNetwork& net, const FlowSolution& sol) {
  SlacknessReport r;
  for (std::size_t e = 0; e < net.edges.size(); ++e) {
    const auto& ed = net.edges[e];
    const double d = sol.potential[ed.a] - sol.potential[ed.b];
    r.lipschitz_violation = std::max(r.lipschitz_violation, std::abs(d) - ed.cost);
    if (sol.flow[e] > 0) r.equality_violation = std::max(r.equality_violation, std::abs(d - ed.cost));
    if (sol.flow[e] < 0) r.equality_violation = std::max(r.equality_violation, std::abs(d + ed.cost));
  }
  return r;
}

/// Cell measures of the graph flow, before any divergence correction: each
/// edge deposits -f (b - a) into the cells it traverses, split by in-cell
/// length; a piece running along a grid line is shared by the active cells
/// on both sides. The sign turns the flow (high potential to low) into the
/// flux p with div p + Q = 0.
inline FluxMeasure deposit_flow(const FlowSolution& sol, const FlowNetwork& net) {
  if (net.mode != NetworkMode::grid || !net.grid) throw std::invalid_argument("flow_to_flux: needs a grid-mode network");
  const Grid& g = *net.grid;
  FluxMeasure p{net.grid, std::vector<Vec2>(g.num_cells(), Vec2{})};
  auto cell_ok = [&](int i, int j) { return i >= 0 && j >= 0 && i < g.nx && j < g.ny; };
  for (std::size_t e = 0; e < net.edges.size(); ++e) {
    if (sol.flow[e] == 0) continue;
    const auto& ed = net.edges[e];
    const Point a = net.nodes[ed.a];
    const Point b = net.nodes[ed.b];
    const Vec2 v = -sol.flow_value(e) * (b - a);
    const int ia = g.node_i(ed.a), ja = g.node_j(ed.a);
    const int ib = g.node_i(ed.b), jb = g.node_j(ed.b);
    const int di = ib - ia, dj = jb - ja;
    // Breakpoints in the lattice parameter t where the segment meets grid lines.
    std::vector<double> cuts{0.0, 1.0};
    for (int k = 1; k < std::abs(di); ++k) cuts.push_back(static_cast<double>(k) / std::abs(di));
    for (int k = 1; k < std::abs(dj); ++k) cuts.push_back(static_cast<double>(k) / std::abs(dj));
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
      const double t0 = cuts[k];
      const double t1 = cuts[k + 1];
      const double tm = 0.5 * (t0 + t1);
      const double fx = ia + tm * di;
      const double fy = ja + tm * dj;
      const Vec2 piece = v * (t1 - t0);
      std::vector<std::size_t> cells;
      if (di == 0 || dj == 0) {
        // Along a grid line: the two cells sharing it.
        if (dj == 0) {
          const int i = static_cast<int>(std::floor(fx));
          for (int j : {ja - 1, ja}) {
            if (cell_ok(i, j) && g.cell_active[g.cell(i, j)]) cells.push_back(g.cell(i, j));
          }
        } else {
          const int j = static_cast<int>(std::floor(fy));
          for (int i : {ia - 1, ia}) {
            if (cell_ok(i, j) && g.cell_active[g.cell(i, j)]) cells.push_back(g.cell(i, j));
          }
        }
        if (cells.empty()) {
          // Both neighbours inactive: keep the mass in the cell on the left of the edge.
          const int i = dj == 0 ? static_cast<int>(std::floor(fx)) : ia - (dj > 0 ? 1 : 0);
          const int j = dj == 0 ? ja - (di > 0 ? 0 : 1) : static_cast<int>(std::floor(fy));
          if (cell_ok(i, j)) cells.push_back(g.cell(i, j));
        }
      } else {
        const int i = static_cast<int>(std::floor(fx));
        const int j = static_cast<int>(std::floor(fy));
        if (cell_ok(i, j)) cells.push_back(g.cell(i, j));
      }
      if (cells.empty()) continue;
      for (std::size_t c : cells) p.p[c] += piece / static_cast<double>(cells.size());
    }
  }
  return p;
}

struct GridFlowResult {
  FluxMeasure p;
  /// Source the corrected flux balances exactly (the scheme-compatible raster).
  RasterSource q;
  double residual_div = 0.0;  // |div p + q|_1 / |q|_1 after correction
  double deposited_mass = 0.0;
};

namespace detail {

/// Network on the cell diagonals of the active cells, which is exactly what
/// the cell stencil can carry; supplies are w rounded and balanced per
/// diagonal-sublattice component.
inline FlowNetwork diagonal_network(const CellStencil& st, const std::vector<double>& w) {
  const Grid& g = st.grid();
  FlowNetwork net;
  net.mode = NetworkMode::grid;
  net.grid = st.grid_ptr();
  net.nodes.resize(g.num_nodes());
  for (std::size_t k = 0; k < g.num_nodes(); ++k) net.nodes[k] = g.node_point(k);
  const double len = g.h * std::sqrt(2.0);
  for (std::size_t a = 0; a < st.size(); ++a) {
    const auto k = st.corners(a);
    net.edges.push_back({static_cast<std::uint32_t>(k[0]), static_cast<std::uint32_t>(k[3]), len});
    net.edges.push_back({static_cast<std::uint32_t>(k[1]), static_cast<std::uint32_t>(k[2]), len});
  }
  std::vector<int> label;
  const int ncomp = st.sublattice_components(label);
  std::vector<std::int64_t> total(ncomp, 0);
  std::vector<std::size_t> big(ncomp, SIZE_MAX);
  net.supply.assign(w.size(), 0);
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (label[k] < 0) continue;
    const int c = label[k];
    net.supply[k] = std::llround(w[k] * kSupplyScale);
    total[c] += net.supply[k];
    if (big[c] == SIZE_MAX || std::abs(net.supply[k]) > std::abs(net.supply[big[c]])) big[c] = k;
  }
  for (int c = 0; c < ncomp; ++c) {
    if (big[c] != SIZE_MAX) net.supply[big[c]] -= total[c];
  }
  return net;
}

}  // namespace detail

/// Deposited flux made divergence-exact against the scheme-compatible raster
/// of Q. Pieces in inactive cells are dropped; the resulting node residual is
/// rerouted along cell diagonals at least l1 cost, which keeps the repair
/// local, and the rounding remainder is removed by the minimal-norm correction.
inline GridFlowResult flow_to_flux(const FlowSolution& sol, const FlowNetwork& net) {
  GridFlowResult r{deposit_flow(sol, net), make_compatible(net.source).source, 0.0, 0.0};
  r.deposited_mass = r.p.mass();
  const Grid& g = *net.grid;
  for (std::size_t c = 0; c < g.num_cells(); ++c) {
    if (!g.cell_active[c]) r.p.p[c] = Vec2{};
  }
  const CellStencil st(net.grid);
  std::vector<double> res(g.num_nodes(), 0.0);
  auto residual = [&] {
    st.div(r.p.p, res);
    for (std::size_t k = 0; k < res.size(); ++k) res[k] += r.q.q[k];
  };
  residual();
  const double tv = r.q.total_variation();
  if (tv > 0.0) {
    const FlowNetwork route = detail::diagonal_network(st, res);
    if (std::any_of(route.supply.begin(), route.supply.end(), [](std::int64_t v) { return v != 0; })) {
      const FluxMeasure dp = deposit_flow(min_cost_flow(route), route);
      for (std::size_t c = 0; c < dp.p.size(); ++c) r.p.p[c] += dp.p[c];
    }
    residual();
    GradNormalFactor factor(st);
    std::vector<Vec2> dp;
    factor.correct(res, dp);
    for (std::size_t c = 0; c < dp.size(); ++c) r.p.p[c] += dp[c];
  }
  residual();
  double l1 = 0.0;
  for (double v : res) l1 += std::abs(v);
  r.residual_div = tv > 0.0 ? l1 / tv : l1;
  return r;
}

/// Node potential of a grid-mode solution as a field (unsupported nodes get 0).
inline PotentialField flow_potential(const FlowSolution& sol, const FlowNetwork& net) {
  if (net.mode != NetworkMode::grid || !net.grid) throw std::invalid_argument("flow_potential: needs a grid-mode network");
  const Grid& g = *net.grid;
  std::size_t anchor = 0;
  while (anchor < net.supply.size() && net.supply[anchor] == 0) ++anchor;
  if (anchor == net.supply.size()) anchor = 0;
  PotentialField u{net.grid, std::vector<double>(g.num_nodes(), 0.0), anchor};
  for (std::size_t k = 0; k < g.num_nodes(); ++k) {
    if (g.node_supported[k]) u.u[k] = sol.potential[k];
  }
  return u;
}

/// Edge list as CSV with header node_i,node_j,flow (heat units, signed a -> b).
inline void write_edge_csv(const std::string& path, const FlowNetwork& net, const FlowSolution& sol) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_edge_csv: cannot open " + path);
  out.precision(17);
  out << "node_i,node_j,flow\n";
  for (std::size_t e = 0; e < net.edges.size(); ++e) {
    if (sol.flow[e] == 0) continue;
    out << net.edges[e].a << ',' << net.edges[e].b << ',' << sol.flow_value(e) << '\n';
  }
  if (!out) throw std::runtime_error("write_edge_csv: write failed for " + path);
}

}  // namespace fmd
