#pragma once

// Grid-sampled fields shared by the solvers and the design assembly.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "fmd/geometry.hpp"

namespace fmd {

using GridPtr = std::shared_ptr<const Grid>;

/// Discrete source: heat units per grid node, zero off the supported nodes.
struct RasterSource {
  GridPtr grid;
  std::vector<double> q;

  double sum() const {
    double s = 0.0;
    for (double v : q) s += v;
    return s;
  }
  double total_variation() const {
    double s = 0.0;
    for (double v : q) s += std::abs(v);
    return s;
  }
};

/// Node-sampled potential with one node pinned to zero.
struct PotentialField {
  GridPtr grid;
  std::vector<double> u;
  std::size_t anchor = 0;
};

/// Cell-sampled vector measure. Each entry is the measure of the cell, so the
/// total mass is the plain sum of the cell magnitudes.
struct FluxMeasure {
  GridPtr grid;
  std::vector<Vec2> p;

  double mass() const {
    double s = 0.0;
    for (Vec2 v : p) s += norm(v);
    return s;
  }
  double max_magnitude() const {
    double m = 0.0;
    for (Vec2 v : p) m = std::max(m, norm(v));
    return m;
  }
  /// Unit direction of the cell flux, undefined where the cell carries no flux.
  std::optional<Vec2> direction(std::size_t c) const {
    const double m = norm(p[c]);
    if (m == 0.0) return std::nullopt;
    return p[c] / m;
  }
};

/// Node weights used to deposit a point mass onto the grid and, symmetrically,
/// to evaluate node fields at a point. Bilinear weights are restricted to the
/// supported corners of the containing cell and renormalized; points whose
/// cell has no supported corner fall back to the nearest supported node within
/// two cells.
struct NodeStencil {
  std::array<std::size_t, 4> node{};
  std::array<double, 4> weight{};
  int count = 0;
};

inline NodeStencil node_stencil(const Grid& g, Point x) {
  NodeStencil st;
  double fx = (x.x - g.origin.x) / g.h;
  double fy = (x.y - g.origin.y) / g.h;
  int i = std::clamp(static_cast<int>(std::floor(fx)), 0, g.nx - 1);
  int j = std::clamp(static_cast<int>(std::floor(fy)), 0, g.ny - 1);
  fx -= i;
  fy -= j;
  constexpr double snap = 1e-12;
  if (std::abs(fx) < snap) fx = 0.0;
  if (std::abs(fx - 1.0) < snap) fx = 1.0;
  if (std::abs(fy) < snap) fy = 0.0;
  if (std::abs(fy - 1.0) < snap) fy = 1.0;
  const std::array<std::size_t, 4> corners{g.node(i, j), g.node(i + 1, j), g.node(i, j + 1), g.node(i + 1, j + 1)};
  const std::array<double, 4> w{(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  double total = 0.0;
  for (int k = 0; k < 4; ++k) {
    if (w[k] > 0.0 && g.node_supported[corners[k]]) total += w[k];
  }
  if (total > 0.0) {
    for (int k = 0; k < 4; ++k) {
      if (w[k] > 0.0 && g.node_supported[corners[k]]) {
        st.node[st.count] = corners[k];
        st.weight[st.count] = w[k] / total;
        ++st.count;
      }
    }
    return st;
  }
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_node = 0;
  for (int jj = std::max(0, j - 2); jj <= std::min(g.ny, j + 3); ++jj) {
    for (int ii = std::max(0, i - 2); ii <= std::min(g.nx, i + 3); ++ii) {
      const std::size_t k = g.node(ii, jj);
      if (!g.node_supported[k]) continue;
      const double d = distance(g.node_point(ii, jj), x);
      if (d < best) {
        best = d;
        best_node = k;
      }
    }
  }
  if (best <= 2.0 * std::sqrt(2.0) * g.h) {
    st.node[0] = best_node;
    st.weight[0] = 1.0;
    st.count = 1;
  }
  return st;
}

/// Bilinear evaluation of a node field at a point (see node_stencil).
inline double evaluate(const PotentialField& f, Point x) {
  const NodeStencil st = node_stencil(*f.grid, x);
  if (st.count == 0) throw std::invalid_argument("evaluate: point outside the supported grid region");
  double v = 0.0;
  for (int k = 0; k < st.count; ++k) v += st.weight[k] * f.u[st.node[k]];
  return v;
}

}  // namespace fmd
