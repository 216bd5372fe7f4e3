#pragma once

// Balanced source measures built from atoms, curve densities and area
// densities; exact masses, pairings with test potentials, rasterization.

#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "fmd/fields.hpp"
#include "fmd/geometry.hpp"
#include "fmd/quadrature.hpp"

namespace fmd {

struct Atom {
  Point at;
  double weight = 0.0;
};

/// Density c0 + c1 s + c2 s^2 in the arclength s measured from `a`.
struct SegmentDensity {
  Point a;
  Point b;
  std::array<double, 3> coeffs{};
};

/// Density c0 + c1 t + c2 t^2 per unit length in the polar angle t.
struct ArcDensity {
  Point center;
  double radius = 1.0;
  double theta0 = 0.0;
  double theta1 = 0.0;
  std::array<double, 3> coeffs{};

  double length() const { return radius * (theta1 - theta0); }
  /// Probability measure spread uniformly along the arc, scaled by `weight`.
  static ArcDensity uniform(Point center, double radius, double theta0, double theta1, double weight = 1.0) {
    return {center, radius, theta0, theta1, {weight / (radius * (theta1 - theta0)), 0.0, 0.0}};
  }
};

/// Density c x1^px x2^py per unit length along the whole boundary of the domain.
struct BoundaryDensity {
  double coeff = 0.0;
  int px = 0;
  int py = 0;
};

/// Constant density per unit area on a region.
struct AreaDensity {
  Domain2D region;
  double density = 0.0;
};

using SourceComponent = std::variant<Atom, SegmentDensity, ArcDensity, BoundaryDensity, AreaDensity>;

struct SourceMeasure {
  std::vector<SourceComponent> components;
  Domain2D domain;
};

namespace detail {

inline double poly3(const std::array<double, 3>& c, double t) { return c[0] + t * (c[1] + t * c[2]); }

inline double monomial(const BoundaryDensity& b, Point x) {
  return b.coeff * std::pow(x.x, b.px) * std::pow(x.y, b.py);
}

/// Parametrized curve piece t in [t0, t1] with point, speed and line density.
struct CurvePiece {
  double t0 = 0.0;
  double t1 = 1.0;
  std::function<Point(double)> point;
  double speed = 1.0;  // constant |dx/dt|
  std::function<double(double)> density;
  /// Closed loop traversed once (exact trapezoid rule applies to trig polynomials).
  bool periodic = false;

  double length() const { return speed * (t1 - t0); }
};

inline std::vector<CurvePiece> boundary_pieces(const Domain2D& dom, const BoundaryDensity& bd) {
  std::vector<CurvePiece> out;
  if (dom.is_disc()) {
    const Point c = dom.center();
    const double r = dom.radius();
    CurvePiece p;
    p.t0 = 0.0;
    p.t1 = 2.0 * std::numbers::pi;
    p.point = [c, r](double t) { return Point{c.x + r * std::cos(t), c.y + r * std::sin(t)}; };
    p.speed = r;
    p.density = [bd, pt = p.point](double t) { return monomial(bd, pt(t)); };
    p.periodic = true;
    out.push_back(std::move(p));
    return out;
  }
  auto add_loop = [&](const Polygon& poly) {
    for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
      const Point a = poly[i];
      const Point b = poly[(i + 1) % n];
      CurvePiece p;
      p.point = [a, b](double t) { return a + t * (b - a); };
      p.speed = distance(a, b);
      p.density = [bd, pt = p.point](double t) { return monomial(bd, pt(t)); };
      out.push_back(std::move(p));
    }
  };
  add_loop(dom.outer());
  for (const auto& h : dom.holes()) add_loop(h);
  return out;
}

/// Curve pieces of a component; empty for atoms and area densities.
inline std::vector<CurvePiece> curve_pieces(const SourceComponent& comp, const Domain2D& dom) {
  std::vector<CurvePiece> out;
  if (const auto* s = std::get_if<SegmentDensity>(&comp)) {
    CurvePiece p;
    const double len = distance(s->a, s->b);
    p.point = [a = s->a, b = s->b](double t) { return a + t * (b - a); };
    p.speed = len;
    p.density = [c = s->coeffs, len](double t) { return poly3(c, t * len); };
    out.push_back(std::move(p));
  } else if (const auto* a = std::get_if<ArcDensity>(&comp)) {
    CurvePiece p;
    p.t0 = a->theta0;
    p.t1 = a->theta1;
    p.point = [c = a->center, r = a->radius](double t) { return Point{c.x + r * std::cos(t), c.y + r * std::sin(t)}; };
    p.speed = a->radius;
    p.density = [c = a->coeffs](double t) { return poly3(c, t); };
    out.push_back(std::move(p));
  } else if (const auto* b = std::get_if<BoundaryDensity>(&comp)) {
    out = boundary_pieces(dom, *b);
  }
  return out;
}

// Panel count for analytic pairings: a multiple of 8 so that panel ends fall
// on the octant angles and segment midpoints, where the reference potentials kink.
inline constexpr int kAnalyticPanels = 64;

inline int panels_for(double length, double h) {
  const int n = static_cast<int>(std::ceil(length / h));
  return std::max(kAnalyticPanels, (n + 7) / 8 * 8);
}

}  // namespace detail

/// Exact mass of one component (closed-form or exact quadrature).
inline double component_mass(const SourceComponent& comp, const Domain2D& dom) {
  if (const auto* a = std::get_if<Atom>(&comp)) return a->weight;
  if (const auto* s = std::get_if<SegmentDensity>(&comp)) {
    const double L = distance(s->a, s->b);
    return s->coeffs[0] * L + s->coeffs[1] * L * L / 2.0 + s->coeffs[2] * L * L * L / 3.0;
  }
  if (const auto* a = std::get_if<ArcDensity>(&comp)) {
    auto prim = [&](double t) {
      return a->coeffs[0] * t + a->coeffs[1] * t * t / 2.0 + a->coeffs[2] * t * t * t / 3.0;
    };
    return a->radius * (prim(a->theta1) - prim(a->theta0));
  }
  if (const auto* b = std::get_if<BoundaryDensity>(&comp)) {
    double m = 0.0;
    for (const auto& piece : detail::boundary_pieces(dom, *b)) {
      if (piece.periodic) {
        // Trapezoid rule on a full period is exact for trigonometric polynomials of degree < 16.
        constexpr int n = 16;
        const double dt = (piece.t1 - piece.t0) / n;
        for (int k = 0; k < n; ++k) m += piece.density(piece.t0 + k * dt) * piece.speed * dt;
      } else {
        // Polynomial of degree <= 2 in t: a single Gauss panel is exact.
        m += piece.speed * quad::integrate(piece.t0, piece.t1, 1, piece.density);
      }
    }
    return m;
  }
  const auto& ar = std::get<AreaDensity>(comp);
  return ar.density * ar.region.area();
}

inline double total_mass(const SourceMeasure& Q) {
  double m = 0.0;
  for (const auto& c : Q.components) m += component_mass(c, Q.domain);
  return m;
}

/// Total variation |Q|(closure of the domain), by composite quadrature of |density|.
inline double total_variation(const SourceMeasure& Q) {
  double tv = 0.0;
  for (const auto& comp : Q.components) {
    if (const auto* a = std::get_if<Atom>(&comp)) {
      tv += std::abs(a->weight);
    } else if (const auto* ar = std::get_if<AreaDensity>(&comp)) {
      tv += std::abs(ar->density) * ar->region.area();
    } else {
      for (const auto& piece : detail::curve_pieces(comp, Q.domain)) {
        tv += piece.speed * quad::integrate(piece.t0, piece.t1, 256, [&](double t) { return std::abs(piece.density(t)); });
      }
    }
  }
  return tv;
}

/// Throws when the total mass exceeds rel_tol times the total variation.
inline void check_balance(const SourceMeasure& Q, double rel_tol = 1e-9) {
  const double m = total_mass(Q);
  const double tv = total_variation(Q);
  if (std::abs(m) > rel_tol * std::max(tv, 1e-300)) {
    throw std::invalid_argument("source measure is unbalanced: total mass residual " + std::to_string(m));
  }
}

namespace detail {

inline double integrate_area(const Domain2D& region, const std::function<double(Point)>& f, int panels) {
  if (region.is_disc()) {
    const Point c = region.center();
    const double R = region.radius();
    double s = 0.0;
    quad::for_each_node(0.0, R, panels, [&](double r, double wr) {
      quad::for_each_node(0.0, 2.0 * std::numbers::pi, 4 * panels, [&](double t, double wt) {
        s += wr * wt * r * f({c.x + r * std::cos(t), c.y + r * std::sin(t)});
      });
    });
    return s;
  }
  double s = 0.0;
  auto add = [&](const Polygon& poly, double sign) {
    for (const auto& tri : quad::triangulate(poly)) {
      quad::for_each_triangle_node(tri[0], tri[1], tri[2], panels, [&](Point p, double w) { s += sign * w * f(p); });
    }
  };
  add(region.outer(), 1.0);
  for (const auto& h : region.holes()) add(h, -1.0);
  return s;
}

}  // namespace detail

/// <Q, u> for a pointwise-defined potential.
inline double pair(const SourceMeasure& Q, const std::function<double(Point)>& u) {
  double s = 0.0;
  for (const auto& comp : Q.components) {
    if (const auto* a = std::get_if<Atom>(&comp)) {
      s += a->weight * u(a->at);
    } else if (const auto* ar = std::get_if<AreaDensity>(&comp)) {
      s += ar->density * detail::integrate_area(ar->region, u, 16);
    } else {
      for (const auto& piece : detail::curve_pieces(comp, Q.domain)) {
        s += piece.speed * quad::integrate(piece.t0, piece.t1, detail::kAnalyticPanels,
                                           [&](double t) { return piece.density(t) * u(piece.point(t)); });
      }
    }
  }
  return s;
}

/// <Q, u> for a grid potential evaluated by (boundary-aware) bilinear interpolation.
inline double pair(const SourceMeasure& Q, const PotentialField& u) {
  const double h = u.grid->h;
  const auto at = [&](Point x) { return evaluate(u, x); };
  double s = 0.0;
  for (const auto& comp : Q.components) {
    if (const auto* a = std::get_if<Atom>(&comp)) {
      s += a->weight * at(a->at);
    } else if (const auto* ar = std::get_if<AreaDensity>(&comp)) {
      s += ar->density * detail::integrate_area(ar->region, at, 32);
    } else {
      for (const auto& piece : detail::curve_pieces(comp, Q.domain)) {
        // At least eight quadrature points per grid spacing of arclength.
        const int panels = detail::panels_for(piece.length(), h);
        s += piece.speed *
             quad::integrate(piece.t0, piece.t1, panels, [&](double t) { return piece.density(t) * at(piece.point(t)); });
      }
    }
  }
  return s;
}

/// Deposits Q onto the supported grid nodes and removes the floating-point
/// mass residual in proportion to |q_i|.
inline RasterSource rasterize(const SourceMeasure& Q, GridPtr grid) {
  const Grid& g = *grid;
  RasterSource out{grid, std::vector<double>(g.num_nodes(), 0.0)};
  const double tol = std::max(g.h * kBoundaryTolerance, 1e-12);
  for (std::size_t ci = 0; ci < Q.components.size(); ++ci) {
    const auto& comp = Q.components[ci];
    auto fail = [&] {
      throw std::invalid_argument("rasterize: component " + std::to_string(ci) + " touches inactive grid nodes");
    };
    auto deposit = [&](Point x, double w) {
      if (!Q.domain.contains(x, std::max(tol, 1e-9 * g.h))) fail();
      const NodeStencil st = node_stencil(g, x);
      if (st.count == 0) fail();
      for (int k = 0; k < st.count; ++k) out.q[st.node[k]] += w * st.weight[k];
    };
    if (const auto* a = std::get_if<Atom>(&comp)) {
      deposit(a->at, a->weight);
    } else if (const auto* ar = std::get_if<AreaDensity>(&comp)) {
      // 4x4 midpoint sub-sampling of every cell overlapping the region.
      const Box& rb = ar->region.bounding_box();
      constexpr int sub = 4;
      const double w = ar->density * (g.h / sub) * (g.h / sub);
      for (std::size_t c = 0; c < g.num_cells(); ++c) {
        const Point lo = g.node_point(g.cell_i(c), g.cell_j(c));
        if (lo.x > rb.hi.x || lo.y > rb.hi.y || lo.x + g.h < rb.lo.x || lo.y + g.h < rb.lo.y) continue;
        for (int sj = 0; sj < sub; ++sj) {
          for (int si = 0; si < sub; ++si) {
            const Point x{lo.x + (si + 0.5) * g.h / sub, lo.y + (sj + 0.5) * g.h / sub};
            if (ar->region.contains(x)) deposit(x, w);
          }
        }
      }
    } else {
      for (const auto& piece : detail::curve_pieces(comp, Q.domain)) {
        const int panels = std::max(1, static_cast<int>(std::ceil(piece.length() / g.h)));
        quad::for_each_node(piece.t0, piece.t1, panels, [&](double t, double wt) {
          deposit(piece.point(t), wt * piece.speed * piece.density(t));
        });
      }
    }
  }
  const double residual = out.sum();
  const double tv = out.total_variation();
  if (tv > 0.0) {
    for (double& v : out.q) v -= residual * std::abs(v) / tv;
    // Final round-off lands on the largest entry.
    std::size_t big = 0;
    for (std::size_t k = 0; k < out.q.size(); ++k) {
      if (std::abs(out.q[k]) > std::abs(out.q[big])) big = k;
    }
    double rest = 0.0;
    for (std::size_t k = 0; k < out.q.size(); ++k) {
      if (k != big) rest += out.q[k];
    }
    out.q[big] = -rest;
  }
  return out;
}

}  // namespace fmd
