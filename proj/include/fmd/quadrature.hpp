#pragma once

// Composite Gauss-Legendre rules on intervals, triangles and polygons.

#include <algorithm>
#include <array>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

#include "fmd/geometry.hpp"

namespace fmd::quad {

/// Full N-point Gauss-Legendre rule on [-1, 1].
template <unsigned N>
struct GaussRule {
  std::array<double, N> x{};
  std::array<double, N> w{};

  GaussRule() {
    using G = boost::math::quadrature::gauss<double, N>;
    const auto& a = G::abscissa();
    const auto& wt = G::weights();
    std::size_t k = 0;
    // Boost stores the non-negative half of the symmetric rule.
    for (std::size_t i = a.size(); i-- > 0;) {
      if (a[i] == 0.0) continue;
      x[k] = -a[i];
      w[k] = wt[i];
      ++k;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
      x[k] = a[i];
      w[k] = wt[i];
      ++k;
    }
  }
};

inline const GaussRule<8>& gauss8() {
  static const GaussRule<8> rule;
  return rule;
}

/// Calls fn(t, weight) for a composite 8-point rule over [a, b] with `panels` panels.
template <class Fn>
void for_each_node(double a, double b, int panels, Fn&& fn) {
  const auto& r = gauss8();
  const double hp = (b - a) / panels;
  for (int p = 0; p < panels; ++p) {
    const double mid = a + (p + 0.5) * hp;
    for (std::size_t k = 0; k < 8; ++k) fn(mid + 0.5 * hp * r.x[k], 0.5 * hp * r.w[k]);
  }
}

template <class Fn>
double integrate(double a, double b, int panels, Fn&& f) {
  double s = 0.0;
  for_each_node(a, b, panels, [&](double t, double w) { s += w * f(t); });
  return s;
}

/// Calls fn(point, weight) over triangle (a, b, c) using a collapsed (Duffy)
/// tensor rule with `panels` panels per direction.
template <class Fn>
void for_each_triangle_node(Point a, Point b, Point c, int panels, Fn&& fn) {
  const double area2 = std::abs(cross(b - a, c - a));
  for_each_node(0.0, 1.0, panels, [&](double s, double ws) {
    for_each_node(0.0, 1.0, panels, [&](double t, double wt) {
      // (s, t) in the unit square -> barycentric (s (1 - t), s t).
      const Point p = a + (s * (1.0 - t)) * (b - a) + (s * t) * (c - a);
      fn(p, ws * wt * s * area2);
    });
  });
}

/// Ear-clipping triangulation of a simple polygon (any orientation).
inline std::vector<std::array<Point, 3>> triangulate(const Polygon& poly) {
  std::vector<std::array<Point, 3>> tris;
  std::vector<Point> pts = poly;
  if (signed_area(pts) < 0.0) std::reverse(pts.begin(), pts.end());
  auto inside_tri = [](Point p, Point a, Point b, Point c) {
    const double d1 = cross(b - a, p - a);
    const double d2 = cross(c - b, p - b);
    const double d3 = cross(a - c, p - c);
    return d1 >= 0.0 && d2 >= 0.0 && d3 >= 0.0;
  };
  while (pts.size() > 3) {
    const std::size_t n = pts.size();
    bool clipped = false;
    for (std::size_t i = 0; i < n; ++i) {
      const Point a = pts[(i + n - 1) % n];
      const Point b = pts[i];
      const Point c = pts[(i + 1) % n];
      if (cross(b - a, c - b) <= 0.0) continue;
      bool ear = true;
      for (std::size_t j = 0; j < n && ear; ++j) {
        if (j == i || j == (i + 1) % n || j == (i + n - 1) % n) continue;
        if (pts[j] == a || pts[j] == b || pts[j] == c) continue;
        if (inside_tri(pts[j], a, b, c)) ear = false;
      }
      if (!ear) continue;
      tris.push_back({a, b, c});
      pts.erase(pts.begin() + static_cast<std::ptrdiff_t>(i));
      clipped = true;
      break;
    }
    if (!clipped) throw std::runtime_error("triangulate: polygon is not simple");
  }
  tris.push_back({pts[0], pts[1], pts[2]});
  return tris;
}

}  // namespace fmd::quad
