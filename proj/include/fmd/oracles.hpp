#pragma once

// Closed-form benchmark problems with their optimal potential, flux and
// design, evaluated pointwise so every resolution shares one ground truth.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmd/geometry.hpp"
#include "fmd/measures.hpp"
#include "fmd/quadrature.hpp"

namespace fmd {

enum class MuKind { area, curve };

/// One quadrature node of the optimal flux measure p = sigma mu.
struct MuNode {
  Point x;
  double weight = 0.0;  // mu mass carried by the node
  Vec2 sigma;
};

struct TensorSample {
  double rho = 0.0;  // trace density, per unit area (area kind) or length (curve kind)
  Vec2 n;
};

struct AnalyticSolution {
  std::string name;
  SourceMeasure Q;
  double value_Q1 = 0.0;
  std::function<double(Point)> u_hat;
  /// Unit direction of the flux; empty off the support of mu.
  std::function<std::optional<Vec2>(Point)> sigma;
  MuKind mu_kind = MuKind::area;
  /// Density of mu with respect to area or arclength; zero off the support.
  std::function<double(Point)> mu_density;
  /// Visits quadrature nodes covering mu.
  std::function<void(const std::function<void(const MuNode&)>&)> mu_quadrature;
  std::function<double(Point)> support_distance;
  std::function<Point(std::mt19937_64&)> sample_support;
  /// A different optimal flux for the same problem, when one is known.
  std::shared_ptr<const AnalyticSolution> alternate;
  /// Brothers only: minimal BV function v with p = -rot(grad v) and its boundary trace f.
  std::function<double(Point)> bv_witness;
  std::function<double(Point)> boundary_trace;

  const Domain2D& domain() const { return Q.domain; }

  double mu_mass() const {
    double s = 0.0;
    mu_quadrature([&](const MuNode& m) { s += m.weight; });
    return s;
  }

  /// Optimal design C = rho n (x) n at x for budget lambda0.
  std::optional<TensorSample> C_hat(Point x, double lambda0) const {
    const auto s = sigma(x);
    const double d = mu_density(x);
    if (!s || d <= 0.0) return std::nullopt;
    return TensorSample{lambda0 / value_Q1 * d, *s};
  }
};

namespace detail {

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline void segment_nodes(Point a, Point b, double density, Vec2 sigma, int panels,
                          const std::function<void(const MuNode&)>& fn) {
  const double len = distance(a, b);
  quad::for_each_node(0.0, 1.0, panels, [&](double t, double w) { fn({a + t * (b - a), w * len * density, sigma}); });
}

inline void triangle_nodes(Point a, Point b, Point c, const std::function<double(Point)>& density,
                           const std::function<Vec2(Point)>& sigma, int panels,
                           const std::function<void(const MuNode&)>& fn) {
  quad::for_each_triangle_node(a, b, c, panels, [&](Point x, double w) { fn({x, w * density(x), sigma(x)}); });
}

/// Distance from x to a closed convex polygon (zero inside).
inline double convex_polygon_distance(const Polygon& poly, Point x) {
  bool inside = true;
  double best = std::numeric_limits<double>::infinity();
  const double orient = signed_area(poly) > 0.0 ? 1.0 : -1.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point a = poly[i];
    const Point b = poly[(i + 1) % poly.size()];
    if (orient * cross(b - a, x - a) < 0.0) inside = false;
    best = std::min(best, point_segment_distance(x, a, b));
  }
  return inside ? 0.0 : best;
}

inline Point uniform_in_triangle(Point a, Point b, Point c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  double s = U(rng);
  double t = U(rng);
  if (s + t > 1.0) {
    s = 1.0 - s;
    t = 1.0 - t;
  }
  return a + s * (b - a) + t * (c - a);
}

}  // namespace detail

/// Two atoms around a reentrant corner; the optimal flux bends at the origin.
inline AnalyticSolution example_nonconvex() {
  const Point A{-0.5, 0.5};
  const Point B{-0.5, -0.5};
  const Point O{0.0, 0.0};
  const double r2 = std::sqrt(2.0) / 2.0;
  AnalyticSolution s;
  s.name = "nonconvex";
  s.Q.domain = Domain2D::polygon({{-1, -1}, {1, -1}, {1, 1}, {-1, 1}, {-1, 0.5}, {0, 0}, {-1, -0.5}});
  s.Q.components = {Atom{A, 1.0}, Atom{B, -1.0}};
  s.value_Q1 = std::sqrt(2.0);
  s.u_hat = [r2](Point x) {
    if (x.y > 0.0 && x.y > x.x) return r2 * (x.y - x.x);
    if (x.y < 0.0 && x.y < -x.x) return r2 * (x.y + x.x);
    return 0.0;
  };
  // Flux runs from B through the corner to A.
  const Vec2 f1{-r2, r2};
  const Vec2 f2{r2, r2};
  s.mu_kind = MuKind::curve;
  const auto on = [](Point x, Point a, Point b) { return point_segment_distance(x, a, b) <= 1e-9; };
  s.sigma = [=](Point x) -> std::optional<Vec2> {
    if (on(x, O, A)) return f1;
    if (on(x, B, O)) return f2;
    return std::nullopt;
  };
  s.mu_density = [=](Point x) { return on(x, O, A) || on(x, B, O) ? 1.0 : 0.0; };
  s.mu_quadrature = [=](const std::function<void(const MuNode&)>& fn) {
    detail::segment_nodes(O, A, 1.0, f1, 16, fn);
    detail::segment_nodes(B, O, 1.0, f2, 16, fn);
  };
  s.support_distance = [=](Point x) { return std::min(point_segment_distance(x, O, A), point_segment_distance(x, B, O)); };
  s.sample_support = [=](std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const double t = U(rng);
    return U(rng) < 0.5 ? O + t * (A - O) : B + t * (O - B);
  };
  return s;
}

/// Unit disc with boundary source -4 x1 x2; the flux fills four circular caps.
inline AnalyticSolution example_brothers() {
  const double c = std::sqrt(2.0) / 2.0;
  AnalyticSolution s;
  s.name = "brothers";
  s.Q.domain = Domain2D::disc({0.0, 0.0}, 1.0);
  s.Q.components = {BoundaryDensity{-4.0, 1, 1}};
  s.value_Q1 = 8.0 * std::sqrt(2.0) / 3.0;
  s.u_hat = [](Point x) {
    if (x.x >= std::abs(x.y)) return -x.y;
    if (x.y >= std::abs(x.x)) return -x.x;
    if (-x.x > std::abs(x.y)) return x.y;
    return x.x;
  };
  const auto in_disc = [](Point x) { return x.x * x.x + x.y * x.y <= 1.0 + 1e-12; };
  s.sigma = [=](Point x) -> std::optional<Vec2> {
    if (!in_disc(x)) return std::nullopt;
    if (std::abs(x.x) >= c) return Vec2{0.0, -detail::sgn(x.x)};
    if (std::abs(x.y) >= c) return Vec2{-detail::sgn(x.y), 0.0};
    return std::nullopt;
  };
  s.mu_density = [=](Point x) {
    if (!in_disc(x)) return 0.0;
    if (std::abs(x.x) >= c) return 4.0 * std::abs(x.x);
    if (std::abs(x.y) >= c) return 4.0 * std::abs(x.y);
    return 0.0;
  };
  s.mu_quadrature = [sig = s.sigma, rho = s.mu_density](const std::function<void(const MuNode&)>& fn) {
    // Right cap as x = (cos t, s sin t), t in [0, pi/4], s in [-1, 1], with
    // Jacobian sin^2 t; the other caps by quarter turns.
    quad::for_each_node(0.0, std::numbers::pi / 4.0, 8, [&](double t, double wt) {
      quad::for_each_node(-1.0, 1.0, 8, [&](double u, double wu) {
        const Point p{std::cos(t), u * std::sin(t)};
        const double w = wt * wu * std::sin(t) * std::sin(t);
        for (const Point x : {p, Point{-p.y, p.x}, Point{-p.x, -p.y}, Point{p.y, -p.x}}) {
          fn({x, w * rho(x), *sig(x)});
        }
      });
    });
  };
  s.support_distance = [=](Point x) { return std::max(0.0, c - std::max(std::abs(x.x), std::abs(x.y))); };
  s.sample_support = [=](std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (;;) {
      const Point x{U(rng), U(rng)};
      if (x.x * x.x + x.y * x.y < 1.0 && std::max(std::abs(x.x), std::abs(x.y)) > c) return x;
    }
  };
  s.bv_witness = [=](Point x) {
    if (std::abs(x.x) >= c) return 1.0 - 2.0 * x.x * x.x;
    if (std::abs(x.y) >= c) return 2.0 * x.y * x.y - 1.0;
    return 0.0;
  };
  s.boundary_trace = [](Point x) { return x.y * x.y - x.x * x.x; };
  return s;
}

namespace detail {

/// Square (-1,1)^2 with sources on the diagonals; `vertical` selects the flux
/// supported on {|x2| <= |x1|} (otherwise on {|x2| >= |x1|}).
inline AnalyticSolution diagonals_solution(bool vertical) {
  const double k = std::sqrt(2.0);
  AnalyticSolution s;
  s.name = vertical ? "diagonals" : "diagonals-alternate";
  s.Q.domain = Domain2D::rectangle({-1.0, -1.0}, {1.0, 1.0});
  s.Q.components = {SegmentDensity{{-1.0, -1.0}, {1.0, 1.0}, {1.0, 0.0, 0.0}},
                    SegmentDensity{{-1.0, 1.0}, {1.0, -1.0}, {-1.0, 0.0, 0.0}}};
  s.value_Q1 = 2.0 * std::sqrt(2.0);
  s.u_hat = [](Point x) { return 0.5 * (std::abs(x.x + x.y) - std::abs(x.x - x.y)); };
  const auto in_square = [](Point x) { return std::abs(x.x) <= 1.0 + 1e-12 && std::abs(x.y) <= 1.0 + 1e-12; };
  const auto in_support = [=](Point x) {
    return in_square(x) && (vertical ? std::abs(x.y) <= std::abs(x.x) : std::abs(x.y) >= std::abs(x.x));
  };
  const auto dir = [=](Point x) { return vertical ? Vec2{0.0, sgn(x.x)} : Vec2{sgn(x.y), 0.0}; };
  s.sigma = [=](Point x) -> std::optional<Vec2> {
    if (!in_support(x) || (vertical ? x.x == 0.0 : x.y == 0.0)) return std::nullopt;
    return dir(x);
  };
  s.mu_density = [=](Point x) { return in_support(x) ? k : 0.0; };
  const std::vector<std::array<Point, 3>> tris =
      vertical ? std::vector<std::array<Point, 3>>{{Point{0, 0}, Point{1, -1}, Point{1, 1}},
                                                   {Point{0, 0}, Point{-1, 1}, Point{-1, -1}}}
               : std::vector<std::array<Point, 3>>{{Point{0, 0}, Point{1, 1}, Point{-1, 1}},
                                                   {Point{0, 0}, Point{-1, -1}, Point{1, -1}}};
  s.mu_quadrature = [=](const std::function<void(const MuNode&)>& fn) {
    for (const auto& t : tris) triangle_nodes(t[0], t[1], t[2], [k](Point) { return k; }, dir, 12, fn);
  };
  s.support_distance = [=](Point x) {
    return std::min(convex_polygon_distance({tris[0][0], tris[0][1], tris[0][2]}, x),
                    convex_polygon_distance({tris[1][0], tris[1][1], tris[1][2]}, x));
  };
  s.sample_support = [=](std::mt19937_64& rng) {
    const auto& t = tris[std::uniform_int_distribution<int>(0, 1)(rng)];
    return uniform_in_triangle(t[0], t[1], t[2], rng);
  };
  return s;
}

}  // namespace detail

/// Sources on the two diagonals of the square. The optimal flux is not
/// unique; `alternate` holds the rotated support.
inline AnalyticSolution example_diagonals() {
  AnalyticSolution s = detail::diagonals_solution(true);
  s.alternate = std::make_shared<const AnalyticSolution>(detail::diagonals_solution(false));
  return s;
}

/// Uniform source on the arc of radius R between angles theta0 < theta1,
/// balanced by a sink at the origin; the flux is radial on the sector.
inline AnalyticSolution example_arc(double R = 0.8, double theta0 = std::numbers::pi / 6.0,
                                    double theta1 = std::numbers::pi / 2.0) {
  if (!(R > 0.0)) throw std::invalid_argument("example_arc: radius must be positive");
  if (!(0.0 < theta0 && theta0 < theta1 && theta1 < 2.0 * std::numbers::pi)) {
    throw std::invalid_argument("example_arc: angles must satisfy 0 < theta0 < theta1 < 2 pi");
  }
  const double dth = theta1 - theta0;
  AnalyticSolution s;
  s.name = "arc";
  const double m = 1.25 * R;
  s.Q.domain = Domain2D::rectangle({-m, -m}, {m, m});
  s.Q.components = {ArcDensity::uniform({0.0, 0.0}, R, theta0, theta1, 1.0), Atom{{0.0, 0.0}, -1.0}};
  s.value_Q1 = R;
  s.u_hat = [](Point x) { return norm(x); };
  const auto in_sector = [=](Point x) {
    const double r = norm(x);
    if (r == 0.0) return true;
    if (r > R * (1.0 + 1e-12)) return false;
    double t = std::atan2(x.y, x.x);
    if (t < 0.0) t += 2.0 * std::numbers::pi;
    return t >= theta0 - 1e-12 && t <= theta1 + 1e-12;
  };
  s.sigma = [=](Point x) -> std::optional<Vec2> {
    if (!in_sector(x) || norm(x) == 0.0) return std::nullopt;
    return x / norm(x);
  };
  s.mu_density = [=](Point x) {
    if (!in_sector(x) || norm(x) == 0.0) return 0.0;
    return 1.0 / (dth * norm(x));
  };
  s.mu_quadrature = [=](const std::function<void(const MuNode&)>& fn) {
    // In polar coordinates the area element r cancels the density's 1/r.
    quad::for_each_node(0.0, R, 8, [&](double r, double wr) {
      quad::for_each_node(theta0, theta1, 8, [&](double t, double wt) {
        const Vec2 e{std::cos(t), std::sin(t)};
        fn({r * e, wr * wt / dth, e});
      });
    });
  };
  s.support_distance = [=](Point x) {
    if (in_sector(x)) return 0.0;
    const Point a{R * std::cos(theta0), R * std::sin(theta0)};
    const Point b{R * std::cos(theta1), R * std::sin(theta1)};
    double d = std::min(point_segment_distance(x, {0, 0}, a), point_segment_distance(x, {0, 0}, b));
    double t = std::atan2(x.y, x.x);
    if (t < 0.0) t += 2.0 * std::numbers::pi;
    if (t >= theta0 && t <= theta1) d = std::min(d, std::abs(norm(x) - R));
    return d;
  };
  s.sample_support = [=](std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const double r = R * std::sqrt(U(rng));
    const double t = theta0 + dth * U(rng);
    return Point{r * std::cos(t), r * std::sin(t)};
  };
  return s;
}

/// Two parallel unit-density segments offset by g = (1,1); the flux is the
/// constant field g on their convex hull.
inline AnalyticSolution example_segments() {
  const Vec2 g{1.0, 1.0};
  const Vec2 sig = g / norm(g);
  const Polygon hull{{-1.0, -2.0}, {1.0, 0.0}, {1.0, 2.0}, {-1.0, 0.0}};
  AnalyticSolution s;
  s.name = "segments";
  s.Q.domain = Domain2D::rectangle({-1.5, -2.5}, {1.5, 2.5});
  s.Q.components = {SegmentDensity{{1.0, 0.0}, {1.0, 2.0}, {1.0, 0.0, 0.0}},
                    SegmentDensity{{-1.0, -2.0}, {-1.0, 0.0}, {-1.0, 0.0, 0.0}}};
  s.value_Q1 = 4.0 * std::sqrt(2.0);
  s.u_hat = [](Point x) { return std::sqrt(2.0) / 2.0 * (x.x + x.y); };
  const auto in_hull = [=](Point x) { return detail::convex_polygon_distance(hull, x) <= 1e-12; };
  s.sigma = [=](Point x) -> std::optional<Vec2> {
    if (!in_hull(x)) return std::nullopt;
    return sig;
  };
  s.mu_density = [=](Point x) { return in_hull(x) ? norm(g) : 0.0; };
  s.mu_quadrature = [=](const std::function<void(const MuNode&)>& fn) {
    const auto dens = [&](Point) { return norm(g); };
    const auto dir = [&](Point) { return sig; };
    detail::triangle_nodes(hull[0], hull[1], hull[2], dens, dir, 8, fn);
    detail::triangle_nodes(hull[0], hull[2], hull[3], dens, dir, 8, fn);
  };
  s.support_distance = [=](Point x) { return detail::convex_polygon_distance(hull, x); };
  s.sample_support = [=](std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    return Point{-1.0, -2.0 + 2.0 * U(rng)} + 2.0 * U(rng) * g;
  };
  return s;
}

inline std::vector<std::string> example_names() { return {"nonconvex", "brothers", "diagonals", "arc", "segments"}; }

inline AnalyticSolution example_by_name(const std::string& name) {
  if (name == "nonconvex") return example_nonconvex();
  if (name == "brothers") return example_brothers();
  if (name == "diagonals") return example_diagonals();
  if (name == "arc") return example_arc();
  if (name == "segments") return example_segments();
  std::string known;
  for (const auto& n : example_names()) known += (known.empty() ? "" : ", ") + n;
  throw std::invalid_argument("unknown example '" + name + "'; available: " + known);
}

}  // namespace fmd
