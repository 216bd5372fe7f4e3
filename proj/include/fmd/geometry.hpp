#pragma once

// Planar domains, masked structured grids and exact geodesic distances.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fmd {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  constexpr Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  constexpr Vec2 operator-() const { return {-x, -y}; }
  constexpr Vec2 operator*(double s) const { return {x * s, y * s}; }
  constexpr Vec2 operator/(double s) const { return {x / s, y / s}; }
  constexpr Vec2& operator+=(Vec2 o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  constexpr bool operator==(const Vec2&) const = default;
};

using Point = Vec2;

constexpr Vec2 operator*(double s, Vec2 v) { return {s * v.x, s * v.y}; }
constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline double distance(Point a, Point b) { return norm(b - a); }

/// Closed polygonal chain; the closing edge back to the first vertex is implicit.
using Polygon = std::vector<Point>;

struct Box {
  Point lo;
  Point hi;

  double width() const { return hi.x - lo.x; }
  double height() const { return hi.y - lo.y; }
  double longest_side() const { return std::max(width(), height()); }
  bool contains(Point p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y;
  }
};

/// Signed area, positive for counterclockwise orientation.
inline double signed_area(const Polygon& poly) {
  double a = 0.0;
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
    a += cross(poly[i], poly[(i + 1) % n]);
  }
  return 0.5 * a;
}

inline double point_segment_distance(Point p, Point a, Point b) {
  const Vec2 ab = b - a;
  const double len2 = dot(ab, ab);
  if (len2 == 0.0) return distance(p, a);
  const double t = std::clamp(dot(p - a, ab) / len2, 0.0, 1.0);
  return distance(p, a + t * ab);
}

namespace detail {

inline bool on_segment(Point p, Point a, Point b, double tol) {
  return point_segment_distance(p, a, b) <= tol;
}

// Crossing-number test; boundary points are handled by the caller.
inline bool inside_polygon_open(const Polygon& poly, Point p) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Point a = poly[i];
    const Point b = poly[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double xc = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < xc) inside = !inside;
    }
  }
  return inside;
}

inline bool on_polygon_boundary(const Polygon& poly, Point p, double tol) {
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
    if (on_segment(p, poly[i], poly[(i + 1) % n], tol)) return true;
  }
  return false;
}

// Proper or improper intersection test for closed segments.
inline bool segments_intersect(Point a, Point b, Point c, Point d) {
  auto orient = [](Point p, Point q, Point r) {
    const double v = cross(q - p, r - p);
    return (v > 0.0) - (v < 0.0);
  };
  auto within = [](Point p, Point q, Point r) {
    return std::min(p.x, q.x) <= r.x && r.x <= std::max(p.x, q.x) &&
           std::min(p.y, q.y) <= r.y && r.y <= std::max(p.y, q.y);
  };
  const int o1 = orient(a, b, c);
  const int o2 = orient(a, b, d);
  const int o3 = orient(c, d, a);
  const int o4 = orient(c, d, b);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && within(a, b, c)) return true;
  if (o2 == 0 && within(a, b, d)) return true;
  if (o3 == 0 && within(c, d, a)) return true;
  if (o4 == 0 && within(c, d, b)) return true;
  return false;
}

inline bool is_simple(const Polygon& poly) {
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = (j == i + 1) || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n])) {
        return false;
      }
    }
  }
  return true;
}

}  // namespace detail

/// Bounded planar domain: a polygon with optional holes, or a disc.
///
/// Membership refers to the closure of the domain. Outer boundaries are
/// stored counterclockwise and holes clockwise; the factories normalize
/// orientation and reject self-intersecting or misplaced boundaries.
class Domain2D {
 public:
  /// Number of vertices of the polygon standing in for a disc boundary.
  static constexpr int kDiscPolygonSides = 256;

  static Domain2D polygon(Polygon outer, std::vector<Polygon> holes = {}) {
    if (outer.size() < 3) throw std::invalid_argument("domain: outer boundary needs at least 3 vertices");
    if (std::abs(signed_area(outer)) <= 0.0) throw std::invalid_argument("domain: degenerate outer boundary (zero area)");
    if (signed_area(outer) < 0.0) std::reverse(outer.begin(), outer.end());
    if (!detail::is_simple(outer)) throw std::invalid_argument("domain: outer boundary is self-intersecting");
    for (std::size_t k = 0; k < holes.size(); ++k) {
      auto& hole = holes[k];
      if (hole.size() < 3 || std::abs(signed_area(hole)) <= 0.0) {
        throw std::invalid_argument("domain: hole " + std::to_string(k) + " is degenerate");
      }
      if (signed_area(hole) > 0.0) std::reverse(hole.begin(), hole.end());
      if (!detail::is_simple(hole)) throw std::invalid_argument("domain: hole " + std::to_string(k) + " is self-intersecting");
      for (Point v : hole) {
        if (!detail::inside_polygon_open(outer, v) || detail::on_polygon_boundary(outer, v, 0.0)) {
          throw std::invalid_argument("domain: hole " + std::to_string(k) + " is not strictly inside the outer boundary");
        }
      }
    }
    for (std::size_t a = 0; a < holes.size(); ++a) {
      for (std::size_t b = a + 1; b < holes.size(); ++b) {
        if (polygons_touch(holes[a], holes[b])) {
          throw std::invalid_argument("domain: holes " + std::to_string(a) + " and " + std::to_string(b) + " overlap");
        }
      }
    }
    Domain2D d;
    d.outer_ = std::move(outer);
    d.holes_ = std::move(holes);
    d.bbox_ = bounding_box_of(d.outer_);
    return d;
  }

  static Domain2D disc(Point center, double radius) {
    if (!(radius > 0.0) || !std::isfinite(radius)) throw std::invalid_argument("domain: disc radius must be positive");
    Domain2D d;
    d.is_disc_ = true;
    d.center_ = center;
    d.radius_ = radius;
    d.outer_.reserve(kDiscPolygonSides);
    for (int k = 0; k < kDiscPolygonSides; ++k) {
      const double t = 2.0 * std::numbers::pi * k / kDiscPolygonSides;
      d.outer_.push_back({center.x + radius * std::cos(t), center.y + radius * std::sin(t)});
    }
    d.bbox_ = {{center.x - radius, center.y - radius}, {center.x + radius, center.y + radius}};
    return d;
  }

  static Domain2D rectangle(Point lo, Point hi) {
    return polygon({lo, {hi.x, lo.y}, hi, {lo.x, hi.y}});
  }

  bool is_disc() const { return is_disc_; }
  Point center() const { return center_; }
  double radius() const { return radius_; }
  /// Outer boundary; for discs this is the inscribed regular polygon.
  const Polygon& outer() const { return outer_; }
  const std::vector<Polygon>& holes() const { return holes_; }
  const Box& bounding_box() const { return bbox_; }

  double area() const {
    if (is_disc_) return std::numbers::pi * radius_ * radius_;
    double a = signed_area(outer_);
    for (const auto& h : holes_) a += signed_area(h);
    return a;
  }

  /// True iff p lies in the closed domain, within distance tol of it.
  bool contains(Point p, double tol = 0.0) const {
    if (is_disc_) return distance(p, center_) <= radius_ + tol;
    if (!bbox_.contains(p) && !near_box(p, tol)) return false;
    if (detail::on_polygon_boundary(outer_, p, tol)) return true;
    if (!detail::inside_polygon_open(outer_, p)) return false;
    for (const auto& h : holes_) {
      if (detail::on_polygon_boundary(h, p, tol)) return true;
      if (detail::inside_polygon_open(h, p)) return false;
    }
    return true;
  }

  /// True iff the closed segment [a,b] lies in the closed domain.
  bool segment_inside(Point a, Point b, double tol = 1e-12) const {
    if (!contains(a, tol) || !contains(b, tol)) return false;
    if (is_disc_) return true;
    const Vec2 ab = b - a;
    const double len = norm(ab);
    if (len == 0.0) return true;
    std::vector<double> cuts{0.0, 1.0};
    auto collect = [&](const Polygon& poly) {
      for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
        const Point c = poly[i];
        const Point d = poly[(i + 1) % n];
        // Parameters along [a,b] where it meets edge [c,d] or passes a vertex.
        const Vec2 cd = d - c;
        const double den = cross(ab, cd);
        if (den != 0.0) {
          const double t = cross(c - a, cd) / den;
          const double s = cross(c - a, ab) / den;
          if (t > 0.0 && t < 1.0 && s >= -1e-12 && s <= 1.0 + 1e-12) cuts.push_back(t);
        }
        const double tv = dot(c - a, ab) / (len * len);
        if (tv > 0.0 && tv < 1.0 && point_segment_distance(c, a, b) <= tol) cuts.push_back(tv);
      }
    };
    collect(outer_);
    for (const auto& h : holes_) collect(h);
    std::sort(cuts.begin(), cuts.end());
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
      if (cuts[k + 1] - cuts[k] <= 0.0) continue;
      const Point mid = a + (0.5 * (cuts[k] + cuts[k + 1])) * ab;
      if (!contains(mid, tol)) return false;
    }
    return true;
  }

  /// Vertices where the domain is locally nonconvex; shortest paths bend only there.
  std::vector<Point> reflex_vertices() const {
    std::vector<Point> out;
    if (is_disc_) return out;
    auto scan = [&](const Polygon& poly) {
      const std::size_t n = poly.size();
      for (std::size_t i = 0; i < n; ++i) {
        const Point prev = poly[(i + n - 1) % n];
        const Point cur = poly[i];
        const Point next = poly[(i + 1) % n];
        if (cross(cur - prev, next - cur) < 0.0) out.push_back(cur);
      }
    };
    scan(outer_);
    for (const auto& h : holes_) scan(h);
    return out;
  }

 private:
  static Box bounding_box_of(const Polygon& poly) {
    Box b{{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()},
          {-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()}};
    for (Point p : poly) {
      b.lo.x = std::min(b.lo.x, p.x);
      b.lo.y = std::min(b.lo.y, p.y);
      b.hi.x = std::max(b.hi.x, p.x);
      b.hi.y = std::max(b.hi.y, p.y);
    }
    return b;
  }

  static bool polygons_touch(const Polygon& a, const Polygon& b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      for (std::size_t j = 0; j < b.size(); ++j) {
        if (detail::segments_intersect(a[i], a[(i + 1) % a.size()], b[j], b[(j + 1) % b.size()])) return true;
      }
    }
    return detail::inside_polygon_open(a, b.front()) || detail::inside_polygon_open(b, a.front());
  }

  bool near_box(Point p, double tol) const {
    return p.x >= bbox_.lo.x - tol && p.x <= bbox_.hi.x + tol && p.y >= bbox_.lo.y - tol &&
           p.y <= bbox_.hi.y + tol;
  }

  bool is_disc_ = false;
  Point center_{};
  double radius_ = 0.0;
  Polygon outer_;
  std::vector<Polygon> holes_;
  Box bbox_{};
};

inline bool point_in_domain(const Domain2D& domain, Point x, double tol = 0.0) {
  return domain.contains(x, tol);
}

/// Uniform node/cell grid over the bounding box of a domain.
///
/// Nodes are indexed k = j * (nx + 1) + i, cells c = j * nx + i. A node is
/// active when it lies in the closed domain; a cell is active when its four
/// corners are. A node is "supported" when it is a corner of an active cell,
/// which is where discrete sources and potentials live.
struct Grid {
  int nx = 0;
  int ny = 0;
  double h = 0.0;
  Point origin{};
  std::vector<std::uint8_t> node_active;
  std::vector<std::uint8_t> cell_active;
  std::vector<std::uint8_t> node_supported;

  int node_cols() const { return nx + 1; }
  std::size_t num_nodes() const { return static_cast<std::size_t>(nx + 1) * (ny + 1); }
  std::size_t num_cells() const { return static_cast<std::size_t>(nx) * ny; }
  std::size_t node(int i, int j) const { return static_cast<std::size_t>(j) * (nx + 1) + i; }
  std::size_t cell(int i, int j) const { return static_cast<std::size_t>(j) * nx + i; }
  int node_i(std::size_t k) const { return static_cast<int>(k % (nx + 1)); }
  int node_j(std::size_t k) const { return static_cast<int>(k / (nx + 1)); }
  int cell_i(std::size_t c) const { return static_cast<int>(c % nx); }
  int cell_j(std::size_t c) const { return static_cast<int>(c / nx); }
  Point node_point(int i, int j) const { return {origin.x + i * h, origin.y + j * h}; }
  Point node_point(std::size_t k) const { return node_point(node_i(k), node_j(k)); }
  Point cell_center(std::size_t c) const {
    return {origin.x + (cell_i(c) + 0.5) * h, origin.y + (cell_j(c) + 0.5) * h};
  }
  /// Corner nodes of cell c in the order (0,0), (1,0), (0,1), (1,1).
  std::array<std::size_t, 4> cell_corners(std::size_t c) const {
    const int i = cell_i(c);
    const int j = cell_j(c);
    return {node(i, j), node(i + 1, j), node(i, j + 1), node(i + 1, j + 1)};
  }
  std::size_t active_cell_count() const {
    return static_cast<std::size_t>(std::count(cell_active.begin(), cell_active.end(), 1));
  }
  bool same_shape(const Grid& o) const {
    return nx == o.nx && ny == o.ny && h == o.h && origin == o.origin;
  }
};

/// Relative tolerance for boundary membership of grid nodes (scaled by h).
inline constexpr double kBoundaryTolerance = 1e-9;

inline Grid build_grid(const Domain2D& domain, int resolution) {
  if (resolution < 4) throw std::invalid_argument("build_grid: resolution must be at least 4");
  if (!(domain.area() > 0.0)) throw std::invalid_argument("build_grid: degenerate domain (zero area)");
  const Box& box = domain.bounding_box();
  Grid g;
  g.h = box.longest_side() / resolution;
  g.origin = box.lo;
  g.nx = std::max(1, static_cast<int>(std::ceil(box.width() / g.h - 1e-9)));
  g.ny = std::max(1, static_cast<int>(std::ceil(box.height() / g.h - 1e-9)));
  const double tol = g.h * kBoundaryTolerance;
  g.node_active.assign(g.num_nodes(), 0);
  for (int j = 0; j <= g.ny; ++j) {
    for (int i = 0; i <= g.nx; ++i) {
      g.node_active[g.node(i, j)] = domain.contains(g.node_point(i, j), tol) ? 1 : 0;
    }
  }
  g.cell_active.assign(g.num_cells(), 0);
  g.node_supported.assign(g.num_nodes(), 0);
  for (std::size_t c = 0; c < g.num_cells(); ++c) {
    const auto corners = g.cell_corners(c);
    const bool all = std::all_of(corners.begin(), corners.end(), [&](std::size_t k) { return g.node_active[k] != 0; });
    if (!all) continue;
    g.cell_active[c] = 1;
    for (std::size_t k : corners) g.node_supported[k] = 1;
  }
  if (g.active_cell_count() == 0) throw std::invalid_argument("build_grid: no active cells at this resolution");
  return g;
}

/// Visibility graph over a set of sites plus the reflex vertices of a domain.
///
/// Sites come first in the node list; edges join mutually visible nodes and
/// carry Euclidean lengths.
struct VisibilityGraph {
  std::vector<Point> nodes;
  std::size_t num_sites = 0;
  struct Edge {
    std::size_t a;
    std::size_t b;
    double length;
  };
  std::vector<Edge> edges;
};

inline VisibilityGraph build_visibility_graph(const Domain2D& domain, const std::vector<Point>& sites) {
  VisibilityGraph vg;
  vg.nodes = sites;
  vg.num_sites = sites.size();
  for (Point r : domain.reflex_vertices()) {
    if (std::find(sites.begin(), sites.end(), r) == sites.end()) vg.nodes.push_back(r);
  }
  const double scale = domain.bounding_box().longest_side();
  for (std::size_t a = 0; a < vg.nodes.size(); ++a) {
    for (std::size_t b = a + 1; b < vg.nodes.size(); ++b) {
      if (domain.segment_inside(vg.nodes[a], vg.nodes[b], 1e-12 * scale)) {
        vg.edges.push_back({a, b, distance(vg.nodes[a], vg.nodes[b])});
      }
    }
  }
  return vg;
}

/// Single-source shortest path lengths on a visibility graph.
inline std::vector<double> visibility_distances(const VisibilityGraph& vg, std::size_t source) {
  const std::size_t n = vg.nodes.size();
  std::vector<std::vector<std::pair<std::size_t, double>>> adj(n);
  for (const auto& e : vg.edges) {
    adj[e.a].push_back({e.b, e.length});
    adj[e.b].push_back({e.a, e.length});
  }
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[source] = 0.0;
  pq.push({0.0, source});
  while (!pq.empty()) {
    const auto [d, v] = pq.top();
    pq.pop();
    if (d > dist[v]) continue;
    for (const auto& [w, len] : adj[v]) {
      if (d + len < dist[w]) {
        dist[w] = d + len;
        pq.push({dist[w], w});
      }
    }
  }
  return dist;
}

/// Length of the shortest path joining a and b inside the closed domain.
/// Returns +infinity when a and b lie in different components.
inline double geodesic_distance(const Domain2D& domain, Point a, Point b) {
  const double tol = kBoundaryTolerance * domain.bounding_box().longest_side();
  if (!domain.contains(a, tol) || !domain.contains(b, tol)) {
    throw std::invalid_argument("geodesic_distance: endpoint outside the domain");
  }
  if (a == b) return 0.0;
  if (domain.segment_inside(a, b, tol)) return distance(a, b);
  const VisibilityGraph vg = build_visibility_graph(domain, {a, b});
  return visibility_distances(vg, 0)[1];
}

}  // namespace fmd
