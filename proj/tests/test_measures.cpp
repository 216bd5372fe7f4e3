#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fmd/measures.hpp"
#include "fmd/oracles.hpp"

using namespace fmd;

namespace {

GridPtr grid_for(const Domain2D& dom, int res) { return std::make_shared<const Grid>(build_grid(dom, res)); }

double raster_pair(const RasterSource& q, const std::function<double(Point)>& u) {
  double s = 0.0;
  for (std::size_t k = 0; k < q.q.size(); ++k) {
    if (q.q[k] != 0.0) s += q.q[k] * u(q.grid->node_point(k));
  }
  return s;
}

}  // namespace

TEST(TotalMass, PaperSources) {
  EXPECT_EQ(total_mass(example_nonconvex().Q), 0.0);
  EXPECT_NEAR(total_mass(example_brothers().Q), 0.0, 1e-14);
  EXPECT_NEAR(total_mass(example_arc().Q), 0.0, 1e-14);
}

TEST(TotalMass, PolynomialSegmentIsExact) {
  const SegmentDensity s{{0, 0}, {3, 4}, {1.0, 2.0, 3.0}};
  // L = 5: 5 + 25 + 125.
  EXPECT_NEAR(component_mass(s, Domain2D::rectangle({-1, -1}, {4, 5})), 155.0, 1e-12);
}

TEST(TotalMass, BoundaryMonomialOnSquare) {
  // x^2 on the boundary of [-1,1]^2: two sides with x^2 = 1, two with int x^2 = 2/3.
  const Domain2D dom = Domain2D::rectangle({-1, -1}, {1, 1});
  EXPECT_NEAR(component_mass(BoundaryDensity{1.0, 2, 0}, dom), 2 * 2.0 + 2 * (2.0 / 3.0), 1e-12);
}

TEST(CheckBalance, RejectsResidual) {
  SourceMeasure Q{{Atom{{0, 0}, 1.0}, Atom{{0.5, 0}, -0.9}}, Domain2D::rectangle({-1, -1}, {1, 1})};
  EXPECT_THROW(check_balance(Q), std::invalid_argument);
  std::get<Atom>(Q.components[1]).weight = -1.0;
  EXPECT_NO_THROW(check_balance(Q));
}

TEST(Pair, PaperValues) {
  const AnalyticSolution ex = example_nonconvex();
  EXPECT_NEAR(pair(ex.Q, ex.u_hat), std::sqrt(2.0), 1e-12);
  const AnalyticSolution seg = example_segments();
  const double r2 = std::sqrt(2.0) / 2.0;
  EXPECT_NEAR(pair(seg.Q, [r2](Point x) { return r2 * (x.x + x.y); }), 4.0 * std::sqrt(2.0), 1e-12);
}

TEST(Pair, ConstantsAnnihilated) {
  for (const auto& name : example_names()) {
    const AnalyticSolution ex = example_by_name(name);
    EXPECT_NEAR(pair(ex.Q, [](Point) { return 3.7; }), 0.0, 1e-12) << name;
    const double base = pair(ex.Q, ex.u_hat);
    EXPECT_NEAR(pair(ex.Q, [&](Point x) { return ex.u_hat(x) - 11.0; }), base, 1e-12) << name;
  }
}

TEST(Pair, LinearInMeasureAndPotential) {
  const AnalyticSolution a = example_arc();
  const AnalyticSolution b = example_arc(0.5, 1.0, 2.0);
  SourceMeasure both = a.Q;
  both.components.insert(both.components.end(), b.Q.components.begin(), b.Q.components.end());
  const auto u = [](Point x) { return std::sin(x.x) + x.y * x.y; };
  const auto v = [](Point x) { return x.x * x.y; };
  EXPECT_NEAR(pair(both, u), pair(a.Q, u) + pair(b.Q, u), 1e-12);
  EXPECT_NEAR(pair(a.Q, [&](Point x) { return 2.0 * u(x) - 3.0 * v(x); }), 2.0 * pair(a.Q, u) - 3.0 * pair(a.Q, v),
              1e-12);
}

TEST(Rasterize, AtomOnNode) {
  const Domain2D dom = Domain2D::rectangle({0, 0}, {1, 1});
  const GridPtr g = grid_for(dom, 4);
  const RasterSource q = rasterize({{Atom{{0.25, 0.5}, 2.0}, Atom{{0.75, 0.5}, -2.0}}, dom}, g);
  std::size_t nonzero = 0;
  for (double v : q.q) nonzero += v != 0.0;
  EXPECT_EQ(nonzero, 2u);
  EXPECT_DOUBLE_EQ(q.q[g->node(1, 2)], 2.0);
  EXPECT_DOUBLE_EQ(q.q[g->node(3, 2)], -2.0);
}

TEST(Rasterize, AtomAtCellCenterSplitsEvenly) {
  const Domain2D dom = Domain2D::rectangle({0, 0}, {1, 1});
  const GridPtr g = grid_for(dom, 4);
  const RasterSource q = rasterize({{Atom{{0.375, 0.375}, 1.0}, Atom{{0.75, 0.75}, -1.0}}, dom}, g);
  for (std::size_t k : g->cell_corners(g->cell(1, 1))) EXPECT_NEAR(q.q[k], 0.25, 1e-15);
}

TEST(Rasterize, LineSourcesBalancedWithTotalVariation) {
  // The two diagonals cross at the origin, where opposite deposits cancel on
  // a few shared nodes; the lost variation is O(h).
  const AnalyticSolution ex = example_diagonals();
  const double exact = 4.0 * std::sqrt(2.0);
  const RasterSource q = rasterize(ex.Q, grid_for(ex.domain(), 256));
  const RasterSource fine = rasterize(ex.Q, grid_for(ex.domain(), 512));
  EXPECT_NEAR(q.sum(), 0.0, 1e-12 * q.total_variation());
  const double loss = 1.0 - q.total_variation() / exact;
  const double loss_fine = 1.0 - fine.total_variation() / exact;
  EXPECT_GE(loss, 0.0);
  EXPECT_LT(loss, 0.01);
  EXPECT_NEAR(loss_fine / loss, 0.5, 0.05);
}

TEST(Rasterize, SupportedNodesOnly) {
  const AnalyticSolution ex = example_brothers();
  const GridPtr g = grid_for(ex.domain(), 64);
  const RasterSource q = rasterize(ex.Q, g);
  for (std::size_t k = 0; k < q.q.size(); ++k) {
    if (q.q[k] != 0.0) {
      EXPECT_EQ(g->node_supported[k], 1);
    }
  }
  EXPECT_NEAR(q.sum(), 0.0, 1e-12 * q.total_variation());
}

TEST(Rasterize, PreservesLinearPairingAndConverges) {
  const AnalyticSolution ex = example_arc();
  const auto lin = [](Point x) { return x.x; };
  const auto curved = [](Point x) { return std::sin(3.0 * x.x) * x.y; };
  double prev = std::numeric_limits<double>::infinity();
  for (int res : {16, 64, 256}) {
    const RasterSource q = rasterize(ex.Q, grid_for(ex.domain(), res));
    EXPECT_NEAR(raster_pair(q, lin), pair(ex.Q, lin), 1e-12);
    const double err = std::abs(raster_pair(q, curved) - pair(ex.Q, curved));
    EXPECT_LT(err, prev);
    prev = err;
  }
}

TEST(Rasterize, OutsideComponentRejected) {
  const Domain2D dom = Domain2D::rectangle({0, 0}, {1, 1});
  const SourceMeasure Q{{Atom{{0.5, 0.5}, 1.0}, Atom{{1.5, 0.5}, -1.0}}, dom};
  try {
    rasterize(Q, grid_for(dom, 8));
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("component 1"), std::string::npos);
  }
}
