#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fmd/oracles.hpp"
#include "fmd/solver_grid.hpp"

using namespace fmd;

namespace {

GridPtr grid_for(const Domain2D& dom, int res) { return std::make_shared<const Grid>(build_grid(dom, res)); }

PotentialField sample(const GridPtr& g, const std::function<double(Point)>& f) {
  PotentialField u{g, std::vector<double>(g->num_nodes(), 0.0), 0};
  for (std::size_t k = 0; k < g->num_nodes(); ++k) u.u[k] = f(g->node_point(k));
  return u;
}

SourceMeasure two_atoms(Point a, Point b, const Domain2D& dom) { return {{Atom{a, 1.0}, Atom{b, -1.0}}, dom}; }

}  // namespace

TEST(DiscreteGrad, AffineExactness) {
  const GridPtr g = grid_for(Domain2D::rectangle({0, 0}, {1, 1}), 16);
  const double r2 = std::sqrt(2.0) / 2.0;
  const auto gx = discrete_grad(sample(g, [](Point x) { return x.x; }));
  const auto g0 = discrete_grad(sample(g, [](Point) { return 0.0; }));
  const auto gd = discrete_grad(sample(g, [r2](Point x) { return r2 * (x.x + x.y); }));
  for (std::size_t c = 0; c < g->num_cells(); ++c) {
    EXPECT_NEAR(gx[c].x, 1.0, 1e-12);
    EXPECT_NEAR(gx[c].y, 0.0, 1e-12);
    EXPECT_EQ(g0[c], (Vec2{0, 0}));
    EXPECT_NEAR(gd[c].x, r2, 1e-12);
    EXPECT_NEAR(gd[c].y, r2, 1e-12);
    EXPECT_NEAR(norm(gd[c]), 1.0, 1e-12);
  }
}

TEST(DiscreteDiv, NegativeAdjointOnRandomFields) {
  const GridPtr g = grid_for(example_nonconvex().domain(), 40);
  std::mt19937_64 rng(42);
  std::normal_distribution<double> N(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    PotentialField u{g, std::vector<double>(g->num_nodes()), 0};
    FluxMeasure p{g, std::vector<Vec2>(g->num_cells())};
    for (double& v : u.u) v = N(rng);
    for (std::size_t c = 0; c < p.p.size(); ++c) p.p[c] = g->cell_active[c] ? Vec2{N(rng), N(rng)} : Vec2{};
    const auto gu = discrete_grad(u);
    const auto dp = discrete_div(p);
    double lhs = 0.0;
    double scale = 0.0;
    for (std::size_t c = 0; c < p.p.size(); ++c) {
      lhs += dot(gu[c], p.p[c]);
      scale += std::abs(dot(gu[c], p.p[c]));
    }
    double rhs = 0.0;
    for (std::size_t k = 0; k < dp.size(); ++k) rhs -= u.u[k] * dp[k];
    EXPECT_LE(std::abs(lhs - rhs), 1e-12 * scale);
  }
}

TEST(DiscreteDiv, ConstantFluxTelescopes) {
  const GridPtr g = grid_for(Domain2D::rectangle({0, 0}, {1, 1}), 8);
  const FluxMeasure p{g, std::vector<Vec2>(g->num_cells(), Vec2{0.3, -0.2})};
  const auto d = discrete_div(p);
  double boundary = 0.0;
  for (int j = 0; j <= g->ny; ++j) {
    for (int i = 0; i <= g->nx; ++i) {
      const double v = d[g->node(i, j)];
      if (i > 0 && j > 0 && i < g->nx && j < g->ny) {
        EXPECT_NEAR(v, 0.0, 1e-12);
      } else {
        boundary += std::abs(v);
      }
    }
  }
  EXPECT_GT(boundary, 0.0);
  const auto z = discrete_div(FluxMeasure{g, std::vector<Vec2>(g->num_cells(), Vec2{})});
  for (double v : z) EXPECT_EQ(v, 0.0);
}

TEST(Solve, ZeroSource) {
  const GridPtr g = grid_for(Domain2D::rectangle({0, 0}, {1, 1}), 16);
  const KantorovichSolution s = solve(RasterSource{g, std::vector<double>(g->num_nodes(), 0.0)}, SolverParams{});
  EXPECT_EQ(s.value, 0.0);
  EXPECT_EQ(s.gap, 0.0);
  EXPECT_LE(s.iterations, 1);
  for (Vec2 v : s.p.p) EXPECT_EQ(v, (Vec2{0, 0}));
}

TEST(Solve, TwoAtomsAtHalfDistance) {
  const Domain2D dom = Domain2D::rectangle({0, 0}, {1, 1});
  const GridPtr g = grid_for(dom, 64);
  const KantorovichSolution s = solve(rasterize(two_atoms({0.25, 0.5}, {0.75, 0.5}, dom), g), SolverParams{});
  EXPECT_NEAR(s.value, 0.5, 0.5 * 0.02);
  EXPECT_TRUE(s.converged);
}

TEST(Solve, BrothersValue) {
  const AnalyticSolution ex = example_brothers();
  const KantorovichSolution s = solve(rasterize(ex.Q, grid_for(ex.domain(), 256)), SolverParams{});
  EXPECT_NEAR(s.value / ex.value_Q1, 1.0, 0.02);
  EXPECT_LE(s.relative_gap(), 1e-3);
  EXPECT_LE(s.residual_div, 1e-6);
}

TEST(Solve, UnbalancedRejected) {
  const GridPtr g = grid_for(Domain2D::rectangle({0, 0}, {1, 1}), 8);
  RasterSource q{g, std::vector<double>(g->num_nodes(), 0.0)};
  q.q[g->node(2, 2)] = 1.0;
  EXPECT_THROW(solve(q, SolverParams{}), std::invalid_argument);
  SolverParams bad;
  bad.tol_gap = -1.0;
  EXPECT_THROW(solve(rasterize(example_nonconvex().Q, grid_for(example_nonconvex().domain(), 8)), bad),
               std::invalid_argument);
}

TEST(Solve, WeakDualityAndSmoothedGapTrend) {
  for (const auto& name : example_names()) {
    const AnalyticSolution ex = example_by_name(name);
    SolverParams params;
    params.tol_gap = 1e-4;
    const KantorovichSolution s = solve(rasterize(ex.Q, grid_for(ex.domain(), 64)), params);
    for (const auto& r : s.history) EXPECT_LE(r.pairing, r.value + 1e-9 * r.value) << name;
    EXPECT_GE(s.gap, -1e-9 * s.value);
    // Windows of ten records span 100 iterations at the default check interval.
    std::vector<double> means;
    for (std::size_t a = 0; a + 10 <= s.history.size(); a += 10) {
      double m = 0.0;
      for (std::size_t k = a; k < a + 10; ++k) m += s.history[k].gap;
      means.push_back(m / 10.0);
    }
    for (std::size_t k = 1; k < means.size(); ++k) EXPECT_LE(means[k], means[k - 1]) << name << " window " << k;
  }
}

TEST(Solve, AnchorChangesPotentialByConstant) {
  const AnalyticSolution ex = example_nonconvex();
  const GridPtr g = grid_for(ex.domain(), 32);
  const RasterSource q = rasterize(ex.Q, g);
  SolverParams params;
  params.adaptive = false;
  const KantorovichSolution a = solve(q, params);
  std::size_t other = g->num_nodes() - 1;
  while (!g->node_supported[other]) --other;
  const KantorovichSolution b = solve(q, params, other);
  EXPECT_EQ(b.u.u[other], 0.0);
  EXPECT_NEAR(a.value, b.value, 1e-9);
  for (std::size_t c = 0; c < a.p.p.size(); ++c) EXPECT_NEAR(norm(a.p.p[c] - b.p.p[c]), 0.0, 1e-9);
  const double shift = a.u.u[other];
  for (std::size_t k = 0; k < g->num_nodes(); ++k) {
    if (g->node_supported[k]) {
      EXPECT_NEAR(a.u.u[k] - b.u.u[k], shift, 1e-9);
    }
  }
}

TEST(Solve, TranslationByGridSteps) {
  SolverParams params;
  params.adaptive = false;
  const Domain2D d0 = Domain2D::rectangle({0, 0}, {1, 1});
  const double h = 1.0 / 32;
  const Vec2 t{5 * h, -3 * h};
  const Domain2D d1 = Domain2D::rectangle(Point{0, 0} + t, Point{1, 1} + t);
  const Point a{0.25, 0.375};
  const Point b{0.75, 0.625};
  const auto s0 = solve(rasterize(two_atoms(a, b, d0), grid_for(d0, 32)), params);
  const auto s1 = solve(rasterize(two_atoms(a + t, b + t, d1), grid_for(d1, 32)), params);
  EXPECT_NEAR(s0.value, s1.value, 1e-12);
}

TEST(Solve, QuarterTurnInSquare) {
  SolverParams params;
  params.adaptive = false;
  const Domain2D dom = Domain2D::rectangle({-1, -1}, {1, 1});
  const auto rot = [](Point x) { return Point{-x.y, x.x}; };
  const Point a{-0.5, 0.25};
  const Point b{0.375, -0.625};
  const auto s0 = solve(rasterize(two_atoms(a, b, dom), grid_for(dom, 32)), params);
  const auto s1 = solve(rasterize(two_atoms(rot(a), rot(b), dom), grid_for(dom, 32)), params);
  EXPECT_NEAR(s0.value, s1.value, 1e-6);
}

TEST(DualityGap, ZeroPotentialGivesMass) {
  const AnalyticSolution ex = example_nonconvex();
  const GridPtr g = grid_for(ex.domain(), 32);
  const RasterSource q = rasterize(ex.Q, g);
  const KantorovichSolution s = solve(q, SolverParams{});
  const PotentialField zero{g, std::vector<double>(g->num_nodes(), 0.0), 0};
  const GapReport r = duality_gap(s.q, zero, s.p);
  EXPECT_DOUBLE_EQ(r.gap, s.p.mass());
  EXPECT_EQ(r.lipschitz_violation, 0.0);
  EXPECT_LE(r.residual_div, 1e-9);
}

TEST(DualityGap, SampledOptimalPairOfDiagonals) {
  const AnalyticSolution ex = example_diagonals();
  for (int res : {64, 256}) {
    const GridPtr g = grid_for(ex.domain(), res);
    const PotentialField u = sample(g, ex.u_hat);
    FluxMeasure p{g, std::vector<Vec2>(g->num_cells(), Vec2{})};
    constexpr int sub = 4;
    const double w = (g->h / sub) * (g->h / sub);
    for (std::size_t c = 0; c < g->num_cells(); ++c) {
      if (!g->cell_active[c]) continue;
      const Point lo = g->node_point(g->cell_i(c), g->cell_j(c));
      for (int sj = 0; sj < sub; ++sj) {
        for (int si = 0; si < sub; ++si) {
          const Point x{lo.x + (si + 0.5) * g->h / sub, lo.y + (sj + 0.5) * g->h / sub};
          if (const auto s = ex.sigma(x)) p.p[c] += (ex.mu_density(x) * w) * *s;
        }
      }
    }
    const GapReport r = duality_gap(rasterize(ex.Q, g), u, p);
    EXPECT_LE(std::abs(r.gap) / r.value, res == 256 ? 0.02 : 0.1) << res;
    EXPECT_LE(r.lipschitz_violation, 1e-9);
  }
}
