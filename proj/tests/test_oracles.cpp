#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fmd/geometry.hpp"
#include "fmd/measures.hpp"
#include "fmd/oracles.hpp"

using namespace fmd;

namespace {

std::vector<AnalyticSolution> all_oracles() {
  std::vector<AnalyticSolution> out;
  for (const auto& name : example_names()) {
    out.push_back(example_by_name(name));
    if (out.back().alternate) out.push_back(*out.back().alternate);
  }
  return out;
}

// Central difference; nullopt where the one-sided slopes disagree (a kink).
std::optional<Vec2> gradient(const std::function<double(Point)>& u, Point x) {
  const double e = 1e-6;
  Vec2 g{};
  for (int axis = 0; axis < 2; ++axis) {
    const Vec2 d = axis == 0 ? Vec2{e, 0} : Vec2{0, e};
    const double f0 = u(x);
    const double fwd = (u(x + d) - f0) / e;
    const double bwd = (f0 - u(x - d)) / e;
    if (std::abs(fwd - bwd) > 1e-3) return std::nullopt;
    (axis == 0 ? g.x : g.y) = 0.5 * (fwd + bwd);
  }
  return g;
}

Point random_point(const Domain2D& dom, std::mt19937_64& rng) {
  const auto [lo, hi] = dom.bounding_box();
  std::uniform_real_distribution<double> X(lo.x, hi.x);
  std::uniform_real_distribution<double> Y(lo.y, hi.y);
  for (;;) {
    const Point p{X(rng), Y(rng)};
    if (dom.contains(p)) return p;
  }
}

}  // namespace

TEST(Nonconvex, Values) {
  const AnalyticSolution ex = example_nonconvex();
  EXPECT_DOUBLE_EQ(ex.value_Q1, std::sqrt(2.0));
  EXPECT_NEAR(ex.u_hat({-0.5, 0.5}), std::sqrt(2.0) / 2.0, 1e-15);
  EXPECT_NEAR(ex.u_hat({-0.5, -0.5}), -std::sqrt(2.0) / 2.0, 1e-15);
  const auto s = ex.sigma({-0.25, 0.25});
  ASSERT_TRUE(s.has_value());
  EXPECT_NEAR(s->x, -std::sqrt(2.0) / 2.0, 1e-15);
  EXPECT_NEAR(s->y, std::sqrt(2.0) / 2.0, 1e-15);
  EXPECT_FALSE(ex.sigma({0.5, 0.5}).has_value());
}

TEST(Brothers, Values) {
  const AnalyticSolution ex = example_brothers();
  EXPECT_NEAR(ex.value_Q1, 3.771236, 1e-6);
  EXPECT_EQ(ex.mu_density({0.0, 0.0}), 0.0);
  EXPECT_NEAR(ex.mu_density({0.9, 0.0}), 3.6, 1e-15);
  EXPECT_EQ(ex.mu_density({0.9, 0.9}), 0.0);
}

TEST(Brothers, BvWitness) {
  const AnalyticSolution ex = example_brothers();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> T(0.0, 2.0 * std::numbers::pi);
  for (int k = 0; k < 1000; ++k) {
    const double t = T(rng);
    const Point x{std::cos(t), std::sin(t)};
    EXPECT_NEAR(ex.bv_witness(x), ex.boundary_trace(x), 1e-12) << t;
  }
  // The flux is the rotated gradient of the witness, p = (-d2 v, d1 v).
  for (int k = 0; k < 1000; ++k) {
    const Point x = ex.sample_support(rng);
    const auto g = gradient(ex.bv_witness, x);
    if (!g) continue;
    const Vec2 p = ex.mu_density(x) * *ex.sigma(x);
    EXPECT_NEAR(-g->y, p.x, 1e-6);
    EXPECT_NEAR(g->x, p.y, 1e-6);
  }
}

TEST(Diagonals, Values) {
  const AnalyticSolution ex = example_diagonals();
  EXPECT_NEAR(ex.value_Q1, 2.828427, 1e-6);
  EXPECT_EQ(ex.u_hat({1.0, 0.0}), 0.0);
  EXPECT_EQ(ex.u_hat({1.0, 1.0}), 1.0);
  for (const Point x : {Point{0.7, 0.2}, Point{-0.4, 0.1}, Point{0.9, -0.85}}) {
    const auto c = ex.C_hat(x, 2.0);
    ASSERT_TRUE(c.has_value());
    EXPECT_NEAR(c->rho, 1.0, 1e-15);
    EXPECT_EQ(std::abs(c->n.y), 1.0);
    EXPECT_EQ(c->n.x, 0.0);
  }
  EXPECT_FALSE(ex.C_hat({0.1, 0.5}, 2.0).has_value());
  ASSERT_TRUE(ex.alternate);
  EXPECT_TRUE(ex.alternate->C_hat({0.1, 0.5}, 2.0).has_value());
  EXPECT_EQ(ex.alternate->value_Q1, ex.value_Q1);
}

TEST(Arc, Values) {
  const AnalyticSolution ex = example_arc(0.8, std::numbers::pi / 6.0, std::numbers::pi / 2.0);
  EXPECT_EQ(ex.value_Q1, 0.8);
  for (double t : {0.6, 1.0, 1.5}) {
    const auto s = ex.sigma({0.5 * std::cos(t), 0.5 * std::sin(t)});
    ASSERT_TRUE(s.has_value());
    EXPECT_NEAR(s->x, std::cos(t), 1e-15);
    EXPECT_NEAR(s->y, std::sin(t), 1e-15);
  }
  EXPECT_NEAR(ex.mu_mass(), 0.8, 1e-12);
  const AnalyticSolution other = example_arc(1.3, 0.2, 4.0);
  EXPECT_NEAR(other.mu_mass(), 1.3, 1e-12);
  EXPECT_NEAR(pair(other.Q, other.u_hat), 1.3, 1e-9);
}

TEST(Arc, RejectsBadAngles) {
  EXPECT_THROW(example_arc(0.8, 1.0, 0.5), std::invalid_argument);
  EXPECT_THROW(example_arc(0.8, 0.0, 0.5), std::invalid_argument);
  EXPECT_THROW(example_arc(0.8, 1.0, 7.0), std::invalid_argument);
  EXPECT_THROW(example_arc(-1.0, 0.5, 1.0), std::invalid_argument);
}

TEST(Segments, Values) {
  const AnalyticSolution ex = example_segments();
  EXPECT_NEAR(ex.value_Q1, 5.656854, 1e-6);
  double area = 0.0;
  double trace = 0.0;
  ex.mu_quadrature([&](const MuNode& m) {
    const double d = ex.mu_density(m.x);
    area += m.weight / d;
    trace += ex.C_hat(m.x, 1.0)->rho * m.weight / d;
  });
  EXPECT_NEAR(area, 4.0, 1e-12);
  EXPECT_NEAR(trace, 1.0, 1e-12);
  // C = (1/8) g (x) g with g = (1, 1): rho = |g|^2 / 8.
  EXPECT_NEAR(ex.C_hat({0.0, 0.5}, 1.0)->rho, 0.25, 1e-15);
}

TEST(ExampleByName, UnknownNameListsChoices) {
  try {
    example_by_name("bogus");
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    for (const auto& n : example_names()) EXPECT_NE(msg.find(n), std::string::npos) << n;
  }
  for (const auto& n : example_names()) EXPECT_EQ(example_by_name(n).name, n);
}

TEST(AllOracles, PairingEqualsValue) {
  for (const auto& ex : all_oracles()) EXPECT_NEAR(pair(ex.Q, ex.u_hat), ex.value_Q1, 1e-9) << ex.name;
}

TEST(AllOracles, PotentialIsOneLipschitz) {
  std::mt19937_64 rng(17);
  for (const auto& ex : all_oracles()) {
    const Domain2D& dom = ex.domain();
    for (int k = 0; k < 100000; ++k) {
      const Point a = random_point(dom, rng);
      const Point b = random_point(dom, rng);
      // Intrinsic distance only matters when the chord leaves the domain.
      const double d = dom.segment_inside(a, b) ? distance(a, b) : geodesic_distance(dom, a, b);
      ASSERT_LE(std::abs(ex.u_hat(a) - ex.u_hat(b)), d * (1.0 + 1e-12) + 1e-15) << ex.name;
    }
  }
}

TEST(AllOracles, MuMassAndTrace) {
  for (const auto& ex : all_oracles()) {
    EXPECT_NEAR(ex.mu_mass(), ex.value_Q1, 1e-6) << ex.name;
    for (double lambda0 : {1.0, 2.5}) {
      double trace = 0.0;
      ex.mu_quadrature([&](const MuNode& m) {
        const auto c = ex.C_hat(m.x, lambda0);
        ASSERT_TRUE(c.has_value()) << ex.name;
        trace += c->rho * m.weight / ex.mu_density(m.x);
      });
      EXPECT_NEAR(trace, lambda0, 1e-6) << ex.name;
    }
  }
}

TEST(AllOracles, FluxAlignsWithPotentialGradient) {
  std::mt19937_64 rng(23);
  for (const auto& ex : all_oracles()) {
    int checked = 0;
    for (int k = 0; k < 10000; ++k) {
      const Point x = ex.sample_support(rng);
      const auto s = ex.sigma(x);
      const auto g = gradient(ex.u_hat, x);
      if (!s || !g) continue;
      EXPECT_NEAR(dot(*s, *g), 1.0, 1e-6) << ex.name << " at " << x.x << ", " << x.y;
      ++checked;
    }
    EXPECT_GT(checked, 9000) << ex.name;
  }
}

TEST(AllOracles, WeakDivergenceIdentity) {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (const auto& ex : all_oracles()) {
    const auto [lo, hi] = ex.domain().bounding_box();
    for (int k = 0; k < 20; ++k) {
      const Point c{0.5 * (lo.x + hi.x) + 0.5 * (hi.x - lo.x) * U(rng),
                    0.5 * (lo.y + hi.y) + 0.5 * (hi.y - lo.y) * U(rng)};
      const double w = 0.4 + 0.2 * (k % 3);
      const auto phi = [&](Point x) { return std::exp(-dot(x - c, x - c) / (2.0 * w * w)); };
      const auto grad_phi = [&](Point x) { return (-phi(x) / (w * w)) * (x - c); };
      double lhs = 0.0;
      ex.mu_quadrature([&](const MuNode& m) { lhs += m.weight * dot(m.sigma, grad_phi(m.x)); });
      EXPECT_NEAR(lhs, pair(ex.Q, phi), 1e-6) << ex.name << " bump " << k;
    }
  }
}
