#include <gtest/gtest.h>

#include <kstab/grid.hpp>

using namespace kstab;

namespace {

const char* kNames[] = {"P1", "P2", "P1xP1", "Bl1P2", "Bl2P2"};

Field quadratic(const PolytopeGrid& g, double c0, double c1, double c2, double c11, double c22, double c12) {
  return g.evaluate([&](const double* y) {
    const double b = g.dim() == 2 ? y[1] : 0;
    return c0 + c1 * y[0] + c2 * b + c11 * y[0] * y[0] + c22 * b * b + c12 * y[0] * b;
  });
}

}  // namespace

TEST(Grid, ResolutionIsRoundedUpToEven) {
  PolytopeGrid g(registry("P1"), 7);
  EXPECT_EQ(g.resolution(), 8);
  EXPECT_EQ(g.size(), 17u);
  EXPECT_DOUBLE_EQ(g.h(), 0.125);
}

TEST(Grid, NodeCountMatchesLatticePoints) {
  // nodes of the grid at resolution m are the lattice points of mP
  for (const char* name : kNames) {
    const Polytope P = registry(name);
    PolytopeGrid g(P, 6);
    EXPECT_EQ(g.size(), lattice_points(P, 6).size()) << name;
    ASSERT_GE(g.origin(), 0);
    EXPECT_EQ(g.node(g.origin()).y[0], 0.0);
  }
}

TEST(Grid, WeightsIntegrateQuadraticsExactly) {
  for (const char* name : kNames) {
    const Polytope P = registry(name);
    PolytopeGrid g(P, 12);
    const double V = P.volume_d();
    EXPECT_NEAR(g.integrate(Field::Ones(g.size())), V, 1e-12) << name;
    EXPECT_NEAR(g.integrate(g.coordinate(0)), V * to_double(P.barycenter[0]), 1e-12) << name;
    EXPECT_NEAR(g.integrate(quadratic(g, 0, 0, 0, 1, 0, 0)), to_double(P.second_moments[0]), 1e-12) << name;
    if (P.dim == 2) {
      EXPECT_NEAR(g.integrate(quadratic(g, 0, 0, 0, 0, 0, 1)), to_double(P.second_moments[1]), 1e-12) << name;
      EXPECT_NEAR(g.integrate(quadratic(g, 0, 0, 0, 0, 1, 0)), to_double(P.second_moments[3]), 1e-12) << name;
    }
  }
}

// On a reflexive polytope, div(y f) gives int_dP f dsigma = int_P (n f + y . grad f).
TEST(Grid, BoundaryMeasureSatisfiesDivergenceIdentity) {
  for (const char* name : kNames) {
    const Polytope P = registry(name);
    PolytopeGrid g(P, 10);
    const Field& bw = g.boundary_weights();
    const int n = P.dim;
    EXPECT_NEAR(bw.sum(), n * P.volume_d(), 1e-12) << name;
    EXPECT_NEAR(bw.dot(g.coordinate(0)), (n + 1) * g.integrate(g.coordinate(0)), 1e-12) << name;
    const Field sq = quadratic(g, 0, 0, 0, 1, 0, 0);
    EXPECT_NEAR(bw.dot(sq), (n + 2) * g.integrate(sq), 1e-12) << name;
  }
}

TEST(Grid, StencilsAreExactOnQuadratics) {
  for (const char* name : kNames) {
    PolytopeGrid g(registry(name), 8);
    const Field f = quadratic(g, 0.3, -0.7, 1.1, 0.9, -0.4, 0.6);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const GridNode& nd = g.node(i);
      const double y0 = nd.y[0], y1 = nd.y[1];
      EXPECT_NEAR(nd.grad[0].apply(f), -0.7 + 1.8 * y0 + 0.6 * y1, 1e-9) << name << " node " << i;
      if (g.dim() == 2) EXPECT_NEAR(nd.grad[1].apply(f), 1.1 - 0.8 * y1 + 0.6 * y0, 1e-9) << name << " node " << i;
      if (nd.kind == NodeKind::Interior) {
        if (g.dim() == 1) {
          EXPECT_NEAR(nd.curv[0].apply(f), 1.8, 1e-8);
        } else {
          EXPECT_NEAR(nd.curv[0].apply(f), 1.8, 1e-8) << name;
          EXPECT_NEAR(nd.curv[1].apply(f), -0.8, 1e-8) << name;
          EXPECT_NEAR(nd.curv[2].apply(f), 0.6, 1e-8) << name;
        }
      }
    }
  }
}

TEST(Grid, NodeKindsOnTheSquare) {
  PolytopeGrid g(registry("P1xP1"), 4);
  int vertices = 0, edges = 0;
  for (const auto& nd : g.nodes()) {
    vertices += nd.kind == NodeKind::Vertex;
    edges += nd.kind == NodeKind::Edge;
  }
  EXPECT_EQ(vertices, 4);
  EXPECT_EQ(edges, 4 * 7);
}

TEST(Grid, AffinePartReproducesAffineFields) {
  PolytopeGrid g(registry("Bl2P2"), 10);
  const Field a = quadratic(g, 0.5, -2, 3, 0, 0, 0);
  EXPECT_LT((g.affine_part(a) - a).cwiseAbs().maxCoeff(), 1e-12);
  const Field q = quadratic(g, 0, 0, 0, 1, 1, 0);
  const Field r = q - g.affine_part(q);
  EXPECT_NEAR(g.integrate(r), 0, 1e-12);
  EXPECT_NEAR(g.integrate(r.cwiseProduct(g.coordinate(0))), 0, 1e-12);
  EXPECT_NEAR(g.integrate(r.cwiseProduct(g.coordinate(1))), 0, 1e-12);
}

TEST(Grid, GuilleminPotential) {
  PolytopeGrid g(registry("P1"), 4);
  const Field u = g.guillemin();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double y = g.node(i).y[0];
    const double expect = (1 + y > 0 ? (1 + y) * std::log(1 + y) : 0) + (1 - y > 0 ? (1 - y) * std::log(1 - y) : 0);
    EXPECT_NEAR(u[i], expect, 1e-14);
  }
}
