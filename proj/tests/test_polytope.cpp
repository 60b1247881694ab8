#include <gtest/gtest.h>

#include <kstab/polytope.hpp>

using namespace kstab;

namespace {

// Shoelace area of the vertex list, an oracle independent of the facet walk.
Rational shoelace(const Polytope& P) {
  Rational s = 0;
  const auto& v = P.vertices;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto& a = v[i];
    const auto& b = v[(i + 1) % v.size()];
    s += a[0] * b[1] - a[1] * b[0];
  }
  return s / 2;
}

}  // namespace

TEST(Polytope, RegistryVolumes) {
  EXPECT_EQ(registry("P1").volume, Rational(2));
  EXPECT_EQ(registry("P2").volume, Rational(9, 2));
  EXPECT_EQ(registry("P1xP1").volume, Rational(4));
  EXPECT_EQ(registry("Bl1P2").volume, Rational(4));
  EXPECT_EQ(registry("Bl2P2").volume, Rational(7, 2));
}

TEST(Polytope, VolumeMatchesShoelace) {
  for (const char* name : {"P2", "P1xP1", "Bl1P2", "Bl2P2"}) {
    const Polytope P = registry(name);
    EXPECT_EQ(P.volume, shoelace(P)) << name;
  }
}

TEST(Polytope, Bl1P2Geometry) {
  const Polytope P = registry("Bl1P2");
  ASSERT_EQ(P.vertices.size(), 4u);
  EXPECT_EQ(P.barycenter[0], Rational(1, 12));
  EXPECT_EQ(P.barycenter[1], Rational(1, 12));
}

TEST(Polytope, SymmetricPolytopesHaveZeroBarycenter) {
  for (const char* name : {"P1", "P2", "P1xP1"}) {
    const Polytope P = registry(name);
    for (const auto& c : P.barycenter) EXPECT_EQ(c, Rational(0)) << name;
  }
}

TEST(Polytope, SecondMomentsOfSquare) {
  // int_{[-1,1]^2} x^2 = 4/3, xy integrates to 0
  const Polytope P = registry("P1xP1");
  EXPECT_EQ(P.second_moments[0], Rational(4, 3));
  EXPECT_EQ(P.second_moments[1], Rational(0));
  EXPECT_EQ(P.second_moments[3], Rational(4, 3));
}

TEST(Polytope, CovarianceIsPositiveDefinite) {
  for (const char* name : {"P2", "P1xP1", "Bl1P2", "Bl2P2"}) {
    const auto c = registry(name).covariance_d();
    EXPECT_GT(c[0], 0);
    EXPECT_GT(c[0] * c[3] - c[1] * c[2], 0);
    EXPECT_DOUBLE_EQ(c[1], c[2]);
  }
}

// Reflexive polygons have one interior point, so Pick gives L(k) = A k^2 + A k + 1.
TEST(Polytope, EhrhartCountsOfReflexivePolygons) {
  for (const char* name : {"P2", "P1xP1", "Bl1P2", "Bl2P2"}) {
    const Polytope P = registry(name);
    for (long long k = 1; k <= 6; ++k) {
      const Rational expect = P.volume * k * k + P.volume * k + 1;
      EXPECT_EQ(Rational(static_cast<long long>(lattice_points(P, k).size())), expect) << name << " k=" << k;
    }
  }
  for (long long k = 1; k <= 6; ++k) EXPECT_EQ(lattice_points(registry("P1"), k).size(), static_cast<std::size_t>(2 * k + 1));
}

TEST(Polytope, ContainsAndFacetDistance) {
  const Polytope P = registry("P2");
  const double in[2] = {0.5, 0.5}, out[2] = {1.5, 1.0};
  EXPECT_TRUE(P.contains(in));
  EXPECT_FALSE(P.contains(out));
  const double origin[2] = {0, 0};
  for (std::size_t i = 0; i < P.num_facets(); ++i) EXPECT_DOUBLE_EQ(P.ell(i, origin), 1.0);
}

TEST(Polytope, Errors) {
  EXPECT_THROW(registry("dP9"), PolytopeError);
  try {
    from_facets({{1, 0}, {0, 1}});
    FAIL();
  } catch (const PolytopeError& e) {
    EXPECT_EQ(e.kind, PolytopeError::Unbounded);
  }
  try {
    from_facets({{-1, -2}, {-2, -1}, {1, 1}});
    FAIL();
  } catch (const PolytopeError& e) {
    EXPECT_EQ(e.kind, PolytopeError::NonReflexive);
  }
  EXPECT_THROW(from_facets({{1}}), PolytopeError);
  EXPECT_THROW(lattice_points(registry("P1"), 0), std::invalid_argument);
}

TEST(Polytope, QuadratureIsExactForQuadratics) {
  for (const char* name : {"P1", "P2", "P1xP1", "Bl1P2", "Bl2P2"}) {
    const Polytope P = registry(name);
    for (int m : {4, 10}) {
      const Quadrature Q = quadrature(P, m);
      std::vector<double> one, x, xx, xy;
      for (const auto& y : Q.nodes) {
        one.push_back(1);
        x.push_back(y[0]);
        xx.push_back(y[0] * y[0]);
        xy.push_back(y[0] * y[1]);
      }
      const double V = P.volume_d();
      EXPECT_NEAR(Q.integrate(one), V, 1e-12) << name;
      EXPECT_NEAR(Q.integrate(x), V * to_double(P.barycenter[0]), 1e-12) << name;
      EXPECT_NEAR(Q.integrate(xx), to_double(P.second_moments[0]), 1e-12) << name;
      if (P.dim == 2) EXPECT_NEAR(Q.integrate(xy), to_double(P.second_moments[1]), 1e-12) << name;
    }
  }
}
