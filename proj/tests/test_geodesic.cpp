#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include <kstab/geodesic.hpp>

using namespace kstab;

namespace {

std::shared_ptr<const PolytopeGrid> grid(const char* name, int m) {
  return std::make_shared<const PolytopeGrid>(registry(name), m);
}

const char* kNames[] = {"P1", "P2", "P1xP1", "Bl1P2", "Bl2P2"};

}  // namespace

TEST(Geodesic, DistanceBetweenConstants) {
  auto g = grid("P2", 8);
  const Field a = Field::Zero(g->size()), b = Field::Constant(g->size(), -1.5);
  for (double p : {1.0, 2.0, 3.5}) EXPECT_NEAR(dp_distance(*g, a, b, p), 1.5, 1e-14);
  EXPECT_THROW(dp_distance(*g, a, b, 0.5), std::invalid_argument);
  EXPECT_THROW(dp_distance(*g, a, Field::Zero(3), 1), std::invalid_argument);
}

TEST(Geodesic, DistanceOfLinearFunctionOnP1) {
  // d_2(0, y) = sqrt((1/2) int y^2) = 1/sqrt(3); d_1 = 1/2
  auto g = grid("P1", 32);
  const Field y = g->coordinate(0);
  EXPECT_NEAR(dp_distance(*g, Field::Zero(g->size()), y, 2), 1 / std::sqrt(3.0), 1e-14);
  EXPECT_NEAR(dp_distance(*g, Field::Zero(g->size()), y, 1), 0.5, 1e-3);
}

TEST(Geodesic, ConstantSpeedAndTriangleInequality) {
  std::mt19937_64 rng(1);
  for (const char* name : kNames) {
    auto g = grid(name, 12);
    const ToricMetric ref = reference_metric(g);
    const ToricMetric a = perturbed_metric(ref, rng, 0.5), b = perturbed_metric(ref, rng, 0.5);
    const ToricMetric c = perturbed_metric(ref, rng, 0.5);
    for (double p : {1.0, 2.0, 3.0}) {
      const double d = dp_distance(a, b, p);
      for (double s : {0.25, 0.5, 0.75}) {
        EXPECT_NEAR(dp_distance(a, segment(a, b, s), p), s * d, 1e-12);
        EXPECT_NEAR(dp_distance(segment(a, b, s), b, p), (1 - s) * d, 1e-12);
      }
      EXPECT_LE(dp_distance(a, c, p), dp_distance(a, b, p) + dp_distance(b, c, p) + 1e-12);
    }
  }
}

TEST(Geodesic, SegmentsOfConvexPotentialsAreConvex) {
  std::mt19937_64 rng(2);
  auto g = grid("Bl2P2", 12);
  const ToricMetric ref = reference_metric(g);
  const SymplecticPath path = geodesic_segment(perturbed_metric(ref, rng, 0.5), perturbed_metric(ref, rng, 0.5));
  EXPECT_TRUE(path.convex());
  EXPECT_TRUE(discretely_convex(*g, g->guillemin()));
  EXPECT_FALSE(discretely_convex(*g, g->evaluate([](const double* y) { return -y[0] * y[0]; })));
}

TEST(Geodesic, DHMeasureOfAConstantIsAPointMass) {
  auto g = grid("P1xP1", 10);
  const DHMeasure dh = dh_measure(*g, Field::Constant(g->size(), 0.75));
  EXPECT_NEAR(dh.total_mass(), 1, 1e-14);
  EXPECT_NEAR(dh.mean(), -0.75, 1e-14);
  EXPECT_NEAR(dh.moment(2), 0.5625, 1e-14);
  EXPECT_NEAR(virtual_slope_F(dh), -0.75, 1e-14);  // F(c) = -log avg e^c
}

TEST(Geodesic, DHMeasureMomentsAreNodalIntegrals) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> N(0, 1);
  auto g = grid("Bl1P2", 16);
  Field d(g->size());
  for (auto& x : d) x = N(rng);
  const DHMeasure dh = dh_measure(*g, d, 64);
  EXPECT_NEAR(dh.mean(), -g->mean(d), 1e-13);
  EXPECT_NEAR(dh.moment(2), g->mean(d.cwiseProduct(d)), 1e-13);
  const Field e = d.array().exp().matrix();
  EXPECT_NEAR(virtual_slope_F(dh), -std::log(g->mean(e)), 1e-13);
  double binned = 0;
  for (const auto& [c, m] : dh.bins) binned += m;
  EXPECT_NEAR(binned, 1, 1e-13);
  std::ostringstream os;
  write_dh_csv(os, dh);
  EXPECT_EQ(os.str().rfind("lambda,mass\n", 0), 0u);
}

// For u >= v >= w the powered margin is superadditivity of x^p on each node.
TEST(Geodesic, LidskiiMargins) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> U(0, 1);
  for (const char* name : kNames) {
    auto g = grid(name, 10);
    for (int t = 0; t < 10; ++t) {
      Field w(g->size()), v(g->size()), u(g->size());
      for (std::size_t i = 0; i < g->size(); ++i) {
        w[i] = U(rng);
        v[i] = w[i] + U(rng);
        u[i] = v[i] + U(rng);
      }
      EXPECT_GE(lidskii_check(*g, u, v, w, 1), -1e-12);
      EXPECT_NEAR(lidskii_check(*g, u, v, w, 1), 0, 1e-12);
      EXPECT_GE(lidskii_check(*g, u, v, w, 2), -1e-12);
      EXPECT_GE(lidskii_check(*g, u, v, w, 2.5), -1e-12);
      EXPECT_THROW(lidskii_check(*g, w, v, u, 2), OrderViolated);
    }
  }
}

TEST(Geodesic, RayFromSyntheticTrace) {
  // u_t = u_0 + t g + (1 - e^{-t}) k: the Richardson quotient recovers g up to e^{-t}/t terms
  auto g = grid("P2", 8);
  const ToricMetric M0 = reference_metric(g);
  const Field dir = g->evaluate([](const double* y) { return 0.3 * y[0] - 0.1 * y[1] * y[1]; });
  const Field k = g->evaluate([](const double* y) { return y[0] * y[1]; });
  FlowTrace tr;
  tr.initial = M0;
  for (double t : {4.0, 8.0, 16.0, 32.0, 64.0}) tr.snapshots.emplace_back(t, ToricMetric{g, M0.v + t * dir + (1 - std::exp(-t)) * k});
  const SymplecticPath ray = ray_from_flow(tr);
  EXPECT_LT((ray.direction - dir).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(ray.cauchy, 1e-4);
  EXPECT_DOUBLE_EQ(ray.t_max, 64.0);
}

TEST(Geodesic, RayErrors) {
  auto g = grid("P1", 8);
  const ToricMetric M0 = reference_metric(g);
  FlowTrace tr;
  tr.initial = M0;
  for (double t : {1.0, 2.0}) tr.snapshots.emplace_back(t, M0);
  EXPECT_THROW(ray_from_flow(tr), TooFewSamples);
  // oscillating snapshots have no limit direction
  tr.snapshots.clear();
  const Field y = g->coordinate(0);
  for (int j = 0; j < 5; ++j) {
    const double t = std::ldexp(1.0, j);
    tr.snapshots.emplace_back(t, ToricMetric{g, M0.v + (j % 2 ? t : -t) * y});
  }
  EXPECT_THROW(ray_from_flow(tr), NotCauchy);
}

// Along u_b + t f with f affine, phi_t(x) = phi_b(x - t a) - t b exactly, so L has slope -b.
TEST(Geodesic, RadialEnergiesOfAnAffineRay) {
  for (const char* name : {"P1", "Bl1P2"}) {
    auto g = grid(name, std::string(name) == "P1" ? 64 : 16);
    const ToricMetric ref = reference_metric(g);
    const PLConvex f = g->dim() == 1 ? PLConvex::from_doubles(1, {{0.5, 0.25}}) : PLConvex::from_doubles(2, {{0.5, -0.25, 0.25}});
    SymplecticPath ray{ref, g->evaluate([&](const double* y) { return f(y); }), 0, 8, 0};
    const RadialReport r = radial_energies(ray, ref, {1, 2, 3, 4, 6, 8});
    EXPECT_NEAR(r.slope_L, -0.25, 1e-6) << name;
    EXPECT_NEAR(r.slope_E, -g->mean(ray.direction), 1e-14) << name;
    EXPECT_NEAR(r.slope_D, r.slope_L - r.slope_E, 1e-14) << name;
    EXPECT_GE(r.min_second_difference_D, -1e-6) << name;
  }
}

TEST(Geodesic, LnaOracleForAKinkedFunction) {
  auto g = grid("P1", 64);
  const PLConvex f = PLConvex::from_doubles(1, {{-1, 0.2}, {0.5, 0}});
  EXPECT_NEAR(lna_oracle(f, reference_metric(g)), -0.2, 0.02 * 0.2);
}

TEST(Geodesic, RadialInputValidation) {
  auto g = grid("P1", 16);
  const ToricMetric ref = reference_metric(g);
  SymplecticPath ray{ref, g->coordinate(0), 0, 1, 0};
  EXPECT_THROW(radial_energies(ray, ref, {1, 2}), TooFewSamples);
  EXPECT_THROW(radial_energies(ray, ref, {1, 3, 2}), std::invalid_argument);
}
