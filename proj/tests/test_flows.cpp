#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include <kstab/flows.hpp>

using namespace kstab;

namespace {

std::shared_ptr<const PolytopeGrid> grid(const char* name, int m) {
  return std::make_shared<const PolytopeGrid>(registry(name), m);
}

// b^T Sigma^{-1} b in exact arithmetic for a polygon (b barycenter, Sigma covariance).
Rational mahalanobis_sq(const Polytope& P) {
  const Rational V = P.volume;
  const auto& m = P.second_moments;
  const auto& b = P.barycenter;
  const Rational s00 = m[0] / V - b[0] * b[0], s01 = m[1] / V - b[0] * b[1], s11 = m[3] / V - b[1] * b[1];
  const Rational det = s00 * s11 - s01 * s01;
  return (s11 * b[0] * b[0] - 2 * s01 * b[0] * b[1] + s00 * b[1] * b[1]) / det;
}

}  // namespace

TEST(Flows, Bl1P2SolitonValue) {
  EXPECT_EQ(mahalanobis_sq(registry("Bl1P2")), Rational(1, 11));
}

// The Ricci-Calabi functional along the inverse MA flow decreases to the squared
// optimal affine ratio, b^T Sigma^{-1} b.
TEST(Flows, InverseMALimitOnBl1P2) {
  FlowConfig fc;
  fc.t_max = 64;
  const FlowTrace tr = run(reference_metric(grid("Bl1P2", 22)), fc);
  EXPECT_NEAR(tr.reports.back().ricci_calabi, 1.0 / 11, 1e-6);
  for (const auto& m : monotonicity_report(tr)) EXPECT_LE(m.max_violation, 1e-9) << m.monitor;
}

TEST(Flows, InverseMAConservesE) {
  std::mt19937_64 rng(1);
  auto g = grid("Bl2P2", 16);
  FlowConfig fc;
  fc.t_max = 8;
  const FlowTrace tr = run(perturbed_metric(reference_metric(g), rng, 0.5), fc);
  for (const auto& r : tr.reports) EXPECT_NEAR(r.E, 0, 1e-12);
}

TEST(Flows, KahlerRicciFlowReachesKahlerEinsteinOnP2) {
  std::mt19937_64 rng(2);
  FlowConfig fc;
  fc.kind = FlowKind::KahlerRicci;
  fc.t_max = 32;
  const FlowTrace tr = run(perturbed_metric(reference_metric(grid("P2", 16)), rng, 0.5), fc);
  EXPECT_LT(tr.reports.back().h_functional, 1e-8);
  EXPECT_GT(tr.reports.front().h_functional, 1e-3);
  for (const auto& m : monotonicity_report(tr)) EXPECT_LE(m.max_violation, 1e-9) << m.monitor;
}

TEST(Flows, SnapshotsAtPowersOfTwo) {
  FlowConfig fc;
  fc.t_max = 16;
  const FlowTrace tr = run(reference_metric(grid("P1", 16)), fc);
  ASSERT_EQ(tr.snapshots.size(), 5u);
  for (std::size_t j = 0; j < 5; ++j) EXPECT_DOUBLE_EQ(tr.snapshots[j].first, std::ldexp(1.0, static_cast<int>(j)));
  EXPECT_DOUBLE_EQ(tr.times.back(), 16);
  EXPECT_EQ(tr.stop_reason, "t_max");
}

TEST(Flows, StopsAtTolerance) {
  FlowConfig fc;
  fc.stop_tol = 1e-4;
  const FlowTrace tr = run(reference_metric(grid("P2", 12)), fc);
  EXPECT_EQ(tr.stop_reason, "converged");
  EXPECT_LT(tr.reports.back().ricci_calabi, 1e-4);
}

TEST(Flows, StepIsReversibleToSecondOrder) {
  std::mt19937_64 rng(3);
  const ToricMetric M = perturbed_metric(reference_metric(grid("P1xP1", 12)), rng, 0.3);
  double prev = 0;
  for (double dt : {2e-4, 1e-4}) {
    const ToricMetric back = step(step(M, FlowKind::InverseMA, dt), FlowKind::InverseMA, -dt);
    const double err = (back.v - M.v).cwiseAbs().maxCoeff();
    if (prev > 0) EXPECT_NEAR(prev / err, 4.0, 0.5);
    prev = err;
  }
}

TEST(Flows, StepFailedWhenNoStepIsAccepted) {
  FlowConfig fc;
  fc.dt_init = 10;
  fc.dt_max = 10;
  fc.max_update = 1e-12;
  fc.max_halvings = 0;
  std::mt19937_64 rng(4);
  const ToricMetric M = perturbed_metric(reference_metric(grid("P2", 8)), rng, 0.5);
  EXPECT_THROW(run(M, fc), StepFailed);
}

TEST(Flows, ConfigValidation) {
  FlowConfig fc;
  fc.dt_init = 0;
  EXPECT_THROW(fc.validate(), std::invalid_argument);
  fc = FlowConfig{};
  fc.dt_control = 2;
  EXPECT_THROW(fc.validate(), std::invalid_argument);
  fc = FlowConfig{};
  fc.t_max = -1;
  EXPECT_THROW(fc.validate(), std::invalid_argument);
}

TEST(Flows, DissipationIdentity) {
  std::mt19937_64 rng(5);
  auto g = grid("Bl1P2", 12);
  const ToricMetric M = perturbed_metric(reference_metric(g), rng, 0.5);
  const auto [lhs, rhs] = dissipation_identity(M);
  EXPECT_NEAR(lhs, rhs, 1e-14);
  EXPECT_NEAR(lhs, energies(M, M).ricci_calabi, 1e-14);
}

TEST(Flows, SlopeEstimateOnLinearData) {
  std::vector<double> t, v;
  for (int i = 0; i <= 100; ++i) {
    t.push_back(i);
    v.push_back(3 - 0.25 * i + (i % 2 ? 1e-3 : -1e-3));
  }
  const SlopeEstimate e = slope_estimate(t, v, 0.5);
  EXPECT_NEAR(e.slope, -0.25, 1e-4);
  EXPECT_FALSE(e.unstable);
  EXPECT_THROW(slope_estimate(t, v, 0.05), TooFewSamples);
  EXPECT_THROW(slope_estimate({}, {}, 0.5), TooFewSamples);
}

TEST(Flows, MonotonicityReportMeasuresIncrease) {
  FlowTrace tr;
  tr.kind = FlowKind::InverseMA;
  for (double D : {0.0, -1.0, -0.75, -2.0}) {
    EnergyReport r;
    r.D = D;
    tr.reports.push_back(r);
  }
  for (const auto& m : monotonicity_report(tr))
    if (m.monitor == "D_nonincreasing") EXPECT_DOUBLE_EQ(m.max_violation, 0.25);
  EXPECT_THROW(monotonicity_report(FlowTrace{}), std::invalid_argument);
}

TEST(Flows, LinearBoundAndCsv) {
  FlowConfig fc;
  fc.t_max = 4;
  const FlowTrace tr = run(reference_metric(grid("Bl1P2", 8)), fc);
  const double A = linear_bound_constant(tr);
  for (std::size_t i = 0; i < tr.times.size(); ++i) EXPECT_LE(tr.sup_phi[i], tr.times[i] + A + 1e-15);
  std::ostringstream os;
  write_trace_csv(os, tr);
  const std::string s = os.str();
  EXPECT_EQ(s.rfind("t,E,L,D,R,M,H,sup_phi,dt\n", 0), 0u);
  EXPECT_EQ(static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')), tr.times.size() + 1);
}
