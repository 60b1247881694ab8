#include <gtest/gtest.h>

#include <random>

#include <kstab/na.hpp>
#include <kstab/optimize.hpp>

using namespace kstab;

namespace {

Rational q(long long p, long long d = 1) { return Rational(p, d); }

const char* kNames[] = {"P1", "P2", "P1xP1", "Bl1P2", "Bl2P2"};

struct MonteCarlo {
  double mean = 0, norm1 = 0, norm15 = 0, norm2 = 0, F = 0;
  double sd = 0;  // standard deviation of f under the uniform measure
  long n = 0;
};

// Rejection sampling from the bounding box of P.
MonteCarlo monte_carlo(const PLConvex& f, const Polytope& P, long samples, unsigned seed) {
  double lo[2] = {1e300, 1e300}, hi[2] = {-1e300, -1e300};
  for (const auto& v : P.vertices)
    for (int d = 0; d < P.dim; ++d) {
      lo[d] = std::min(lo[d], to_double(v[d]));
      hi[d] = std::max(hi[d], to_double(v[d]));
    }
  std::mt19937_64 rng(seed);
  std::vector<double> vals;
  for (long i = 0; i < samples; ++i) {
    double y[2] = {0, 0};
    for (int d = 0; d < P.dim; ++d) y[d] = std::uniform_real_distribution<double>(lo[d], hi[d])(rng);
    if (P.contains(y)) vals.push_back(f(y));
  }
  MonteCarlo mc;
  mc.n = static_cast<long>(vals.size());
  double se = 0;
  for (double v : vals) {
    mc.mean += v;
    se += std::exp(v);
  }
  mc.mean /= mc.n;
  mc.F = -std::log(se / mc.n);
  for (double v : vals) {
    mc.norm1 += std::abs(v - mc.mean);
    mc.norm15 += std::pow(std::abs(v - mc.mean), 1.5);
    mc.norm2 += (v - mc.mean) * (v - mc.mean);
  }
  mc.norm1 /= mc.n;
  mc.norm15 = std::pow(mc.norm15 / mc.n, 1 / 1.5);
  mc.sd = std::sqrt(mc.norm2 / mc.n);
  mc.norm2 = mc.sd;
  return mc;
}

}  // namespace

TEST(NA, P1KinkAtOrigin) {
  // f = max(0, y): mean 1/4, E[f^2] = 1/6, (1/2) int e^f = (e - 1 + 1)/2 = e/2
  const PLConvex f = PLConvex::from_rationals(1, {{q(0), q(0)}, {q(1), q(0)}});
  const NAReport r = na_report(f, registry("P1"));
  EXPECT_NEAR(r.ena, -0.25, 1e-15);
  EXPECT_NEAR(r.lna, 0, 1e-15);
  EXPECT_NEAR(r.dna, 0.25, 1e-15);
  EXPECT_NEAR(r.norm_p.at(2.0), std::sqrt(1.0 / 6 - 1.0 / 16), 1e-14);
  EXPECT_NEAR(r.norm_p.at(1.0), 0.28125, 1e-14);  // (1/2)[int_{-1}^0 1/4 + int_0^1 |y - 1/4|]
  EXPECT_NEAR(r.F, -std::log(std::exp(1.0) / 2), 1e-14);
  EXPECT_NEAR(r.h_invariant, r.F, 1e-15);
}

TEST(NA, AffineOnBl1P2) {
  const Polytope P = registry("Bl1P2");
  const PLConvex f = PLConvex::from_rationals(2, {{q(-1), q(-1), q(0)}});
  EXPECT_EQ(pl_mean_exact(f, P), Rational(-1, 6));
  EXPECT_NEAR(na_report(f, P).dna, -1.0 / 6, 1e-15);
  // the optimal affine ratio sqrt(b^T Sigma^{-1} b) = 1/sqrt(11), attained at a = -Sigma^{-1} b ~ (-1,-1)
  EXPECT_NEAR(ratio(f, P), 1 / std::sqrt(11.0), 1e-12);
}

TEST(NA, MatchesMonteCarlo) {
  const Polytope P = registry("Bl1P2");
  const PLConvex f = PLConvex::from_doubles(2, {{0.3, -0.2, 0.1}, {-0.5, 0.7, 0.0}, {1.1, 0.4, -0.3}});
  const NAReport r = na_report(f, P, {1, 1.5, 2});
  const MonteCarlo mc = monte_carlo(f, P, 2000000, 11);
  // 5 standard errors, sd / sqrt(n) about 4e-4 here
  const double se = 5 * mc.sd / std::sqrt(static_cast<double>(mc.n));
  EXPECT_NEAR(r.mean, mc.mean, se);
  EXPECT_NEAR(r.norm_p.at(1.0), mc.norm1, se);
  EXPECT_NEAR(r.norm_p.at(1.5), mc.norm15, se);
  EXPECT_NEAR(r.norm_p.at(2.0), mc.norm2, se);
  EXPECT_NEAR(r.F, mc.F, 2 * se);
}

TEST(NA, RandomFunctionsMatchMonteCarloOnEveryPolytope) {
  std::mt19937_64 rng(12);
  for (const char* name : kNames) {
    const Polytope P = registry(name);
    const PLConvex f = random_plconvex(P.dim, rng, 4);
    const NAReport r = na_report(f, P, {2});
    const MonteCarlo mc = monte_carlo(f, P, 400000, 13);
    const double se = 5 * mc.sd / std::sqrt(static_cast<double>(mc.n));
    EXPECT_NEAR(r.mean, mc.mean, se) << name;
    EXPECT_NEAR(r.norm_p.at(2.0), mc.norm2, se) << name;
  }
}

TEST(NA, ExactAndFloatingMeansAgree) {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> I(-3, 3), B(-4, 4);
  for (const char* name : kNames) {
    const Polytope P = registry(name);
    for (int t = 0; t < 10; ++t) {
      std::vector<std::vector<Rational>> rows;
      for (int k = 0; k < 3; ++k) {
        std::vector<Rational> row;
        for (int d = 0; d < P.dim; ++d) row.push_back(q(I(rng)));
        row.push_back(q(B(rng), 4));
        rows.push_back(row);
      }
      const PLConvex f = PLConvex::from_rationals(P.dim, rows);
      EXPECT_NEAR(to_double(pl_mean_exact(f, P)), pl_mean(f, P), 1e-12) << name;
    }
  }
}

TEST(NA, CellsPartitionThePolytope) {
  std::mt19937_64 rng(14);
  for (const char* name : {"P2", "P1xP1", "Bl1P2", "Bl2P2"}) {
    const Polytope P = registry(name);
    for (int t = 0; t < 10; ++t) {
      const PLConvex f = random_plconvex(2, rng, 5);
      double area = 0;
      for (const auto& c : cells(f, P)) {
        double s = 0;
        for (std::size_t i = 0; i < c.poly.size(); ++i) {
          const auto& a = c.poly[i];
          const auto& b = c.poly[(i + 1) % c.poly.size()];
          s += a[0] * b[1] - a[1] * b[0];
        }
        area += 0.5 * s;
      }
      EXPECT_NEAR(area, P.volume_d(), 1e-12) << name;
    }
  }
}

TEST(NA, PrunedDropsInactivePieces) {
  const Polytope P = registry("P1");
  const PLConvex f = PLConvex::from_doubles(1, {{0, 0}, {1, 0}, {0, -5}, {1, 0}});
  const PLConvex g = pruned(f, P);
  EXPECT_EQ(g.pieces(), 2u);
  for (double y : {-0.9, -0.1, 0.3, 0.95}) EXPECT_DOUBLE_EQ(f(&y), g(&y));
}

TEST(NA, ExpDividedDifferences) {
  // [z0, z1] e = (e^z1 - e^z0)/(z1 - z0); repeated nodes give e^z / k!
  EXPECT_NEAR(detail::exp_dd({0.3, 1.7}), (std::exp(1.7) - std::exp(0.3)) / 1.4, 1e-14);
  EXPECT_NEAR(detail::exp_dd({0.5, 0.5, 0.5}), std::exp(0.5) / 2, 1e-14);
  const double a = -2, b = 0.1, c = 3;
  const double expect = ((std::exp(c) - std::exp(b)) / (c - b) - (std::exp(b) - std::exp(a)) / (b - a)) / (c - a);
  EXPECT_NEAR(detail::exp_dd({a, b, c}), expect, 1e-13);
  EXPECT_NEAR(detail::exp_dd({1.0, 1.0 + 1e-9}), std::exp(1.0), 1e-8);
}

TEST(NA, LogMeanExpScalesAndShifts) {
  const Polytope P = registry("Bl2P2");
  std::mt19937_64 rng(15);
  const PLConvex f = random_plconvex(2, rng, 3);
  PLConvex g = f;
  for (auto& b : g.b) b += 0.7;
  EXPECT_NEAR(pl_log_mean_exp(g, P), pl_log_mean_exp(f, P) + 0.7, 1e-13);
  EXPECT_NEAR(pl_log_mean_exp(f, P, 1e-9) / 1e-9, pl_mean(f, P), 1e-6);
}

// Jensen: -log avg e^f <= -avg f, so h = f(0) + F <= f(0) - avg f = -dna.
TEST(NA, HInvariantBoundedByMinusDna) {
  std::mt19937_64 rng(16);
  for (const char* name : kNames) {
    const Polytope P = registry(name);
    for (int t = 0; t < 50; ++t) {
      const NAReport r = na_report(random_plconvex(P.dim, rng, 4), P, {2});
      EXPECT_LE(r.h_invariant, -r.dna + 1e-10) << name;
    }
  }
}

// Barycenter zero: D^NA >= 0 (Jensen, f(0) <= avg f for convex f) and invariance under affine changes.
TEST(NA, SemistablePolytopes) {
  std::mt19937_64 rng(17);
  for (const char* name : {"P1", "P2", "P1xP1"}) {
    const Polytope P = registry(name);
    for (int t = 0; t < 50; ++t) {
      PLConvex f = random_plconvex(P.dim, rng, 4);
      const NAReport r = na_report(f, P, {2});
      EXPECT_GE(r.dna, -1e-12) << name;
      EXPECT_LE(r.h_invariant, 1e-12) << name;
      for (std::size_t j = 0; j < f.pieces(); ++j) {
        f.a[j][0] += 0.8;
        f.b[j] -= 0.3;
      }
      EXPECT_NEAR(na_report(f, P, {2}).dna, r.dna, 1e-12) << name;
    }
  }
}

TEST(NA, RatioIsScaleAndTranslationInvariant) {
  std::mt19937_64 rng(18);
  const Polytope P = registry("Bl2P2");
  for (int t = 0; t < 20; ++t) {
    const PLConvex f = random_plconvex(2, rng, 4);
    PLConvex g = f;
    for (std::size_t j = 0; j < g.pieces(); ++j) {
      g.a[j] = {3 * g.a[j][0], 3 * g.a[j][1]};
      g.b[j] = 3 * g.b[j] + 1.25;
    }
    EXPECT_NEAR(ratio(f, P), ratio(g, P), 1e-10);
  }
  EXPECT_THROW(ratio(PLConvex::from_doubles(2, {{0, 0, 0.5}}), P), TrivialConfiguration);
}

TEST(NA, LatticeOracleConvergesAsOneOverK) {
  const Polytope P = registry("Bl1P2");
  const PLConvex f = PLConvex::from_rationals(2, {{q(0), q(0), q(0)}, {q(-1), q(0), q(0)}, {q(0), q(-1), q(0)}});
  const NAReport r = na_report(f, P);
  std::vector<double> C;
  for (long long k : {25, 50, 100, 200}) {
    const LatticeOracle o = lattice_oracle(f, P, k);
    EXPECT_EQ(o.N_k, static_cast<long long>(4 * k * k + 4 * k + 1));
    C.push_back(k * std::abs(o.ena_k - r.ena));
  }
  for (std::size_t i = 1; i < C.size(); ++i) EXPECT_NEAR(C[i] / C[i - 1], 1.0, 0.05);
}

TEST(NA, LatticeOracleRejectsBadInput) {
  const Polytope P = registry("P1");
  EXPECT_THROW(lattice_oracle(PLConvex::from_doubles(1, {{0.5, 0}}), P, 10), DenominatorMismatch);
  EXPECT_THROW(lattice_oracle(PLConvex::from_rationals(1, {{q(1, 2), q(0)}}), P, 10), DenominatorMismatch);
  EXPECT_THROW(lattice_oracle(PLConvex::from_rationals(1, {{q(1), q(1, 3)}}), P, 10), DenominatorMismatch);
  EXPECT_NO_THROW(lattice_oracle(PLConvex::from_rationals(1, {{q(1), q(1, 3)}}), P, 9));
}

TEST(NA, AbsoluteMomentsForNonIntegerPowers) {
  // p = 2 via the exact formula and p = 2 + 1e-9 via quadrature agree
  const Polytope P = registry("P2");
  std::mt19937_64 rng(19);
  const PLConvex f = random_plconvex(2, rng, 3);
  const double m = pl_mean(f, P);
  EXPECT_NEAR(pl_abs_moment(f, P, m, 2), pl_abs_moment(f, P, m, 2 + 1e-9), 1e-7);
}

TEST(NA, ConstructionErrors) {
  EXPECT_THROW(PLConvex::from_doubles(2, {}), std::invalid_argument);
  EXPECT_THROW(PLConvex::from_doubles(2, {{1, 2}}), std::invalid_argument);
}
