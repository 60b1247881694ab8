#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "flows.hpp"
#include "metric.hpp"
#include "na.hpp"

namespace kstab {

class NotCauchy : public std::runtime_error {
 public:
  NotCauchy(const std::string& msg, double d) : std::runtime_error(msg), diagnostic(d) {}
  double diagnostic;
};

class OrderViolated : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Second differences along e1, e2, e1 +- e2 are all >= -tol.
inline bool discretely_convex(const PolytopeGrid& g, const Field& u, double tol = 1e-9) {
  static const int dirs[4][2] = {{1, 0}, {0, 1}, {1, 1}, {1, -1}};
  const int nd = g.dim() == 1 ? 1 : 4;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& p = g.node(i).idx;
    for (int k = 0; k < nd; ++k) {
      int a = g.find({p[0] + dirs[k][0], p[1] + dirs[k][1]});
      int b = g.find({p[0] - dirs[k][0], p[1] - dirs[k][1]});
      if (a < 0 || b < 0) continue;
      if (u[a] + u[b] - 2 * u[i] < -tol) return false;
    }
  }
  return true;
}

// u_t = u0 + t g in symplectic coordinates.
struct SymplecticPath {
  ToricMetric start;
  Field direction;
  double t_min = 0, t_max = 1;
  double cauchy = 0;  // diagnostic of the limit extraction, 0 for exact paths

  ToricMetric at(double t) const { return {start.grid, start.v + t * direction}; }
  Field potential(double t) const { return start.symplectic_potential() + t * direction; }

  bool convex() const {
    const PolytopeGrid& g = *start.grid;
    for (double t : {t_min, 0.5 * (t_min + t_max), t_max})
      if (!discretely_convex(g, potential(t), 1e-9 * (1 + std::abs(t)))) return false;
    return true;
  }
};

inline double dp_distance(const PolytopeGrid& g, const Field& u0, const Field& u1, double p) {
  if (!(p >= 1)) throw std::invalid_argument("dp_distance: p must be >= 1");
  if (u0.size() != u1.size() || static_cast<std::size_t>(u0.size()) != g.size())
    throw std::invalid_argument("dp_distance: fields must live on the grid nodes");
  const Field& w = g.weights();
  double s = 0;
  for (std::size_t i = 0; i < g.size(); ++i) s += w[i] * std::pow(std::abs(u1[i] - u0[i]), p);
  return std::pow(s / g.volume(), 1.0 / p);
}

inline double dp_distance(const ToricMetric& a, const ToricMetric& b, double p) {
  return dp_distance(*a.grid, a.v, b.v, p);
}

inline Field segment(const Field& u0, const Field& u1, double s) { return (1 - s) * u0 + s * u1; }

inline ToricMetric segment(const ToricMetric& a, const ToricMetric& b, double s) {
  return {a.grid, segment(a.v, b.v, s)};
}

inline SymplecticPath geodesic_segment(const ToricMetric& a, const ToricMetric& b) {
  return {a, b.v - a.v, 0, 1, 0};
}

// Asymptotic direction of a flow. Difference quotients g_j = (u_{t_j} - u_0)/t_j
// carry an O(1/t_j) bias, removed by combining consecutive snapshots.
inline SymplecticPath ray_from_flow(const FlowTrace& tr) {
  const auto& S = tr.snapshots;
  if (S.size() < 4) throw TooFewSamples("ray_from_flow: need at least 4 snapshots");
  const Field& v0 = tr.initial.v;
  auto quotient = [&](std::size_t j) { return Field((S[j].second.v - v0) / S[j].first); };
  auto extrapolate = [&](std::size_t j) {
    const double a = S[j].first, b = S[j - 1].first;
    return Field((a * quotient(j) - b * quotient(j - 1)) / (a - b));
  };
  const std::size_t J = S.size() - 1;
  SymplecticPath ray;
  ray.start = tr.initial;
  ray.direction = extrapolate(J);
  ray.t_min = 0;
  ray.t_max = S[J].first;
  ray.cauchy = (ray.direction - extrapolate(J - 1)).cwiseAbs().maxCoeff();
  const double scale = ray.direction.cwiseAbs().maxCoeff();
  if (ray.cauchy > 0.1 * scale && ray.cauchy > 1e-3)
    throw NotCauchy("ray_from_flow: direction not resolved at this resolution", ray.cauchy);
  return ray;
}

// Distribution of the Kaehler-side velocity lambda = -g under the normalized
// measure of P.
struct DHMeasure {
  std::vector<double> values, masses;  // raw node samples
  std::vector<std::pair<double, double>> bins;  // (center, mass)
  double lo = 0, hi = 0;

  double total_mass() const {
    double s = 0;
    for (double m : masses) s += m;
    return s;
  }
  double moment(double p) const {
    double s = 0;
    for (std::size_t i = 0; i < values.size(); ++i) s += masses[i] * std::pow(std::abs(values[i]), p);
    return s;
  }
  double mean() const {
    double s = 0;
    for (std::size_t i = 0; i < values.size(); ++i) s += masses[i] * values[i];
    return s;
  }
};

inline DHMeasure dh_measure(const PolytopeGrid& g, const Field& direction, int nbins = 256) {
  DHMeasure dh;
  const Field& w = g.weights();
  const double V = g.volume();
  dh.lo = std::numeric_limits<double>::infinity();
  dh.hi = -dh.lo;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (w[i] == 0) continue;
    const double lam = -direction[i];
    dh.values.push_back(lam);
    dh.masses.push_back(w[i] / V);
    dh.lo = std::min(dh.lo, lam);
    dh.hi = std::max(dh.hi, lam);
  }
  nbins = std::max(nbins, 1);
  const double width = (dh.hi - dh.lo) / nbins;
  dh.bins.resize(nbins);
  for (int b = 0; b < nbins; ++b) dh.bins[b] = {dh.lo + (b + 0.5) * width, 0.0};
  for (std::size_t i = 0; i < dh.values.size(); ++i) {
    int b = width > 0 ? static_cast<int>((dh.values[i] - dh.lo) / width) : 0;
    dh.bins[std::clamp(b, 0, nbins - 1)].second += dh.masses[i];
  }
  return dh;
}

inline void write_dh_csv(std::ostream& os, const DHMeasure& dh) {
  os << "lambda,mass\n";
  os << std::setprecision(17);
  for (const auto& [c, m] : dh.bins) os << c << ',' << m << '\n';
}

// -log int e^{-lambda} dDH, evaluated from the raw samples.
inline double virtual_slope_F(const DHMeasure& dh) {
  double mn = std::numeric_limits<double>::infinity();
  for (double v : dh.values) mn = std::min(mn, v);
  double s = 0;
  for (std::size_t i = 0; i < dh.values.size(); ++i) s += dh.masses[i] * std::exp(-(dh.values[i] - mn));
  return mn - std::log(s);
}

// d_p(u,w)^p - d_p(u,v)^p - d_p(v,w)^p for u >= v >= w.
inline double lidskii_check(const PolytopeGrid& g, const Field& u, const Field& v, const Field& w, double p) {
  for (std::size_t i = 0; i < g.size(); ++i)
    if (u[i] < v[i] - 1e-12 || v[i] < w[i] - 1e-12) throw OrderViolated("lidskii_check: expected u >= v >= w");
  auto dp = [&](const Field& a, const Field& b) { return std::pow(dp_distance(g, a, b, p), p); };
  return dp(u, w) - dp(u, v) - dp(v, w);
}

namespace detail {

// log int_{R^n} e^{-phi(x)} dx for phi the Legendre transform of the
// node values u, by the trapezoid rule on a box large enough that the
// integrand falls below e^{-margin} outside.
inline double log_partition_x(const PolytopeGrid& g, const Field& u, double spacing, double margin) {
  const Polytope& P = g.polytope();
  double r_in = std::numeric_limits<double>::infinity();
  for (const auto& f : P.facets) {
    double n2 = 0;
    for (long long c : f.normal) n2 += double(c) * double(c);
    r_in = std::min(r_in, 1.0 / std::sqrt(n2));
  }
  const int o = g.origin();
  if (o < 0) throw std::invalid_argument("log_partition_x: grid has no origin node");
  // centre the box at a subgradient of u at 0
  std::array<double, 2> x0{0, 0};
  for (int d = 0; d < g.dim(); ++d) {
    std::array<int, 2> e{0, 0};
    e[d] = 1;
    int a = g.find({e[0], e[1]}), b = g.find({-e[0], -e[1]});
    x0[d] = (u[a] - u[b]) / (2 * g.h());
  }
  Field ut(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& y = g.node(i).y;
    ut[i] = u[i] - u[o] - x0[0] * y[0] - (g.dim() == 2 ? x0[1] * y[1] : 0.0);
  }
  const double osc = ut.maxCoeff();
  const double R = (margin + osc) / r_in + 1;
  GridSpec spec;
  spec.nodes_per_axis = std::max(33, 2 * static_cast<int>(std::ceil(R / spacing)) + 1);
  spec.box_radius = spacing * (spec.nodes_per_axis - 1) / 2.0;
  LogPotential L = inverse_legendre(ut, g, spec);
  const double hx = spec.spacing();
  double s = 0;
  const int m = spec.nodes_per_axis;
  for (int a = 0; a < m; ++a) {
    double wa = (a == 0 || a == m - 1) ? 0.5 : 1.0;
    if (g.dim() == 1) {
      s += wa * std::exp(-L.at(a));
      continue;
    }
    for (int b = 0; b < m; ++b) {
      double wb = (b == 0 || b == m - 1) ? 0.5 : 1.0;
      s += wa * wb * std::exp(-L.at(a, b));
    }
  }
  return std::log(s) + g.dim() * std::log(hx) + u[o];
}

}  // namespace detail

struct RadialOptions {
  double spacing = 0.05;  // x-space step of the trapezoid rule
  double margin = 40;     // integrand cutoff e^{-margin}
  double tail_from = 0;   // fit uses samples with t >= tail_from
};

struct RadialReport {
  std::vector<double> t, E, L, D;
  double slope_E = 0, slope_L = 0, slope_D = 0;
  double min_second_difference_D = 0;
};

// Energies along u_t = u0 + t g with L from the Kaehler side. The L slope is a
// least-squares fit on {1, t, log t, 1/t}: kinks of g through the origin add a
// logarithmic term to log int e^{-phi_t}.
inline RadialReport radial_energies(const SymplecticPath& ray, const ToricMetric& baseline, const std::vector<double>& t_samples,
                                    const RadialOptions& opt = {}) {
  if (t_samples.size() < 3) throw TooFewSamples("radial_energies: need at least 3 samples");
  for (std::size_t i = 1; i < t_samples.size(); ++i)
    if (!(t_samples[i] > t_samples[i - 1])) throw std::invalid_argument("radial_energies: t_samples must increase");
  const PolytopeGrid& g = *ray.start.grid;
  const double V = g.volume();
  const Field& w = g.weights();
  const Field ub = baseline.symplectic_potential();
  const double logZb = detail::log_partition_x(g, ub, opt.spacing, opt.margin);
  RadialReport r;
  for (double t : t_samples) {
    const Field u = ray.potential(t);
    r.t.push_back(t);
    r.E.push_back(-w.dot(u - ub) / V);
    r.L.push_back(logZb - detail::log_partition_x(g, u, opt.spacing, opt.margin));
    r.D.push_back(r.L.back() - r.E.back());
  }
  r.slope_E = -w.dot(ray.direction) / V;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < r.t.size(); ++i)
    if (r.t[i] >= opt.tail_from) idx.push_back(i);
  if (idx.size() < 3) throw TooFewSamples("radial_energies: fewer than 3 samples in the fit window");
  const bool use_log = r.t[idx.front()] > 0;
  const int ncol = use_log ? (idx.size() >= 6 ? 4 : 3) : 2;
  Eigen::MatrixXd A(idx.size(), ncol);
  Eigen::VectorXd b(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    A(k, 0) = 1;
    A(k, 1) = r.t[idx[k]];
    if (ncol > 2) A(k, 2) = std::log(r.t[idx[k]]);
    if (ncol > 3) A(k, 3) = 1 / r.t[idx[k]];
    b[k] = r.L[idx[k]];
  }
  Eigen::VectorXd c = A.colPivHouseholderQr().solve(b);
  r.slope_L = c[1];
  r.slope_D = r.slope_L - r.slope_E;
  r.min_second_difference_D = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i + 1 < r.t.size(); ++i) {
    const double h0 = r.t[i] - r.t[i - 1], h1 = r.t[i + 1] - r.t[i];
    const double dd = 2 * ((r.D[i + 1] - r.D[i]) / h1 - (r.D[i] - r.D[i - 1]) / h0) / (h0 + h1);
    r.min_second_difference_D = std::min(r.min_second_difference_D, dd);
  }
  return r;
}

// Tail slope of L along u_t = u_baseline + t f; approximates -f(0).
inline double lna_oracle(const PLConvex& f, const ToricMetric& baseline, const std::vector<double>& t_samples = {4, 8, 12, 16, 24, 32, 48, 64},
                         const RadialOptions& opt = {}) {
  const PolytopeGrid& g = *baseline.grid;
  SymplecticPath ray{baseline, g.evaluate([&](const double* y) { return f(y); }), 0, t_samples.back(), 0};
  return radial_energies(ray, baseline, t_samples, opt).slope_L;
}

}  // namespace kstab
