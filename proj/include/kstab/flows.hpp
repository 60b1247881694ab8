#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "metric.hpp"

namespace kstab {

enum class FlowKind { InverseMA, KahlerRicci };

inline const char* to_string(FlowKind k) { return k == FlowKind::InverseMA ? "ima" : "krf"; }

class StepFailed : public std::runtime_error {
 public:
  StepFailed(const std::string& msg, double t) : std::runtime_error(msg), time(t) {}
  double time;
};

class TooFewSamples : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FlowConfig {
  FlowKind kind = FlowKind::InverseMA;
  double dt_init = 1e-3;
  double dt_control = 0.5;  // step growth factor after an accepted step is 1 + dt_control
  double dt_max = 4.0;
  double t_max = 100;
  double stop_tol = 0;            // stop when ricci_calabi < stop_tol
  double max_update = 0.1;        // bound on the non-affine part of one update
  bool plateau_stop = false;
  double plateau_tol = 1e-3;
  double plateau_min_time = 16;
  std::vector<double> snapshot_times;  // default: powers of two up to t_max
  int max_halvings = 20;

  void validate() const {
    if (!(dt_init > 0)) throw std::invalid_argument("FlowConfig: dt_init must be positive");
    if (!(t_max > 0)) throw std::invalid_argument("FlowConfig: t_max must be positive");
    if (!(dt_control > 0 && dt_control <= 1)) throw std::invalid_argument("FlowConfig: dt_control must lie in (0,1]");
  }
};

struct FlowTrace {
  FlowKind kind = FlowKind::InverseMA;
  ToricMetric initial;
  std::vector<double> times, dts, sup_phi;
  std::vector<EnergyReport> reports;
  std::vector<std::pair<double, ToricMetric>> snapshots;
  ToricMetric final_metric;
  double slope_D = std::numeric_limits<double>::quiet_NaN();
  std::string stop_reason;
  int rejected_steps = 0;
};

// Velocity dv/dt of the symplectic potential: e^rho - 1 (inverse MA flow) or rho (KRF).
inline Field flow_velocity(const MetricState& st, FlowKind kind) {
  if (kind == FlowKind::InverseMA) return (st.sigma.array() - 1.0).matrix();
  return st.rho();
}

// One linearly implicit Euler step. The constant mode is advanced explicitly
// so that the update has weighted mean dt * mean(velocity).
inline ToricMetric step(const ToricMetric& M, const MetricState& st, FlowKind kind, double dt) {
  const PolytopeGrid& g = *M.grid;
  const std::size_t N = g.size();
  const Field& w = g.weights();
  const double V = g.volume();
  const Field F = flow_velocity(st, kind);
  Eigen::SparseMatrix<double> S = linearize(M, st);
  const double Zs = w.dot(st.s);
  const double fac = V / Zs;
  Field r = st.corr;
  if (kind == FlowKind::KahlerRicci) r = r.cwiseQuotient(st.sigma);
  // A = I - dt fac diag(r) S ; full Jacobian adds dt fac / Zs (r .* s) q^T
  Eigen::SparseMatrix<double> A = S;
  for (int k = 0; k < A.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(A, k); it; ++it) it.valueRef() *= -dt * fac * r[it.row()];
  Eigen::SparseMatrix<double> I(N, N);
  I.setIdentity();
  A += I;
  A.makeCompressed();
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(A);
  if (lu.info() != Eigen::Success) throw StepFailed("sparse factorization failed", 0);
  const Field q = S.transpose() * w;
  const Field u = (dt * fac / Zs) * r.cwiseProduct(st.s);
  const Field x = lu.solve(dt * F);
  const Field z = lu.solve(u);
  Field delta = x - z * (q.dot(x) / (1 + q.dot(z)));
  delta.array() += (dt * w.dot(F) - w.dot(delta)) / V;
  return {M.grid, M.v + delta};
}

inline ToricMetric step(const ToricMetric& M, FlowKind kind, double dt) { return step(M, evaluate(M), kind, dt); }

inline double sup_phi_increment(const ToricMetric& M0, const ToricMetric& M) { return (M0.v - M.v).maxCoeff(); }

inline FlowTrace run(const ToricMetric& M0, const FlowConfig& cfg, const Baseline* baseline = nullptr) {
  cfg.validate();
  Baseline own(M0);
  const Baseline& base = baseline ? *baseline : own;
  std::vector<double> snaps = cfg.snapshot_times;
  if (snaps.empty())
    for (double s = 1; s <= cfg.t_max * (1 + 1e-12); s *= 2) snaps.push_back(s);
  std::sort(snaps.begin(), snaps.end());

  FlowTrace tr;
  tr.kind = cfg.kind;
  tr.initial = M0;
  ToricMetric M = M0;
  MetricState st = evaluate(M);
  EnergyReport rep = energies(M, st, base);
  double t = 0, dt = cfg.dt_init;
  auto record = [&](double dtt) {
    tr.times.push_back(t);
    tr.dts.push_back(dtt);
    tr.reports.push_back(rep);
    tr.sup_phi.push_back(sup_phi_increment(M0, M));
  };
  record(0);
  std::size_t next_snap = 0;
  while (next_snap < snaps.size() && snaps[next_snap] <= 0) ++next_snap;
  const double eps = 1e-12 * std::max(1.0, cfg.t_max);
  tr.stop_reason = "t_max";
  while (t < cfg.t_max - eps) {
    double target = cfg.t_max;
    if (next_snap < snaps.size()) target = std::min(target, snaps[next_snap]);
    double h = std::min({dt, cfg.dt_max, target - t});
    bool clipped = h < std::min(dt, cfg.dt_max);
    bool ok = false;
    ToricMetric cand;
    MetricState cst;
    EnergyReport crep;
    for (int k = 0; k <= cfg.max_halvings; ++k) {
      cand = step(M, st, cfg.kind, h);
      cst = evaluate(cand, false);
      bool good = cst.convex;
      if (good) {
        Field d = cand.v - M.v;
        d -= M.grid->affine_part(d);
        good = d.cwiseAbs().maxCoeff() <= cfg.max_update;
      }
      if (good) {
        crep = energies(cand, cst, base);
        good = crep.D <= rep.D + 1e-12 * (1 + std::abs(rep.D));
      }
      if (good) {
        ok = true;
        break;
      }
      ++tr.rejected_steps;
      h *= 0.5;
      clipped = false;
    }
    if (!ok) throw StepFailed("step failed after repeated halving", t);
    t = (target - t - h <= eps) ? target : t + h;
    M = std::move(cand);
    st = std::move(cst);
    rep = crep;
    record(h);
    if (next_snap < snaps.size() && std::abs(t - snaps[next_snap]) <= eps) {
      tr.snapshots.emplace_back(t, M);
      ++next_snap;
    }
    if (!clipped) dt = h * (1 + cfg.dt_control);
    if (cfg.stop_tol > 0 && rep.ricci_calabi < cfg.stop_tol) {
      tr.stop_reason = "converged";
      break;
    }
    if (cfg.plateau_stop && t >= cfg.plateau_min_time) {
      const double tb = 0.9 * t;
      std::size_t j = tr.times.size() - 1;
      while (j > 0 && tr.times[j] > tb) --j;
      const double Rn = rep.ricci_calabi, Ro = tr.reports[j].ricci_calabi;
      const double Hn = rep.h_functional, Ho = tr.reports[j].h_functional;
      const double rel = cfg.kind == FlowKind::InverseMA ? std::abs(Rn - Ro) / std::max(Rn, 1e-300)
                                                         : std::abs(Hn - Ho) / std::max(std::abs(Hn), 1e-300);
      if (rel < cfg.plateau_tol) {
        tr.stop_reason = "plateau";
        break;
      }
    }
  }
  tr.final_metric = M;
  return tr;
}

struct SlopeEstimate {
  double slope = 0;
  double half_window_slope = 0;
  bool unstable = false;
};

namespace detail {

inline double ls_slope(const std::vector<double>& t, const std::vector<double>& v, std::size_t from) {
  double n = 0, st = 0, sv = 0;
  for (std::size_t i = from; i < t.size(); ++i) {
    n += 1;
    st += t[i];
    sv += v[i];
  }
  const double mt = st / n, mv = sv / n;
  double num = 0, den = 0;
  for (std::size_t i = from; i < t.size(); ++i) {
    num += (t[i] - mt) * (v[i] - mv);
    den += (t[i] - mt) * (t[i] - mt);
  }
  return num / den;
}

}  // namespace detail

// Least-squares slope over the samples with t in the last tail_fraction of the time range.
inline SlopeEstimate slope_estimate(const std::vector<double>& times, const std::vector<double>& values,
                                    double tail_fraction) {
  if (times.size() != values.size() || times.empty()) throw TooFewSamples("slope_estimate: empty input");
  const double t0 = times.front(), t1 = times.back();
  auto first_after = [&](double frac) {
    const double cut = t1 - frac * (t1 - t0);
    std::size_t i = 0;
    while (i < times.size() && times[i] < cut) ++i;
    return i;
  };
  std::size_t a = first_after(tail_fraction), b = first_after(0.5 * tail_fraction);
  if (times.size() - a < 10) throw TooFewSamples("slope_estimate: fewer than 10 samples in the tail window");
  SlopeEstimate e;
  e.slope = detail::ls_slope(times, values, a);
  e.half_window_slope = times.size() - b >= 2 ? detail::ls_slope(times, values, b) : e.slope;
  e.unstable = std::abs(e.half_window_slope - e.slope) > 0.05 * std::abs(e.slope);
  return e;
}

struct MonitorViolation {
  std::string monitor;
  double max_violation = 0;
};

inline std::vector<MonitorViolation> monotonicity_report(const FlowTrace& tr) {
  if (tr.reports.empty()) throw std::invalid_argument("monotonicity_report: empty trace");
  auto down = [&](auto get) {
    double v = 0;
    for (std::size_t i = 1; i < tr.reports.size(); ++i) v = std::max(v, get(tr.reports[i]) - get(tr.reports[i - 1]));
    return v;
  };
  auto up = [&](auto get) {
    double v = 0;
    for (std::size_t i = 1; i < tr.reports.size(); ++i) v = std::max(v, get(tr.reports[i - 1]) - get(tr.reports[i]));
    return v;
  };
  std::vector<MonitorViolation> out;
  if (tr.kind == FlowKind::InverseMA) {
    out.push_back({"D_nonincreasing", down([](const EnergyReport& r) { return r.D; })});
    out.push_back({"R_nonincreasing", down([](const EnergyReport& r) { return r.ricci_calabi; })});
    out.push_back({"M_nonincreasing", down([](const EnergyReport& r) { return r.mabuchi; })});
    double e = 0;
    for (const auto& r : tr.reports) e = std::max(e, std::abs(r.E - tr.reports.front().E));
    out.push_back({"E_constant", e});
  } else {
    out.push_back({"H_nonincreasing", down([](const EnergyReport& r) { return r.h_functional; })});
    out.push_back({"E_nondecreasing", up([](const EnergyReport& r) { return r.E; })});
    out.push_back({"D_nonincreasing", down([](const EnergyReport& r) { return r.D; })});
  }
  return out;
}

// Both sides of -dD/dt = |dphi/dt|_2 R^{1/2} along the inverse MA flow.
inline std::pair<double, double> dissipation_identity(const ToricMetric& M) {
  const MetricState st = evaluate(M);
  const PolytopeGrid& g = *M.grid;
  const Field d = (st.sigma.array() - 1.0).matrix();
  const double lhs = g.mean(d.cwiseProduct(d));
  const double speed = std::sqrt(g.mean(d.cwiseProduct(d)));
  const double rc = std::sqrt(lhs);
  return {lhs, speed * rc};
}

// Fit sup_phi(t) <= t + A: the smallest such A over the trace.
inline double linear_bound_constant(const FlowTrace& tr) {
  double A = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < tr.times.size(); ++i) A = std::max(A, tr.sup_phi[i] - tr.times[i]);
  return A;
}

inline void write_trace_csv(std::ostream& os, const FlowTrace& tr) {
  os << "t,E,L,D,R,M,H,sup_phi,dt\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    const auto& r = tr.reports[i];
    os << tr.times[i] << ',' << r.E << ',' << r.L << ',' << r.D << ',' << r.ricci_calabi << ',' << r.mabuchi << ','
       << r.h_functional << ',' << tr.sup_phi[i] << ',' << tr.dts[i] << '\n';
  }
}

}  // namespace kstab
