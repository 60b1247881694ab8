#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "flows.hpp"
#include "geodesic.hpp"
#include "metric.hpp"
#include "na.hpp"

namespace kstab {

struct SearchConfig {
  int max_pieces = 4;
  int seeds = 16;
  unsigned long long rng_seed = 1;
  int max_iters = 3000;
  double tol_step = 1e-12;
  double box = 4;   // bound on slopes for the H search
  int threads = 0;  // 0: KSTAB_THREADS or hardware concurrency

  void validate() const {
    if (max_pieces < 1) throw std::invalid_argument("SearchConfig: max_pieces must be >= 1");
    if (seeds < 4) throw std::invalid_argument("SearchConfig: seeds must be >= 4");
    if (max_iters < 1) throw std::invalid_argument("SearchConfig: max_iters must be positive");
    if (!(box > 0)) throw std::invalid_argument("SearchConfig: box must be positive");
  }
};

inline int worker_count(int requested) {
  int n = requested;
  if (n <= 0) {
    if (const char* env = std::getenv("KSTAB_THREADS")) n = std::atoi(env);
  }
  if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
  return std::max(n, 1);
}

// Runs job(i) for i in [0, n) on up to `threads` workers; results are indexed
// by i, so the outcome does not depend on scheduling.
template <class R>
std::vector<R> parallel_map(int n, int threads, const std::function<R(int)>& job) {
  std::vector<R> out(n);
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) out[i] = job(i);
    return out;
  }
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += threads) out[i] = job(i);
    });
  for (auto& t : pool) t.join();
  return out;
}

struct NMResult {
  std::vector<double> x;
  double value = 0;
  int iterations = 0;
};

// Minimizes fn by the Nelder-Mead simplex method, restarting once from the
// best vertex to undo simplex collapse.
inline NMResult nelder_mead(const std::function<double(const std::vector<double>&)>& fn, std::vector<double> x0, double step,
                            int max_iters, double tol) {
  const std::size_t n = x0.size();
  NMResult res;
  res.x = x0;
  res.value = fn(x0);
  if (n == 0) return res;
  for (int restart = 0; restart < 2; ++restart) {
    std::vector<std::vector<double>> S(n + 1, res.x);
    std::vector<double> F(n + 1);
    for (std::size_t k = 0; k < n; ++k) S[k + 1][k] += step;
    for (std::size_t k = 0; k <= n; ++k) F[k] = fn(S[k]);
    std::vector<std::size_t> ord(n + 1);
    for (int it = 0; it < max_iters; ++it, ++res.iterations) {
      std::iota(ord.begin(), ord.end(), 0);
      std::stable_sort(ord.begin(), ord.end(), [&](std::size_t a, std::size_t b) { return F[a] < F[b]; });
      const std::size_t best = ord.front(), worst = ord.back(), second = ord[n - 1];
      double spread = 0;
      for (std::size_t k = 0; k <= n; ++k)
        for (std::size_t d = 0; d < n; ++d) spread = std::max(spread, std::abs(S[k][d] - S[best][d]));
      if (spread < tol && std::abs(F[worst] - F[best]) < tol) break;
      std::vector<double> c(n, 0.0);
      for (std::size_t k = 0; k <= n; ++k)
        if (k != worst)
          for (std::size_t d = 0; d < n; ++d) c[d] += S[k][d] / n;
      auto along = [&](double a) {
        std::vector<double> p(n);
        for (std::size_t d = 0; d < n; ++d) p[d] = c[d] + a * (S[worst][d] - c[d]);
        return p;
      };
      auto xr = along(-1.0);
      double fr = fn(xr);
      if (fr < F[best]) {
        auto xe = along(-2.0);
        double fe = fn(xe);
        if (fe < fr) {
          S[worst] = xe;
          F[worst] = fe;
        } else {
          S[worst] = xr;
          F[worst] = fr;
        }
      } else if (fr < F[second]) {
        S[worst] = xr;
        F[worst] = fr;
      } else {
        auto xc = fr < F[worst] ? along(-0.5) : along(0.5);
        double fc = fn(xc);
        if (fc < std::min(fr, F[worst])) {
          S[worst] = xc;
          F[worst] = fc;
        } else {
          for (std::size_t k = 0; k <= n; ++k) {
            if (k == best) continue;
            for (std::size_t d = 0; d < n; ++d) S[k][d] = S[best][d] + 0.5 * (S[k][d] - S[best][d]);
            F[k] = fn(S[k]);
          }
        }
      }
    }
    std::size_t b = std::min_element(F.begin(), F.end()) - F.begin();
    if (F[b] <= res.value) {
      res.value = F[b];
      res.x = S[b];
    }
    step *= 0.1;
  }
  return res;
}

// Coefficient layout: piece k has slopes a_k (dim entries) and, for k >= 1,
// one entry beta_k with b_k = -beta_k^2, so that f(0) = 0.
inline PLConvex decode_pieces(int dim, int K, const std::vector<double>& x, double slope_box = 0) {
  std::vector<std::vector<double>> rows;
  std::size_t p = 0;
  for (int k = 0; k < K; ++k) {
    std::vector<double> r(dim + 1, 0.0);
    for (int d = 0; d < dim; ++d) {
      double a = x[p++];
      r[d] = slope_box > 0 ? slope_box * std::tanh(a / slope_box) : a;
    }
    if (k > 0) {
      double beta = x[p++];
      r[dim] = -beta * beta;
    }
    rows.push_back(r);
  }
  return PLConvex::from_doubles(dim, rows);
}

inline std::size_t parameter_count(int dim, int K) { return static_cast<std::size_t>(K) * dim + (K - 1); }

// Inverse of decode_pieces for a function with f(0) = 0 given as rows.
inline std::vector<double> encode_pieces(int dim, const PLConvex& f, int K, double slope_box = 0) {
  std::vector<double> x;
  for (int k = 0; k < K; ++k) {
    const std::size_t j = std::min<std::size_t>(k, f.pieces() - 1);
    for (int d = 0; d < dim; ++d) {
      double a = f.a[j][d];
      if (slope_box > 0) a = slope_box * std::atanh(std::clamp(a / slope_box, -0.999999, 0.999999));
      x.push_back(a);
    }
    if (k > 0) x.push_back(k < static_cast<int>(f.pieces()) ? std::sqrt(std::max(0.0, f.at_origin() - f.b[j])) : 0.5);
  }
  return x;
}

// max over affine f of -D^NA/|f|_2 = sqrt(b^T Sigma^{-1} b), attained at a = -Sigma^{-1} b.
inline std::pair<PLConvex, double> best_affine_ratio(const Polytope& P) {
  const int n = P.dim;
  Eigen::MatrixXd S(n, n);
  Eigen::VectorXd b(n);
  auto cov = P.covariance_d();
  auto bar = P.barycenter_d();
  for (int i = 0; i < n; ++i) {
    b[i] = bar[i];
    for (int j = 0; j < n; ++j) S(i, j) = cov[i * n + j];
  }
  Eigen::VectorXd a = -S.ldlt().solve(b);
  std::vector<double> row(n + 1, 0.0);
  for (int i = 0; i < n; ++i) row[i] = a[i];
  return {PLConvex::from_doubles(n, {row}), std::sqrt(std::max(0.0, b.dot(S.ldlt().solve(b))))};
}

inline double safe_ratio(const PLConvex& f, const Polytope& P) {
  try {
    return ratio(f, P);
  } catch (const TrivialConfiguration&) {
    return 0.0;
  }
}

inline double h_invariant(const PLConvex& f, const Polytope& P) { return f.at_origin() - pl_log_mean_exp(f, P); }

// Random PL convex function with 1..max_pieces pieces, slopes N(0,1), offsets U(-1/2, 1/2).
template <class Rng>
PLConvex random_plconvex(int dim, Rng& rng, int max_pieces = 4) {
  std::uniform_int_distribution<int> K(1, max_pieces);
  std::normal_distribution<double> N01(0.0, 1.0);
  std::uniform_real_distribution<double> U(-0.5, 0.5);
  std::vector<std::vector<double>> rows(K(rng), std::vector<double>(dim + 1));
  for (auto& r : rows) {
    for (int d = 0; d < dim; ++d) r[d] = N01(rng);
    r[dim] = U(rng);
  }
  return PLConvex::from_doubles(dim, rows);
}

struct SearchResult {
  PLConvex best_f;
  double value = 0;
  std::vector<double> by_pieces;  // best value with at most k pieces, k = 1..max_pieces
};

namespace detail {

inline SearchResult multistart(const Polytope& P, const SearchConfig& cfg, double slope_box,
                               const std::function<double(const PLConvex&)>& objective,
                               const std::vector<PLConvex>& anchors) {
  cfg.validate();
  const int n = P.dim;
  const int threads = worker_count(cfg.threads);
  SearchResult out;
  out.value = -std::numeric_limits<double>::infinity();
  for (int K = 1; K <= cfg.max_pieces; ++K) {
    const std::size_t np = parameter_count(n, K);
    std::vector<std::vector<double>> starts;
    for (const auto& f : anchors) starts.push_back(encode_pieces(n, f, K, slope_box));
    if (out.best_f.pieces() > 0) starts.push_back(encode_pieces(n, out.best_f, K, slope_box));
    for (int s = 0; s < cfg.seeds; ++s) {
      std::mt19937_64 rng(cfg.rng_seed * 1000003ULL + static_cast<unsigned long long>(K) * 7919ULL + s);
      std::normal_distribution<double> N01(0.0, 1.0);
      std::vector<double> x(np);
      for (auto& v : x) v = N01(rng);
      starts.push_back(x);
    }
    auto fn = [&](const std::vector<double>& x) { return -objective(decode_pieces(n, K, x, slope_box)); };
    auto results = parallel_map<NMResult>(static_cast<int>(starts.size()), threads, [&](int i) {
      return nelder_mead(fn, starts[i], 0.5, cfg.max_iters, cfg.tol_step);
    });
    for (const auto& r : results) {
      if (-r.value > out.value) {
        out.value = -r.value;
        out.best_f = pruned(decode_pieces(n, K, r.x, slope_box), P);
      }
    }
    out.by_pieces.push_back(out.value);
  }
  return out;
}

}  // namespace detail

// Maximizes -D^NA/|f|_2 over PL convex f with at most max_pieces pieces.
inline SearchResult maximize_ratio(const Polytope& P, const SearchConfig& cfg) {
  auto [fa, va] = best_affine_ratio(P);
  std::vector<PLConvex> anchors = {fa};
  SearchResult r = detail::multistart(P, cfg, 0, [&](const PLConvex& f) { return safe_ratio(f, P); }, anchors);
  if (va > r.value) {
    r.value = va;
    r.best_f = fa;
    for (auto& v : r.by_pieces) v = std::max(v, va);
  }
  return r;
}

// Golden-section maximum of a unimodal function on [lo, hi].
inline std::pair<double, double> golden_section(const std::function<double(double)>& fn, double lo, double hi, double tol = 1e-10) {
  const double r = (std::sqrt(5.0) - 1) / 2;
  double a = lo, b = hi, c = b - r * (b - a), d = a + r * (b - a);
  double fc = fn(c), fd = fn(d);
  while (b - a > tol) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = fn(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = fn(d);
    }
  }
  const double x = 0.5 * (a + b);
  return {x, fn(x)};
}

// max over affine f of -log (1/V) int e^f, by Newton on the convex log-moment
// generating function with exact integrals.
inline std::pair<PLConvex, double> best_affine_h(const Polytope& P) {
  const int n = P.dim;
  auto value = [&](const Eigen::VectorXd& a) {
    std::vector<double> row(n + 1, 0.0);
    for (int i = 0; i < n; ++i) row[i] = a[i];
    return -pl_log_mean_exp(PLConvex::from_doubles(n, {row}), P);
  };
  Eigen::VectorXd a = Eigen::VectorXd::Zero(n);
  const double e = 1e-4;
  for (int it = 0; it < 50; ++it) {
    Eigen::VectorXd grad(n);
    Eigen::MatrixXd H(n, n);
    const double f0 = value(a);
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd ei = Eigen::VectorXd::Unit(n, i) * e;
      grad[i] = (value(a + ei) - value(a - ei)) / (2 * e);
      H(i, i) = (value(a + ei) - 2 * f0 + value(a - ei)) / (e * e);
      for (int j = 0; j < i; ++j) {
        Eigen::VectorXd ej = Eigen::VectorXd::Unit(n, j) * e;
        H(i, j) = H(j, i) = (value(a + ei + ej) - value(a + ei - ej) - value(a - ei + ej) + value(a - ei - ej)) / (4 * e * e);
      }
    }
    Eigen::VectorXd d = -H.ldlt().solve(grad);
    double t = 1;
    while (t > 1e-8 && !(value(a + t * d) >= f0 - 1e-15)) t *= 0.5;
    a += t * d;
    if (d.norm() * t < 1e-10) break;
  }
  std::vector<double> row(n + 1, 0.0);
  for (int i = 0; i < n; ++i) row[i] = a[i];
  return {PLConvex::from_doubles(n, {row}), value(a)};
}

// Maximizes the H-invariant over PL convex f with slopes bounded by cfg.box.
inline SearchResult maximize_h(const Polytope& P, const SearchConfig& cfg) {
  auto [fa, va] = best_affine_h(P);
  std::vector<PLConvex> anchors = {fa};
  SearchResult r = detail::multistart(P, cfg, cfg.box, [&](const PLConvex& f) { return h_invariant(f, P); }, anchors);
  if (va > r.value) {
    r.value = va;
    r.best_f = fa;
    for (auto& v : r.by_pieces) v = std::max(v, va);
  }
  return r;
}

// R(M)^{1/2} - (-D^NA(f)/|f|_2); nonnegative by Cauchy-Schwarz.
inline double verify_moment_weight(const ToricMetric& M, const PLConvex& f) {
  const MetricState st = evaluate(M);
  const double R = M.grid->mean((st.sigma.array() - 1.0).square().matrix());
  return std::sqrt(R) - ratio(f, M.polytope());
}

struct GapReport {
  std::string theorem;
  double flow_limit = 0;      // plateau from the reference metric
  double flow_limit_alt = 0;  // plateau from a second initial metric
  double best_value = 0;
  PLConvex best_f;
  std::vector<double> best_by_pieces;
  double affine_value = 0;
  double relative_gap = 0;
  double ray_value = std::numeric_limits<double>::quiet_NaN();
  double ray_cauchy = 0;
  int inequality_violations = 0;
  bool initial_metrics_agree = true;
  bool chain_holds = true;
  double max_identity_error = 0;  // theorem B: max relative |H + dL/dt| for t >= 1
  std::vector<double> times, flow_curve;
};

namespace detail {

inline double plateau_value(const FlowTrace& tr, bool root) {
  const auto& r = tr.reports.back();
  return root ? std::sqrt(r.ricci_calabi) : r.h_functional;
}

inline void fill_gap(GapReport& g, double tol) {
  const double small = 1e-2;
  if (g.flow_limit < small && g.best_value < small) {
    g.relative_gap = 0;
  } else {
    g.relative_gap = (g.flow_limit - g.best_value) / g.flow_limit;
  }
  if (g.flow_limit < g.best_value - tol) ++g.inequality_violations;
  const double scale = std::max(std::abs(g.flow_limit), std::abs(g.flow_limit_alt));
  g.initial_metrics_agree = scale < small || std::abs(g.flow_limit - g.flow_limit_alt) <= 0.02 * scale;
  if (std::isfinite(g.ray_value)) g.chain_holds = g.flow_limit >= g.ray_value - tol && g.ray_value >= g.best_value - tol;
  else g.chain_holds = g.flow_limit >= g.best_value - tol;
}

inline FlowConfig plateau_config(FlowConfig cfg, FlowKind kind, double min_time) {
  cfg.kind = kind;
  cfg.plateau_stop = true;
  cfg.plateau_min_time = std::max(cfg.plateau_min_time, min_time);
  cfg.t_max = std::max(cfg.t_max, min_time);
  return cfg;
}

}  // namespace detail

struct TheoremOptions {
  int resolution = 44;
  double tol_chain = 1e-6;
  unsigned long long perturb_seed = 7;
  double perturb_amplitude = 0.3;
  double min_flow_time = 64;  // the ray needs the transient to have decayed
};

// Both sides of inf R^{1/2} = sup -D^NA/|.|_2.
inline GapReport theorem_a_gap(const Polytope& P, const FlowConfig& flow_cfg, const SearchConfig& search_cfg,
                               const TheoremOptions& opt = {}) {
  auto grid = std::make_shared<const PolytopeGrid>(P, opt.resolution);
  const FlowConfig fc = detail::plateau_config(flow_cfg, FlowKind::InverseMA, opt.min_flow_time);
  const ToricMetric M0 = reference_metric(grid);
  std::mt19937_64 rng(opt.perturb_seed);
  const ToricMetric M1 = perturbed_metric(M0, rng, opt.perturb_amplitude);
  const FlowTrace tr = run(M0, fc);
  const FlowTrace tr_alt = run(M1, fc);
  GapReport g;
  g.theorem = "A";
  g.flow_limit = detail::plateau_value(tr, true);
  g.flow_limit_alt = detail::plateau_value(tr_alt, true);
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    g.times.push_back(tr.times[i]);
    g.flow_curve.push_back(std::sqrt(tr.reports[i].ricci_calabi));
  }
  SearchResult s = maximize_ratio(P, search_cfg);
  g.best_value = s.value;
  g.best_f = s.best_f;
  g.best_by_pieces = s.by_pieces;
  g.affine_value = best_affine_ratio(P).second;
  if (tr.snapshots.size() >= 4) {
    const SymplecticPath ray = ray_from_flow(tr);
    g.ray_cauchy = ray.cauchy;
    // closed-form slopes of the ray: -D slope = g(0) - mean(g)
    const Field& d = ray.direction;
    const double mean = grid->mean(d);
    const Field c = (d.array() - mean).matrix();
    const double n2 = std::sqrt(grid->mean(c.cwiseProduct(c)));
    if (n2 > 1e-8) g.ray_value = (d[grid->origin()] - mean) / n2;
  }
  detail::fill_gap(g, opt.tol_chain);
  return g;
}

// Both sides of inf H = sup H^NA along the Kaehler-Ricci flow.
inline GapReport theorem_b_gap(const Polytope& P, const FlowConfig& flow_cfg, const SearchConfig& search_cfg,
                               const TheoremOptions& opt = {}) {
  auto grid = std::make_shared<const PolytopeGrid>(P, opt.resolution);
  const FlowConfig fc = detail::plateau_config(flow_cfg, FlowKind::KahlerRicci, opt.min_flow_time);
  const ToricMetric M0 = reference_metric(grid);
  std::mt19937_64 rng(opt.perturb_seed);
  const ToricMetric M1 = perturbed_metric(M0, rng, opt.perturb_amplitude);
  const FlowTrace tr = run(M0, fc);
  const FlowTrace tr_alt = run(M1, fc);
  GapReport g;
  g.theorem = "B";
  g.flow_limit = detail::plateau_value(tr, false);
  g.flow_limit_alt = detail::plateau_value(tr_alt, false);
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    g.times.push_back(tr.times[i]);
    g.flow_curve.push_back(tr.reports[i].h_functional);
  }
  // H = -dL/dt at each snapshot with t >= 1, central difference in time
  for (const auto& [t, M] : tr.snapshots) {
    if (t < 1) continue;
    const double dt = 1e-4;
    const double zp = evaluate(step(M, FlowKind::KahlerRicci, dt)).log_Z;
    const double zm = evaluate(step(M, FlowKind::KahlerRicci, -dt)).log_Z;
    const double dL = -(zp - zm) / (2 * dt);
    const double H = energies(M, Baseline(M)).h_functional;
    g.max_identity_error = std::max(g.max_identity_error, std::abs(H + dL) / std::max(std::abs(H), 1e-8));
  }
  SearchResult s = maximize_h(P, search_cfg);
  g.best_value = s.value;
  g.best_f = s.best_f;
  g.best_by_pieces = s.by_pieces;
  g.affine_value = best_affine_h(P).second;
  if (tr.snapshots.size() >= 4) {
    const SymplecticPath ray = ray_from_flow(tr);
    g.ray_cauchy = ray.cauchy;
    // -L slope + F of the ray velocity, with L slope = -g(0)
    const Field& d = ray.direction;
    g.ray_value = d[grid->origin()] + virtual_slope_F(dh_measure(*grid, d));
  }
  detail::fill_gap(g, opt.tol_chain);
  return g;
}

}  // namespace kstab
