#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "grid.hpp"
#include "legendre.hpp"
#include "polytope.hpp"

namespace kstab {

class NonConvex : public std::runtime_error {
 public:
  NonConvex(const std::string& msg, int node) : std::runtime_error(msg), node(node) {}
  int node;
};

class DomainTooSmall : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotNormalized : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Torus-invariant metric in c1(X), stored through its symplectic potential
// u = u_G + v on the nodes of a polytope grid (u_G = sum ell_i log ell_i).
struct ToricMetric {
  std::shared_ptr<const PolytopeGrid> grid;
  Field v;

  const Polytope& polytope() const { return grid->polytope(); }
  Field symplectic_potential() const { return grid->guillemin() + v; }
};

// Pointwise data of a metric: gradient and Hessian of v, the density s of
// e^{-phi} dx against Lebesgue measure on P, and the normalized canonical
// density sigma = e^rho.
struct MetricState {
  std::vector<std::array<double, 2>> grad;
  std::vector<std::array<double, 3>> curv;
  Field expo, Q, s, sigma_pt, corr, sigma;
  double kappa = 0;      // s is stored as true density * exp(-kappa)
  double log_Z = 0;      // log of int e^{-phi} dx
  Eigen::Vector3d affine{0, 0, 0};  // correction exp(b + <a, y>), (b, a1, a2)
  bool convex = true;
  int bad_node = -1;

  Field rho() const { return sigma.array().log().matrix(); }
};

namespace detail {

inline double hess_det(const std::array<double, 3>& c) { return c[0] * c[1] - c[2] * c[2]; }

// Newton solve for exp(b + <a,y>) so that the corrected density has total
// mass V and barycenter zero under the grid quadrature.
inline void affine_correct(const PolytopeGrid& g, MetricState& st) {
  const int n = g.dim();
  const Field& w = g.weights();
  const double V = g.volume();
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(n + 1);
  st.corr = Field::Ones(g.size());
  for (int it = 0; it < 60; ++it) {
    Eigen::VectorXd F = Eigen::VectorXd::Zero(n + 1);
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n + 1, n + 1);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto& y = g.node(i).y;
      double lin = theta[0];
      for (int d = 0; d < n; ++d) lin += theta[d + 1] * y[d];
      st.corr[i] = std::exp(lin);
      double m = w[i] * st.sigma_pt[i] * st.corr[i];
      Eigen::VectorXd b(n + 1);
      b[0] = 1;
      for (int d = 0; d < n; ++d) b[d + 1] = y[d];
      F += m * b;
      J += m * b * b.transpose();
    }
    F[0] -= V;
    Eigen::VectorXd step = J.ldlt().solve(F);
    theta -= step;
    if (step.norm() < 1e-15) break;
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& y = g.node(i).y;
    double lin = theta[0];
    for (int d = 0; d < n; ++d) lin += theta[d + 1] * y[d];
    st.corr[i] = std::exp(lin);
  }
  st.sigma = st.sigma_pt.cwiseProduct(st.corr);
  st.affine.setZero();
  for (int d = 0; d <= n; ++d) st.affine[d] = theta[d];
}

}  // namespace detail

inline MetricState evaluate(const ToricMetric& M, bool require_convex = true) {
  const PolytopeGrid& g = *M.grid;
  const int n = g.dim();
  const std::size_t N = g.size();
  MetricState st;
  st.grad.resize(N);
  st.curv.resize(N);
  st.expo.resize(N);
  st.Q.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    const GridNode& nd = g.node(i);
    double e = M.v[i];
    for (int d = 0; d < n; ++d) {
      st.grad[i][d] = nd.grad[d].apply(M.v);
      e -= nd.y[d] * st.grad[i][d];
    }
    st.expo[i] = e;
    std::array<double, 3> c{0, 0, 0};
    double q = nd.k0;
    for (std::size_t r = 0; r < nd.curv.size(); ++r) {
      c[r] = nd.curv[r].apply(M.v);
      q += nd.lin[r] * c[r];
    }
    if (nd.use_det) q += nd.lambda * detail::hess_det(c);
    st.curv[i] = c;
    st.Q[i] = q;
    bool ok = q > 0;
    if (ok && nd.kind == NodeKind::Interior && n == 2) {
      double tr = nd.inv_hess_g[0] + c[0] + nd.inv_hess_g[1] + c[1];
      ok = tr > 0;
    }
    if (!ok && st.convex) {
      st.convex = false;
      st.bad_node = static_cast<int>(i);
    }
  }
  if (!st.convex) {
    if (require_convex) throw NonConvex("discrete convexity lost", st.bad_node);
    return st;
  }
  st.kappa = st.expo.maxCoeff();
  st.s.resize(N);
  for (std::size_t i = 0; i < N; ++i)
    st.s[i] = g.node(i).guillemin_prefactor * std::exp(st.expo[i] - st.kappa) * st.Q[i];
  const double Zs = g.integrate(st.s);
  st.log_Z = std::log(Zs) + st.kappa;
  st.sigma_pt = st.s * (g.volume() / Zs);
  detail::affine_correct(g, st);
  return st;
}

// Jacobian of the (shifted) density s with respect to v.
inline Eigen::SparseMatrix<double> linearize(const ToricMetric& M, const MetricState& st) {
  const PolytopeGrid& g = *M.grid;
  const int n = g.dim();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(g.size() * 24);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const GridNode& nd = g.node(i);
    const double si = st.s[i];
    const int row = static_cast<int>(i);
    trip.emplace_back(row, row, si);
    for (int d = 0; d < n; ++d)
      for (const auto& [j, c] : nd.grad[d].terms) trip.emplace_back(row, j, -si * nd.y[d] * c);
    const double pre = nd.guillemin_prefactor * std::exp(st.expo[i] - st.kappa);
    const auto& c = st.curv[i];
    for (std::size_t r = 0; r < nd.curv.size(); ++r) {
      double dq = nd.lin[r];
      if (nd.use_det) {
        if (r == 0) dq += nd.lambda * c[1];
        if (r == 1) dq += nd.lambda * c[0];
        if (r == 2) dq += -2 * nd.lambda * c[2];
      }
      for (const auto& [j, cc] : nd.curv[r].terms) trip.emplace_back(row, j, pre * dq * cc);
    }
  }
  Eigen::SparseMatrix<double> S(g.size(), g.size());
  S.setFromTriplets(trip.begin(), trip.end());
  return S;
}

struct RicciPotential {
  Field rho;
  double c = 0;  // V / int e^{-phi} dx
};

inline RicciPotential ricci_potential(const ToricMetric& M) {
  MetricState st = evaluate(M);
  return {st.rho(), std::exp(std::log(M.grid->volume()) - st.log_Z)};
}

struct EnergyReport {
  double E = 0, L = 0, D = 0;
  double ricci_calabi = 0, mabuchi = 0, h_functional = 0;
  double normalization_const = 0;
  double l1_ricci = 0;  // (1/V) int |e^rho - 1|
};

// Cached data of the baseline metric for repeated energy evaluations.
struct Baseline {
  ToricMetric metric;
  MetricState state;
  Field log_Q;

  explicit Baseline(ToricMetric m) : metric(std::move(m)), state(evaluate(metric)), log_Q(state.Q.array().log()) {}
};

inline EnergyReport energies(const ToricMetric& M, const MetricState& st, const Baseline& base) {
  const PolytopeGrid& g = *M.grid;
  const double V = g.volume();
  const Field& w = g.weights();
  const Field dv = M.v - base.metric.v;
  EnergyReport r;
  r.E = -w.dot(dv) / V;
  r.L = base.state.log_Z - st.log_Z;
  r.D = r.L - r.E;
  double rc = 0, hf = 0, l1 = 0, ent = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    double sg = st.sigma[i];
    rc += w[i] * (sg - 1) * (sg - 1);
    hf += w[i] * (sg > 0 ? sg * std::log(sg) : 0.0);
    l1 += w[i] * std::abs(sg - 1);
    if (w[i] > 0) ent += w[i] * (std::log(st.Q[i]) - base.log_Q[i]);
  }
  r.ricci_calabi = rc / V;
  r.h_functional = hf / V;
  r.l1_ricci = l1 / V;
  r.mabuchi = (-ent + g.boundary_weights().dot(dv) - g.dim() * w.dot(dv)) / V;
  r.normalization_const = std::exp(std::log(V) - st.log_Z);
  return r;
}

inline EnergyReport energies(const ToricMetric& M, const Baseline& base) { return energies(M, evaluate(M), base); }

inline EnergyReport energies(const ToricMetric& M, const ToricMetric& baseline) {
  return energies(M, Baseline(baseline));
}

// Kaehler potential of the lattice-point sum, phi0(x) = log sum_u e^{<u,x>}.
inline std::function<double(const double*)> reference_potential(const Polytope& P) {
  auto pts = lattice_points(P, 1);
  const int n = P.dim;
  return [pts, n](const double* x) {
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> e(pts.size());
    for (std::size_t k = 0; k < pts.size(); ++k) {
      double s = 0;
      for (int d = 0; d < n; ++d) s += double(pts[k][d]) * x[d];
      e[k] = s;
      mx = std::max(mx, s);
    }
    double acc = 0;
    for (double s : e) acc += std::exp(s - mx);
    return mx + std::log(acc);
  };
}

namespace detail {

// -min_x log sum_{u in S} e^{<u - y, x>} by damped Newton; S spans the face of y.
inline double face_legendre(const std::vector<std::array<double, 2>>& S, const std::array<double, 2>& y, int n) {
  if (S.size() == 1) return 0.0;
  Eigen::Vector2d x = Eigen::Vector2d::Zero();
  auto eval = [&](const Eigen::Vector2d& xx, Eigen::Vector2d* gr, Eigen::Matrix2d* H) {
    double mx = -1e300;
    std::vector<double> e(S.size());
    for (std::size_t k = 0; k < S.size(); ++k) {
      double s = 0;
      for (int d = 0; d < n; ++d) s += (S[k][d] - y[d]) * xx[d];
      e[k] = s;
      mx = std::max(mx, s);
    }
    double Zs = 0;
    for (double& s : e) Zs += (s = std::exp(s - mx));
    if (gr) {
      Eigen::Vector2d m1 = Eigen::Vector2d::Zero();
      Eigen::Matrix2d m2 = Eigen::Matrix2d::Zero();
      for (std::size_t k = 0; k < S.size(); ++k) {
        Eigen::Vector2d z(S[k][0] - y[0], n == 2 ? S[k][1] - y[1] : 0.0);
        m1 += e[k] / Zs * z;
        m2 += e[k] / Zs * z * z.transpose();
      }
      *gr = m1;
      *H = m2 - m1 * m1.transpose();
    }
    return mx + std::log(Zs);
  };
  Eigen::Vector2d gr;
  Eigen::Matrix2d H;
  double f = eval(x, &gr, &H);
  for (int it = 0; it < 200; ++it) {
    if (gr.norm() < 1e-14) break;
    Eigen::Matrix2d Hr = H;
    double ridge = 1e-14 * (1 + H.trace());
    Hr(0, 0) += ridge;
    Hr(1, 1) += ridge;
    if (n == 1) Hr(1, 1) = 1;
    Eigen::Vector2d step = -Hr.ldlt().solve(gr);
    if (n == 1) step[1] = 0;
    double t = 1;
    while (t > 1e-12) {
      Eigen::Vector2d xn = x + t * step;
      double fn = eval(xn, nullptr, nullptr);
      if (fn <= f + 1e-4 * t * gr.dot(step)) {
        x = xn;
        break;
      }
      t *= 0.5;
    }
    if (t <= 1e-12) break;
    f = eval(x, &gr, &H);
  }
  return -f;
}

}  // namespace detail

// The lattice-point reference metric phi0 in symplectic form.
inline ToricMetric reference_metric(std::shared_ptr<const PolytopeGrid> grid) {
  const Polytope& P = grid->polytope();
  const int n = P.dim;
  auto pts = lattice_points(P, 1);
  ToricMetric M{grid, Field(grid->size())};
  for (std::size_t i = 0; i < grid->size(); ++i) {
    const GridNode& nd = grid->node(i);
    std::vector<std::array<double, 2>> S;
    for (const auto& u : pts) {
      bool on = true;
      for (std::size_t k = 0; k < P.facets.size(); ++k) {
        if (nd.ell[k] != 0) continue;
        long long s = P.facets[k].offset;
        for (int d = 0; d < n; ++d) s += P.facets[k].normal[d] * u[d];
        if (s != 0) {
          on = false;
          break;
        }
      }
      if (on) S.push_back({double(u[0]), n == 2 ? double(u[1]) : 0.0});
    }
    std::array<double, 2> y = nd.y;
    if (n == 2 && nd.kind == NodeKind::Edge) {
      // restrict to the edge line: project onto the tangent coordinate
      std::size_t k = 0;
      while (nd.ell[k] != 0) ++k;
      const double t0 = -double(P.facets[k].normal[1]), t1 = double(P.facets[k].normal[0]);
      std::vector<std::array<double, 2>> S1;
      for (const auto& u : S) S1.push_back({u[0] * t0 + u[1] * t1, 0});
      M.v[i] = detail::face_legendre(S1, {y[0] * t0 + y[1] * t1, 0}, 1) - nd.u_guillemin;
      continue;
    }
    M.v[i] = detail::face_legendre(S, y, n) - nd.u_guillemin;
  }
  return M;
}

inline ToricMetric guillemin_metric(std::shared_ptr<const PolytopeGrid> grid) {
  return {grid, Field::Zero(grid->size())};
}

// Smooth random perturbation base.v + amp * (random cubic polynomial), shrunk
// until the result is discretely convex.
template <class Rng>
ToricMetric perturbed_metric(const ToricMetric& base, Rng& rng, double amp) {
  std::normal_distribution<double> N01(0.0, 1.0);
  const int n = base.grid->dim();
  std::vector<double> c(10);
  for (auto& x : c) x = N01(rng);
  auto poly = [&](const double* y) {
    double a = y[0], b = n == 2 ? y[1] : 0.0;
    double s = c[0] * a * a + c[1] * a * b + c[2] * b * b + 0.5 * (c[3] * a * a * a + c[4] * a * a * b + c[5] * a * b * b + c[6] * b * b * b);
    s += 0.3 * (c[7] * std::sin(1.7 * a + c[8]) + c[9] * std::cos(1.3 * b - c[8]));
    return s;
  };
  Field p = base.grid->evaluate(poly);
  for (int k = 0; k < 40; ++k) {
    ToricMetric M{base.grid, base.v + amp * p};
    if (evaluate(M, false).convex) return M;
    amp *= 0.5;
  }
  return base;
}

// (1/V) int log(nu/mu) nu for densities against a weight vector.
inline double entropy(const Field& nu, const Field& mu, const Field& w, double tol_floor = 1e-300) {
  if (std::abs(w.dot(nu) - 1) > 1e-8 || std::abs(w.dot(mu) - 1) > 1e-8)
    throw NotNormalized("entropy: densities must integrate to 1");
  double s = 0;
  for (Eigen::Index i = 0; i < nu.size(); ++i) {
    if (w[i] == 0 || nu[i] <= 0) continue;
    if (mu[i] < tol_floor) return std::numeric_limits<double>::infinity();
    s += w[i] * nu[i] * std::log(nu[i] / mu[i]);
  }
  return s;
}

// int f nu - log int e^f mu, a lower bound for the entropy.
inline double entropy_legendre_lower_bound(const Field& nu, const Field& mu, const Field& f, const Field& w) {
  if (std::abs(w.dot(nu) - 1) > 1e-8 || std::abs(w.dot(mu) - 1) > 1e-8)
    throw NotNormalized("entropy: densities must integrate to 1");
  const double fm = f.maxCoeff();
  double a = 0, b = 0;
  for (Eigen::Index i = 0; i < nu.size(); ++i) {
    a += w[i] * f[i] * nu[i];
    b += w[i] * std::exp(f[i] - fm) * mu[i];
  }
  return a - (fm + std::log(b));
}

// Convex potentials on the box [-R, R]^n in log coordinates.
struct GridSpec {
  double box_radius = 10;
  int nodes_per_axis = 129;

  double spacing() const { return 2 * box_radius / (nodes_per_axis - 1); }
  double coord(int k) const { return -box_radius + k * spacing(); }
  void validate() const {
    if (nodes_per_axis < 33) throw std::invalid_argument("GridSpec: nodes_per_axis must be >= 33");
    if (!(box_radius > 0)) throw std::invalid_argument("GridSpec: box_radius must be positive");
  }
};

struct LogPotential {
  int dim = 1;
  GridSpec grid;
  std::vector<double> phi;  // row-major over (x1, x2)

  std::size_t size() const { return phi.size(); }
  double at(int a, int b = 0) const { return phi[static_cast<std::size_t>(a) * (dim == 2 ? grid.nodes_per_axis : 1) + b]; }
};

inline LogPotential sample_log_potential(int dim, const GridSpec& spec, const std::function<double(const double*)>& fn) {
  spec.validate();
  LogPotential L{dim, spec, {}};
  const int m = spec.nodes_per_axis;
  if (dim == 1) {
    for (int a = 0; a < m; ++a) {
      double x[2] = {spec.coord(a), 0};
      L.phi.push_back(fn(x));
    }
  } else {
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) {
        double x[2] = {spec.coord(a), spec.coord(b)};
        L.phi.push_back(fn(x));
      }
  }
  return L;
}

namespace detail {

inline std::vector<double> axis(const GridSpec& s) {
  std::vector<double> x(s.nodes_per_axis);
  for (int k = 0; k < s.nodes_per_axis; ++k) x[k] = s.coord(k);
  return x;
}

inline void grid_axes(const PolytopeGrid& g, std::vector<double>& y0, std::vector<double>& y1, int& lo0, int& lo1) {
  int mn[2] = {1 << 30, 1 << 30}, mx[2] = {-(1 << 30), -(1 << 30)};
  for (const auto& nd : g.nodes())
    for (int d = 0; d < g.dim(); ++d) {
      mn[d] = std::min(mn[d], nd.idx[d]);
      mx[d] = std::max(mx[d], nd.idx[d]);
    }
  lo0 = mn[0];
  lo1 = g.dim() == 2 ? mn[1] : 0;
  y0.clear();
  y1.clear();
  for (int k = mn[0]; k <= mx[0]; ++k) y0.push_back(double(k) / g.resolution());
  if (g.dim() == 2)
    for (int k = mn[1]; k <= mx[1]; ++k) y1.push_back(double(k) / g.resolution());
  else
    y1.push_back(0);
}

}  // namespace detail

// u(y) = max over box nodes x of <x, y> - phi(x), on the P-grid nodes.
inline Field legendre(const LogPotential& L, const PolytopeGrid& g) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> x = detail::axis(L.grid), y0, y1;
  int lo0, lo1;
  detail::grid_axes(g, y0, y1, lo0, lo1);
  const int m = L.grid.nodes_per_axis;
  Field u = Field::Constant(g.size(), inf);
  bool boundary_hit = false;
  auto check = [&](int id, int ia, int ib) {
    if (g.node(id).kind != NodeKind::Interior) return;
    if (ia == 0 || ia == m - 1 || (L.dim == 2 && (ib == 0 || ib == m - 1))) boundary_hit = true;
  };
  if (L.dim == 1) {
    std::vector<double> out;
    std::vector<int> arg;
    conjugate_1d(x, L.phi, y0, out, arg);
    for (std::size_t a = 0; a < y0.size(); ++a) {
      int id = g.find({lo0 + static_cast<int>(a), 0});
      if (id < 0) continue;
      u[id] = out[a];
      check(id, arg[a], 0);
    }
  } else {
    conjugate_2d(
        x, x, [&](int i, int j) { return L.at(i, j); }, y0, y1,
        [&](int a, int b, double val, int is, int js) {
          int id = g.find({lo0 + a, lo1 + b});
          if (id < 0) return;
          u[id] = val;
          check(id, is, js);
        });
  }
  if (boundary_hit) throw DomainTooSmall("legendre: supremum attained on the box boundary; enlarge box_radius");
  return u;
}

// phi(x) = max over P-grid nodes y of <x, y> - u(y), sampled on a box.
inline LogPotential inverse_legendre(const Field& u, const PolytopeGrid& g, const GridSpec& spec) {
  spec.validate();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> x = detail::axis(spec), y0, y1;
  int lo0, lo1;
  detail::grid_axes(g, y0, y1, lo0, lo1);
  LogPotential L{g.dim(), spec, {}};
  const int m = spec.nodes_per_axis;
  if (g.dim() == 1) {
    std::vector<double> c(y0.size(), inf);
    for (std::size_t a = 0; a < y0.size(); ++a) {
      int id = g.find({lo0 + static_cast<int>(a), 0});
      if (id >= 0) c[a] = u[id];
    }
    std::vector<int> arg;
    conjugate_1d(y0, c, x, L.phi, arg);
  } else {
    L.phi.assign(static_cast<std::size_t>(m) * m, 0);
    conjugate_2d(
        y0, y1,
        [&](int i, int j) {
          int id = g.find({lo0 + i, lo1 + j});
          return id >= 0 ? u[id] : inf;
        },
        x, x, [&](int a, int b, double val, int, int) { L.phi[static_cast<std::size_t>(a) * m + b] = val; });
  }
  return L;
}

// Symplectic form of a sampled Kaehler potential.
inline ToricMetric from_log_potential(const LogPotential& L, std::shared_ptr<const PolytopeGrid> grid) {
  Field u = legendre(L, *grid);
  return {grid, u - grid->guillemin()};
}

}  // namespace kstab
