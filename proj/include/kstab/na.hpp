#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "polytope.hpp"

namespace kstab {

class TrivialConfiguration : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DenominatorMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// f(y) = max_j (<a_j, y> + b_j) on P: a toric test configuration.
struct PLConvex {
  int dim = 1;
  std::vector<std::array<double, 2>> a;
  std::vector<double> b;
  // exact coefficients when the function was built from rationals
  std::vector<std::array<Rational, 2>> aq;
  std::vector<Rational> bq;

  bool exact() const { return !aq.empty(); }
  std::size_t pieces() const { return b.size(); }

  double affine(std::size_t j, const double* y) const {
    double s = b[j];
    for (int d = 0; d < dim; ++d) s += a[j][d] * y[d];
    return s;
  }
  double operator()(const double* y) const {
    double s = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < b.size(); ++j) s = std::max(s, affine(j, y));
    return s;
  }
  double at_origin() const { return *std::max_element(b.begin(), b.end()); }

  static PLConvex from_doubles(int dim, const std::vector<std::vector<double>>& rows) {
    PLConvex f;
    f.dim = dim;
    for (const auto& r : rows) {
      if (static_cast<int>(r.size()) != dim + 1) throw std::invalid_argument("PLConvex: piece must have dim+1 entries");
      std::array<double, 2> a{0, 0};
      for (int d = 0; d < dim; ++d) a[d] = r[d];
      f.a.push_back(a);
      f.b.push_back(r[dim]);
    }
    if (f.b.empty()) throw std::invalid_argument("PLConvex: at least one piece required");
    return f;
  }

  static PLConvex from_rationals(int dim, const std::vector<std::vector<Rational>>& rows) {
    PLConvex f;
    f.dim = dim;
    for (const auto& r : rows) {
      if (static_cast<int>(r.size()) != dim + 1) throw std::invalid_argument("PLConvex: piece must have dim+1 entries");
      std::array<Rational, 2> aq{Rational(0), Rational(0)};
      std::array<double, 2> a{0, 0};
      for (int d = 0; d < dim; ++d) {
        aq[d] = r[d];
        a[d] = to_double(r[d]);
      }
      f.aq.push_back(aq);
      f.bq.push_back(r[dim]);
      f.a.push_back(a);
      f.b.push_back(to_double(r[dim]));
    }
    if (f.b.empty()) throw std::invalid_argument("PLConvex: at least one piece required");
    return f;
  }
};

namespace detail {

template <class T>
using P2 = std::array<T, 2>;

// keep c0 x + c1 y + c2 >= 0
template <class T>
std::vector<P2<T>> clip_half(const std::vector<P2<T>>& poly, T c0, T c1, T c2) {
  std::vector<P2<T>> out;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % n];
    T lp = c0 * p[0] + c1 * p[1] + c2, lq = c0 * q[0] + c1 * q[1] + c2;
    if (lp >= T(0)) out.push_back(p);
    if ((lp > T(0) && lq < T(0)) || (lp < T(0) && lq > T(0))) {
      T t = lp / (lp - lq);
      out.push_back({p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])});
    }
  }
  return out;
}

template <class T>
T area2(const std::vector<P2<T>>& p) {
  T s(0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& a = p[i];
    const auto& b = p[(i + 1) % p.size()];
    s += a[0] * b[1] - a[1] * b[0];
  }
  return s;
}

template <class T>
std::vector<P2<T>> polygon_of(const Polytope& P) {
  std::vector<P2<T>> poly;
  for (const auto& v : P.vertices) {
    if constexpr (std::is_same_v<T, Rational>)
      poly.push_back({v[0], v[1]});
    else
      poly.push_back({to_double(v[0]), to_double(v[1])});
  }
  return poly;
}

// complete homogeneous symmetric polynomial h_k of the given values
inline double complete_h(const std::vector<double>& z, int k) {
  std::vector<double> h(k + 1, 0.0);
  h[0] = 1;
  for (double x : z)
    for (int j = 1; j <= k; ++j) h[j] += x * h[j - 1];
  return h[k];
}

inline double factorial(int n) {
  double f = 1;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

// divided difference of exp at 2 or 3 nodes
inline double exp_dd(std::vector<double> z) {
  std::sort(z.begin(), z.end());
  const int q = static_cast<int>(z.size()) - 1;
  const double spread = z.back() - z.front();
  if (spread < 1.0) {
    double m = 0;
    for (double x : z) m += x;
    m /= z.size();
    std::vector<double> d;
    for (double x : z) d.push_back(x - m);
    std::vector<double> h(40, 0.0);
    h[0] = 1;
    for (double x : d)
      for (int j = 1; j < 40; ++j) h[j] += x * h[j - 1];
    double s = 0, fact = factorial(q);
    for (int k = 0; k < 40; ++k) {
      fact *= (k + q == 0) ? 1 : (k == 0 ? 1 : (k + q));
      s += h[k] / fact;
    }
    return std::exp(m) * s;
  }
  if (q == 1) return std::exp(z[0]) * std::expm1(z[1] - z[0]) / (z[1] - z[0]);
  return (exp_dd({z[1], z[2]}) - exp_dd({z[0], z[1]})) / (z[2] - z[0]);
}

}  // namespace detail

// Cells of affine activity of f intersected with P.
struct PLCell {
  std::size_t piece;
  std::vector<std::array<double, 2>> poly;  // 2D polygon, or {lo, hi} in component 0 for 1D
};

inline std::vector<PLCell> cells(const PLConvex& f, const Polytope& P) {
  std::vector<PLCell> out;
  const std::size_t K = f.pieces();
  for (std::size_t j = 0; j < K; ++j) {
    if (P.dim == 1) {
      double lo = to_double(P.vertices[0][0]), hi = to_double(P.vertices[1][0]);
      for (std::size_t k = 0; k < K && lo < hi; ++k) {
        if (k == j) continue;
        double c1 = f.a[j][0] - f.a[k][0], c0 = f.b[j] - f.b[k];
        bool dup = c1 == 0 && c0 == 0;
        if (dup) {
          if (k < j) hi = lo;
          continue;
        }
        if (c1 == 0) {
          if (c0 < 0) hi = lo;
        } else if (c1 > 0) {
          lo = std::max(lo, -c0 / c1);
        } else {
          hi = std::min(hi, -c0 / c1);
        }
      }
      if (hi > lo) out.push_back({j, {{lo, 0}, {hi, 0}}});
      continue;
    }
    auto poly = detail::polygon_of<double>(P);
    for (std::size_t k = 0; k < K && poly.size() >= 3; ++k) {
      if (k == j) continue;
      double c0 = f.a[j][0] - f.a[k][0], c1 = f.a[j][1] - f.a[k][1], c2 = f.b[j] - f.b[k];
      if (c0 == 0 && c1 == 0 && c2 == 0) {
        if (k < j) poly.clear();
        continue;
      }
      poly = detail::clip_half(poly, c0, c1, c2);
    }
    if (poly.size() >= 3 && detail::area2(poly) > 1e-14) out.push_back({j, poly});
  }
  return out;
}

// Remove pieces that are never active on P.
inline PLConvex pruned(const PLConvex& f, const Polytope& P) {
  auto cs = cells(f, P);
  std::vector<bool> keep(f.pieces(), false);
  for (const auto& c : cs) keep[c.piece] = true;
  PLConvex g;
  g.dim = f.dim;
  for (std::size_t j = 0; j < f.pieces(); ++j) {
    if (!keep[j]) continue;
    g.a.push_back(f.a[j]);
    g.b.push_back(f.b[j]);
    if (f.exact()) {
      g.aq.push_back(f.aq[j]);
      g.bq.push_back(f.bq[j]);
    }
  }
  return g;
}

// Integrate G(z) over P where z = f - c is affine on each cell; tri(A, z[3])
// and seg(L, z[2]) integrate over a triangle / segment with vertex values z.
template <class Tri, class Seg>
double integrate_pl(const PLConvex& f, const Polytope& P, double c, bool split_at_zero, Tri tri, Seg seg) {
  double total = 0;
  for (const auto& cell : cells(f, P)) {
    const std::size_t j = cell.piece;
    if (P.dim == 1) {
      double lo = cell.poly[0][0], hi = cell.poly[1][0];
      auto val = [&](double y) { return f.a[j][0] * y + f.b[j] - c; };
      std::vector<std::pair<double, double>> parts = {{lo, hi}};
      if (split_at_zero && f.a[j][0] != 0) {
        double r = -(f.b[j] - c) / f.a[j][0];
        if (r > lo && r < hi) parts = {{lo, r}, {r, hi}};
      }
      for (auto [x0, x1] : parts) total += seg(x1 - x0, std::array<double, 2>{val(x0), val(x1)});
      continue;
    }
    std::vector<std::vector<std::array<double, 2>>> polys = {cell.poly};
    const double c0 = f.a[j][0], c1 = f.a[j][1], c2 = f.b[j] - c;
    if (split_at_zero && (c0 != 0 || c1 != 0)) {
      polys = {detail::clip_half(cell.poly, c0, c1, c2), detail::clip_half(cell.poly, -c0, -c1, -c2)};
    }
    for (const auto& poly : polys) {
      for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
        std::array<std::array<double, 2>, 3> T = {poly[0], poly[k], poly[k + 1]};
        double A = 0.5 * std::abs((T[1][0] - T[0][0]) * (T[2][1] - T[0][1]) - (T[2][0] - T[0][0]) * (T[1][1] - T[0][1]));
        if (A <= 0) continue;
        std::array<double, 3> z;
        for (int i = 0; i < 3; ++i) z[i] = c0 * T[i][0] + c1 * T[i][1] + c2;
        total += tri(A, z);
      }
    }
  }
  return total;
}

inline double pl_mean(const PLConvex& f, const Polytope& P) {
  double s = integrate_pl(
      f, P, 0.0, false, [](double A, const std::array<double, 3>& z) { return A * (z[0] + z[1] + z[2]) / 3; },
      [](double L, const std::array<double, 2>& z) { return L * (z[0] + z[1]) / 2; });
  return s / P.volume_d();
}

// (1/V) int_P f dy in exact arithmetic (requires rational coefficients).
inline Rational pl_mean_exact(const PLConvex& f, const Polytope& P) {
  if (!f.exact()) throw std::invalid_argument("pl_mean_exact: coefficients are not rational");
  const std::size_t K = f.pieces();
  Rational total(0);
  for (std::size_t j = 0; j < K; ++j) {
    if (P.dim == 1) {
      Rational lo = P.vertices[0][0], hi = P.vertices[1][0];
      bool empty = false;
      for (std::size_t k = 0; k < K && !empty; ++k) {
        if (k == j) continue;
        Rational c1 = f.aq[j][0] - f.aq[k][0], c0 = f.bq[j] - f.bq[k];
        if (c1 == Rational(0) && c0 == Rational(0)) {
          if (k < j) empty = true;
        } else if (c1 == Rational(0)) {
          if (c0 < Rational(0)) empty = true;
        } else if (c1 > Rational(0)) {
          lo = std::max(lo, -c0 / c1);
        } else {
          hi = std::min(hi, -c0 / c1);
        }
      }
      if (empty || hi <= lo) continue;
      total += (hi - lo) * (f.aq[j][0] * (lo + hi) / 2 + f.bq[j]);
      continue;
    }
    auto poly = detail::polygon_of<Rational>(P);
    for (std::size_t k = 0; k < K && poly.size() >= 3; ++k) {
      if (k == j) continue;
      Rational c0 = f.aq[j][0] - f.aq[k][0], c1 = f.aq[j][1] - f.aq[k][1], c2 = f.bq[j] - f.bq[k];
      if (c0 == Rational(0) && c1 == Rational(0) && c2 == Rational(0)) {
        if (k < j) poly.clear();
        continue;
      }
      poly = detail::clip_half(poly, c0, c1, c2);
    }
    if (poly.size() < 3) continue;
    for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
      const auto &p0 = poly[0], &p1 = poly[k], &p2 = poly[k + 1];
      Rational A = ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])) / 2;
      if (A < Rational(0)) A = -A;
      Rational cx = (p0[0] + p1[0] + p2[0]) / 3, cy = (p0[1] + p1[1] + p2[1]) / 3;
      total += A * (f.aq[j][0] * cx + f.aq[j][1] * cy + f.bq[j]);
    }
  }
  return total / P.volume;
}

// (1/V) int_P |f - c|^p dy; exact for integer p.
inline double pl_abs_moment(const PLConvex& f, const Polytope& P, double c, double p) {
  const bool integer = p == std::round(p) && p >= 0 && p <= 60;
  const int ip = static_cast<int>(std::round(p));
  auto tri = [&](double A, const std::array<double, 3>& z) {
    std::vector<double> az = {std::abs(z[0]), std::abs(z[1]), std::abs(z[2])};
    if (integer) return A * 2 * detail::factorial(ip) / detail::factorial(ip + 2) * detail::complete_h(az, ip);
    // degree-5 Dunavant rule
    static const double W[7] = {0.225, 0.132394152788506, 0.132394152788506, 0.132394152788506,
                                0.125939180544827, 0.125939180544827, 0.125939180544827};
    static const double B[7][3] = {{1.0 / 3, 1.0 / 3, 1.0 / 3},
                                   {0.059715871789770, 0.470142064105115, 0.470142064105115},
                                   {0.470142064105115, 0.059715871789770, 0.470142064105115},
                                   {0.470142064105115, 0.470142064105115, 0.059715871789770},
                                   {0.797426985353087, 0.101286507323456, 0.101286507323456},
                                   {0.101286507323456, 0.797426985353087, 0.101286507323456},
                                   {0.101286507323456, 0.101286507323456, 0.797426985353087}};
    double s = 0;
    for (int q = 0; q < 7; ++q) s += W[q] * std::pow(B[q][0] * az[0] + B[q][1] * az[1] + B[q][2] * az[2], p);
    return A * s;
  };
  auto seg = [&](double L, const std::array<double, 2>& z) {
    std::vector<double> az = {std::abs(z[0]), std::abs(z[1])};
    if (integer) return L / (ip + 1) * detail::complete_h(az, ip);
    double lo = std::min(az[0], az[1]), hi = std::max(az[0], az[1]);
    if (hi - lo < 1e-300) return L * std::pow(hi, p);
    return L * (std::pow(hi, p + 1) - std::pow(lo, p + 1)) / ((p + 1) * (hi - lo));
  };
  return integrate_pl(f, P, c, true, tri, seg) / P.volume_d();
}

// log (1/V) int_P e^{s f} dy, evaluated stably.
inline double pl_log_mean_exp(const PLConvex& f, const Polytope& P, double s = 1.0) {
  double mx = -std::numeric_limits<double>::infinity();
  for (const auto& v : P.vertices) {
    double y[2] = {to_double(v[0]), P.dim == 2 ? to_double(v[1]) : 0.0};
    mx = std::max(mx, s * f(y));
  }
  PLConvex g = f;
  for (auto& a : g.a)
    for (auto& x : a) x *= s;
  for (auto& b : g.b) b *= s;
  double acc = integrate_pl(
      g, P, mx, false, [](double A, const std::array<double, 3>& z) { return 2 * A * detail::exp_dd({z[0], z[1], z[2]}); },
      [](double L, const std::array<double, 2>& z) { return L * detail::exp_dd({z[0], z[1]}); });
  return mx + std::log(acc / P.volume_d());
}

struct NAReport {
  double ena = 0, lna = 0, dna = 0;
  std::map<double, double> norm_p;
  double h_invariant = 0;
  double F = 0;  // -log (1/V) int e^f
  double mean = 0;
};

inline NAReport na_report(const PLConvex& f, const Polytope& P, const std::vector<double>& ps = {1, 2, 3}) {
  NAReport r;
  r.mean = f.exact() ? to_double(pl_mean_exact(f, P)) : pl_mean(f, P);
  r.ena = -r.mean;
  r.lna = 0.0 - f.at_origin();  // avoids -0
  r.dna = r.lna - r.ena;
  for (double p : ps) r.norm_p[p] = std::pow(pl_abs_moment(f, P, r.mean, p), 1.0 / p);
  r.F = -pl_log_mean_exp(f, P);
  r.h_invariant = -r.lna + r.F;
  return r;
}

inline double norm2(const PLConvex& f, const Polytope& P) {
  double mean = pl_mean(f, P);
  return std::sqrt(pl_abs_moment(f, P, mean, 2));
}

// -D^NA / |f|_2, homogeneous of degree zero.
inline double ratio(const PLConvex& f, const Polytope& P) {
  const double mean = f.exact() ? to_double(pl_mean_exact(f, P)) : pl_mean(f, P);
  const double n2 = std::sqrt(pl_abs_moment(f, P, mean, 2));
  if (!(n2 > 1e-10)) throw TrivialConfiguration("ratio: norm_2 vanishes");
  return (f.at_origin() - mean) / n2;
}

struct LatticeOracle {
  double ena_k = 0, F_k = 0, norm2_k = 0;
  long long N_k = 0;
};

// Weight description of the invariants from lambda_u = -k f(u/k) on kP.
inline LatticeOracle lattice_oracle(const PLConvex& f, const Polytope& P, long long k, long long shift = 0) {
  if (!f.exact()) throw DenominatorMismatch("lattice_oracle: coefficients must be rational");
  for (std::size_t j = 0; j < f.pieces(); ++j) {
    for (int d = 0; d < P.dim; ++d)
      if (f.aq[j][d].denominator() != 1) throw DenominatorMismatch("lattice_oracle: slopes must be integers");
    if ((f.bq[j] * k).denominator() != 1) throw DenominatorMismatch("lattice_oracle: k is not a multiple of the denominators");
  }
  auto pts = lattice_points(P, k);
  std::vector<long long> lam(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    long long best = std::numeric_limits<long long>::min();
    for (std::size_t j = 0; j < f.pieces(); ++j) {
      long long s = (f.bq[j] * k).numerator();
      for (int d = 0; d < P.dim; ++d) s += f.aq[j][d].numerator() * pts[i][d];
      best = std::max(best, s);
    }
    lam[i] = -best + shift * k;
  }
  LatticeOracle o;
  o.N_k = static_cast<long long>(pts.size());
  const double N = static_cast<double>(o.N_k), kk = static_cast<double>(k);
  long double sum = 0;
  for (long long l : lam) sum += l;
  o.ena_k = static_cast<double>(sum / (kk * N));
  double mx = -std::numeric_limits<double>::infinity();
  for (long long l : lam) mx = std::max(mx, -l / kk);
  double acc = 0;
  for (long long l : lam) acc += std::exp(-l / kk - mx);
  o.F_k = -(mx + std::log(acc / N));
  const double mean = static_cast<double>(sum / N) / kk;
  double var = 0;
  for (long long l : lam) var += (l / kk - mean) * (l / kk - mean);
  o.norm2_k = std::sqrt(var / N);
  return o;
}

}  // namespace kstab
