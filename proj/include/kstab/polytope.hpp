#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/rational.hpp>

namespace kstab {

using Rational = boost::rational<long long>;
using IVec = std::vector<long long>;
using QVec = std::vector<Rational>;

inline double to_double(const Rational& q) {
  return static_cast<double>(q.numerator()) / static_cast<double>(q.denominator());
}

class PolytopeError : public std::runtime_error {
 public:
  enum Kind { Unbounded, OriginNotInterior, NonReflexive, Degenerate, UnknownName };
  PolytopeError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
  Kind kind;
};

struct Facet {
  IVec normal;
  long long offset = 1;
};

// Reflexive moment polytope {y : <n_i, y> >= -1}.
struct Polytope {
  int dim = 0;
  std::vector<Facet> facets;
  std::vector<QVec> vertices;  // counter-clockwise in 2D, ascending in 1D
  Rational volume;
  QVec barycenter;
  std::string name;

  // second moments about the origin, row-major n x n
  std::vector<Rational> second_moments;

  std::size_t num_facets() const { return facets.size(); }

  double ell(std::size_t i, const double* y) const {
    double s = static_cast<double>(facets[i].offset);
    for (int k = 0; k < dim; ++k) s += static_cast<double>(facets[i].normal[k]) * y[k];
    return s;
  }

  bool contains(const double* y, double tol = 1e-12) const {
    for (std::size_t i = 0; i < facets.size(); ++i)
      if (ell(i, y) < -tol) return false;
    return true;
  }

  double volume_d() const { return to_double(volume); }

  std::vector<double> barycenter_d() const {
    std::vector<double> b;
    for (const auto& q : barycenter) b.push_back(to_double(q));
    return b;
  }

  // covariance of the uniform probability measure on P
  std::vector<double> covariance_d() const {
    std::vector<double> c(dim * dim);
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j)
        c[i * dim + j] = to_double(second_moments[i * dim + j] / volume - barycenter[i] * barycenter[j]);
    return c;
  }
};

namespace detail {

inline bool is_integer(const Rational& q) { return q.denominator() == 1; }

inline Rational dot(const IVec& n, const QVec& y) {
  Rational s = 0;
  for (std::size_t k = 0; k < n.size(); ++k) s += Rational(n[k]) * y[k];
  return s;
}

inline void finish_1d(Polytope& P) {
  Rational lo, hi;
  bool has_lo = false, has_hi = false;
  for (const auto& f : P.facets) {
    long long a = f.normal[0];
    if (a == 0) throw PolytopeError(PolytopeError::Degenerate, "zero normal");
    Rational b(-f.offset, a);
    if (a > 0) {
      if (!has_lo || b > lo) lo = b;
      has_lo = true;
    } else {
      if (!has_hi || b < hi) hi = b;
      has_hi = true;
    }
  }
  if (!has_lo || !has_hi) throw PolytopeError(PolytopeError::Unbounded, "normals do not positively span R");
  if (!(lo < 0 && hi > 0)) throw PolytopeError(PolytopeError::OriginNotInterior, "origin not interior");
  P.vertices = {{lo}, {hi}};
  P.volume = hi - lo;
  P.barycenter = {(lo + hi) / 2};
  P.second_moments = {(hi * hi * hi - lo * lo * lo) / 3};
}

inline void finish_2d(Polytope& P) {
  const auto& F = P.facets;
  for (const auto& f : F)
    if (f.normal[0] == 0 && f.normal[1] == 0) throw PolytopeError(PolytopeError::Degenerate, "zero normal");

  // boundedness: angular gaps between consecutive normals all < pi
  std::vector<double> ang;
  for (const auto& f : F) ang.push_back(std::atan2(double(f.normal[1]), double(f.normal[0])));
  std::sort(ang.begin(), ang.end());
  for (std::size_t i = 0; i < ang.size(); ++i) {
    double next = (i + 1 < ang.size()) ? ang[i + 1] : ang[0] + 2 * M_PI;
    if (next - ang[i] >= M_PI - 1e-12)
      throw PolytopeError(PolytopeError::Unbounded, "normals do not positively span R^2");
  }

  std::vector<QVec> verts;
  for (std::size_t i = 0; i < F.size(); ++i) {
    for (std::size_t j = i + 1; j < F.size(); ++j) {
      long long a = F[i].normal[0], b = F[i].normal[1], c = F[j].normal[0], d = F[j].normal[1];
      long long det = a * d - b * c;
      if (det == 0) continue;
      // a y1 + b y2 = -o_i, c y1 + d y2 = -o_j
      long long ri = -F[i].offset, rj = -F[j].offset;
      QVec y = {Rational(ri * d - b * rj, det), Rational(a * rj - c * ri, det)};
      bool ok = true;
      for (const auto& f : F)
        if (dot(f.normal, y) < Rational(-f.offset)) {
          ok = false;
          break;
        }
      if (ok && std::find(verts.begin(), verts.end(), y) == verts.end()) verts.push_back(y);
    }
  }
  if (verts.size() < 3) throw PolytopeError(PolytopeError::Degenerate, "fewer than three vertices");
  std::sort(verts.begin(), verts.end(), [](const QVec& p, const QVec& q) {
    return std::atan2(to_double(p[1]), to_double(p[0])) < std::atan2(to_double(q[1]), to_double(q[0]));
  });
  auto lex = std::min_element(verts.begin(), verts.end(), [](const QVec& p, const QVec& q) {
    return p[0] < q[0] || (p[0] == q[0] && p[1] < q[1]);
  });
  std::rotate(verts.begin(), lex, verts.end());

  for (const auto& f : F) {
    int on = 0;
    for (const auto& v : verts)
      if (dot(f.normal, v) == Rational(-f.offset)) ++on;
    if (on < 2) throw PolytopeError(PolytopeError::Degenerate, "redundant facet normal");
  }

  Rational vol = 0, bx = 0, by = 0, sxx = 0, sxy = 0, syy = 0;
  for (std::size_t k = 0; k < verts.size(); ++k) {
    const auto& a = verts[k];
    const auto& b = verts[(k + 1) % verts.size()];
    Rational area = (a[0] * b[1] - a[1] * b[0]) / 2;
    if (area <= 0) throw PolytopeError(PolytopeError::OriginNotInterior, "origin not interior");
    vol += area;
    bx += area * (a[0] + b[0]) / 3;
    by += area * (a[1] + b[1]) / 3;
    Rational s0 = a[0] + b[0], s1 = a[1] + b[1];
    sxx += area / 12 * (a[0] * a[0] + b[0] * b[0] + s0 * s0);
    sxy += area / 12 * (a[0] * a[1] + b[0] * b[1] + s0 * s1);
    syy += area / 12 * (a[1] * a[1] + b[1] * b[1] + s1 * s1);
  }
  P.vertices = verts;
  P.volume = vol;
  P.barycenter = {bx / vol, by / vol};
  P.second_moments = {sxx, sxy, sxy, syy};
}

}  // namespace detail

inline Polytope from_facets(const std::vector<IVec>& normals, std::string name = {}) {
  if (normals.empty()) throw PolytopeError(PolytopeError::Degenerate, "no facets");
  Polytope P;
  P.dim = static_cast<int>(normals.front().size());
  if (P.dim != 1 && P.dim != 2) throw PolytopeError(PolytopeError::Degenerate, "dimension must be 1 or 2");
  for (const auto& n : normals) {
    if (static_cast<int>(n.size()) != P.dim) throw PolytopeError(PolytopeError::Degenerate, "mixed dimensions");
    P.facets.push_back({n, 1});
  }
  P.name = std::move(name);
  if (P.dim == 1)
    detail::finish_1d(P);
  else
    detail::finish_2d(P);
  for (const auto& v : P.vertices)
    for (const auto& c : v)
      if (!detail::is_integer(c)) throw PolytopeError(PolytopeError::NonReflexive, "vertex is not a lattice point");
  return P;
}

inline const std::map<std::string, std::vector<IVec>>& registry_normals() {
  static const std::map<std::string, std::vector<IVec>> reg = {
      {"P1", {{1}, {-1}}},
      {"P2", {{1, 0}, {0, 1}, {-1, -1}}},
      {"P1xP1", {{1, 0}, {0, 1}, {-1, 0}, {0, -1}}},
      {"Bl1P2", {{1, 0}, {0, 1}, {-1, -1}, {1, 1}}},
      {"Bl2P2", {{1, 0}, {1, 1}, {0, 1}, {-1, 0}, {-1, -1}}},
  };
  return reg;
}

inline Polytope registry(const std::string& name) {
  auto it = registry_normals().find(name);
  if (it == registry_normals().end()) throw PolytopeError(PolytopeError::UnknownName, "unknown polytope '" + name + "'");
  return from_facets(it->second, name);
}

// Integer points of the dilation kP.
inline std::vector<IVec> lattice_points(const Polytope& P, long long k) {
  if (k < 1) throw std::invalid_argument("lattice_points: k must be positive");
  std::vector<long long> lo(P.dim), hi(P.dim);
  for (int d = 0; d < P.dim; ++d) {
    Rational mn = P.vertices[0][d], mx = P.vertices[0][d];
    for (const auto& v : P.vertices) {
      mn = std::min(mn, v[d]);
      mx = std::max(mx, v[d]);
    }
    lo[d] = static_cast<long long>(std::floor(to_double(mn * k)));
    hi[d] = static_cast<long long>(std::ceil(to_double(mx * k)));
  }
  auto inside = [&](const IVec& u) {
    for (const auto& f : P.facets) {
      long long s = 0;
      for (int d = 0; d < P.dim; ++d) s += f.normal[d] * u[d];
      if (s < -k * f.offset) return false;
    }
    return true;
  };
  std::vector<IVec> out;
  if (P.dim == 1) {
    for (long long a = lo[0]; a <= hi[0]; ++a)
      if (inside({a})) out.push_back({a});
  } else {
    for (long long a = lo[0]; a <= hi[0]; ++a)
      for (long long b = lo[1]; b <= hi[1]; ++b)
        if (inside({a, b})) out.push_back({a, b});
  }
  return out;
}

struct Quadrature {
  int dim = 0;
  std::vector<std::array<double, 2>> nodes;
  std::vector<double> weights;
  int resolution = 0;

  double integrate(const std::vector<double>& values) const {
    double s = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * values[i];
    return s;
  }
};

namespace detail {

using Pt = std::array<double, 2>;

// Clip a convex polygon by every facet half-plane of P.
inline std::vector<Pt> clip_to(const Polytope& P, std::vector<Pt> poly) {
  for (const auto& f : P.facets) {
    std::vector<Pt> out;
    const double n0 = double(f.normal[0]), n1 = double(f.normal[1]), o = double(f.offset);
    for (std::size_t i = 0; i < poly.size() && !poly.empty(); ++i) {
      const Pt& a = poly[i];
      const Pt& b = poly[(i + 1) % poly.size()];
      double la = n0 * a[0] + n1 * a[1] + o, lb = n0 * b[0] + n1 * b[1] + o;
      if (la >= 0) out.push_back(a);
      if ((la >= 0) != (lb >= 0)) {
        double t = la / (la - lb);
        out.push_back({a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])});
      }
    }
    poly = std::move(out);
  }
  return poly;
}

inline double polygon_area(const std::vector<Pt>& p) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Pt& a = p[i];
    const Pt& b = p[(i + 1) % p.size()];
    s += a[0] * b[1] - a[1] * b[0];
  }
  return 0.5 * s;
}

}  // namespace detail

// Composite rule on squares of side 2/resolution clipped to P: Simpson on
// full squares, edge-midpoint rule on triangles of cut squares. Exact for
// quadratics on every cell.
inline Quadrature quadrature(const Polytope& P, int resolution) {
  if (resolution < 2) throw std::invalid_argument("quadrature: resolution must be >= 2");
  const int m = resolution + (resolution % 2);
  const double h = 1.0 / m;
  Quadrature Q;
  Q.dim = P.dim;
  Q.resolution = m;
  std::map<std::array<long long, 2>, double> grid_w;  // keyed by half-step index
  std::vector<std::pair<detail::Pt, double>> loose;
  auto add = [&](const detail::Pt& y, double w) {
    double a = y[0] * 2 * m, b = y[1] * 2 * m;
    long long ia = std::llround(a), ib = std::llround(b);
    if (std::abs(a - ia) < 1e-9 && std::abs(b - ib) < 1e-9)
      grid_w[{ia, ib}] += w;
    else
      loose.push_back({y, w});
  };
  long long lo[2] = {0, 0}, hi[2] = {0, 0};
  for (int d = 0; d < P.dim; ++d) {
    double mn = 1e300, mx = -1e300;
    for (const auto& v : P.vertices) {
      mn = std::min(mn, to_double(v[d]));
      mx = std::max(mx, to_double(v[d]));
    }
    lo[d] = static_cast<long long>(std::floor(mn * m / 2)) - 1;
    hi[d] = static_cast<long long>(std::ceil(mx * m / 2)) + 1;
  }
  if (P.dim == 1) {
    const double a = to_double(P.vertices[0][0]), b = to_double(P.vertices[1][0]);
    for (long long c = lo[0]; c < hi[0]; ++c) {
      double x0 = std::max(a, 2.0 * c * h), x1 = std::min(b, 2.0 * (c + 1) * h);
      if (x1 <= x0) continue;
      double len = x1 - x0;
      add({x0, 0}, len / 6);
      add({0.5 * (x0 + x1), 0}, 4 * len / 6);
      add({x1, 0}, len / 6);
    }
  } else {
    for (long long c0 = lo[0]; c0 < hi[0]; ++c0) {
      for (long long c1 = lo[1]; c1 < hi[1]; ++c1) {
        double x0 = 2.0 * c0 * h, y0 = 2.0 * c1 * h, s = 2 * h;
        std::vector<detail::Pt> sq = {{x0, y0}, {x0 + s, y0}, {x0 + s, y0 + s}, {x0, y0 + s}};
        auto poly = detail::clip_to(P, sq);
        if (poly.size() < 3) continue;
        double area = detail::polygon_area(poly);
        if (area <= 1e-14 * s * s) continue;
        if (std::abs(area - s * s) < 1e-12 * s * s) {
          const double w1[3] = {1, 4, 1};
          for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) add({x0 + i * h, y0 + j * h}, h * h / 9 * w1[i] * w1[j]);
          continue;
        }
        for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
          const auto& a = poly[0];
          const auto& b = poly[k];
          const auto& c = poly[k + 1];
          double A = std::abs(detail::polygon_area({a, b, c}));
          if (A <= 0) continue;
          add({0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])}, A / 3);
          add({0.5 * (b[0] + c[0]), 0.5 * (b[1] + c[1])}, A / 3);
          add({0.5 * (c[0] + a[0]), 0.5 * (c[1] + a[1])}, A / 3);
        }
      }
    }
  }
  for (const auto& [key, w] : grid_w) {
    if (w <= 0) continue;
    Q.nodes.push_back({key[0] / (2.0 * m), key[1] / (2.0 * m)});
    Q.weights.push_back(w);
  }
  for (const auto& [y, w] : loose) {
    Q.nodes.push_back(y);
    Q.weights.push_back(w);
  }
  return Q;
}

}  // namespace kstab
