#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "polytope.hpp"

namespace kstab {

using Field = Eigen::VectorXd;

class UnsupportedPolytope : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Stencil {
  std::vector<std::pair<int, double>> terms;

  double apply(const Field& v) const {
    double s = 0;
    for (const auto& [j, c] : terms) s += c * v[j];
    return s;
  }
  void add(int j, double c) {
    for (auto& t : terms)
      if (t.first == j) {
        t.second += c;
        return;
      }
    terms.emplace_back(j, c);
  }
  void axpy(double a, const Stencil& o) {
    for (const auto& [j, c] : o.terms) add(j, a * c);
  }
};

enum class NodeKind { Interior, Edge, Vertex };

struct GridNode {
  std::array<int, 2> idx{0, 0};
  std::array<double, 2> y{0, 0};
  NodeKind kind = NodeKind::Interior;
  std::vector<double> ell;
  std::array<Stencil, 2> grad;
  // curvature stencils: 2D interior {H11, H22, H12}; 1D interior {H}; 2D edge {tangential}
  std::vector<Stencil> curv;
  // Q = k0 + sum_r lin[r] * curv[r] + lambda * det(H)   (det only for 2D interior)
  double k0 = 0;
  std::vector<double> lin;
  double lambda = 0;
  bool use_det = false;
  double guillemin_prefactor = 1;  // exp(sum(1 - ell_i))
  double u_guillemin = 0;          // sum ell_i log ell_i
  std::array<double, 3> inv_hess_g{0, 0, 0};  // sum n n^T / ell (interior only)
};

// Nodes of P on the lattice (1/m) Z^n with m even, plus quadrature weights
// exact for quadratics and finite-difference stencils adapted to the boundary.
class PolytopeGrid {
 public:
  PolytopeGrid(const Polytope& P, int m) : P_(P), m_(m + (m % 2)) {
    if (m_ < 2) throw std::invalid_argument("PolytopeGrid: resolution must be >= 2");
    build_nodes();
    build_weights();
    build_stencils();
    build_boundary();
  }

  const Polytope& polytope() const { return P_; }
  int dim() const { return P_.dim; }
  int resolution() const { return m_; }
  double h() const { return 1.0 / m_; }
  std::size_t size() const { return nodes_.size(); }
  const GridNode& node(std::size_t i) const { return nodes_[i]; }
  const std::vector<GridNode>& nodes() const { return nodes_; }
  const Field& weights() const { return w_; }
  const Field& boundary_weights() const { return bw_; }
  double volume() const { return P_.volume_d(); }
  int origin() const { return find({0, 0}); }

  int find(std::array<int, 2> p) const {
    int a = p[0] - lo_[0], b = (P_.dim == 2) ? p[1] - lo_[1] : 0;
    if (a < 0 || a >= span_[0] || b < 0 || b >= span_[1]) return -1;
    return lookup_[static_cast<std::size_t>(a) * span_[1] + b];
  }

  double integrate(const Field& f) const { return w_.dot(f); }
  double mean(const Field& f) const { return w_.dot(f) / volume(); }

  Field coordinate(int d) const {
    Field c(size());
    for (std::size_t i = 0; i < size(); ++i) c[i] = nodes_[i].y[d];
    return c;
  }

  Field evaluate(const std::function<double(const double*)>& fn) const {
    Field c(size());
    for (std::size_t i = 0; i < size(); ++i) c[i] = fn(nodes_[i].y.data());
    return c;
  }

  // symplectic potential of the Guillemin metric
  Field guillemin() const {
    Field u(size());
    for (std::size_t i = 0; i < size(); ++i) u[i] = nodes_[i].u_guillemin;
    return u;
  }

  // weighted least-squares affine fit of f, returned as field values
  Field affine_part(const Field& f) const {
    const int n = P_.dim;
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(n + 1, n + 1);
    Eigen::VectorXd r = Eigen::VectorXd::Zero(n + 1);
    for (std::size_t i = 0; i < size(); ++i) {
      Eigen::VectorXd b(n + 1);
      b[0] = 1;
      for (int d = 0; d < n; ++d) b[d + 1] = nodes_[i].y[d];
      G += w_[i] * b * b.transpose();
      r += w_[i] * f[i] * b;
    }
    Eigen::VectorXd c = G.ldlt().solve(r);
    Field out(size());
    for (std::size_t i = 0; i < size(); ++i) {
      double s = c[0];
      for (int d = 0; d < n; ++d) s += c[d + 1] * nodes_[i].y[d];
      out[i] = s;
    }
    return out;
  }

 private:
  const Polytope P_;
  int m_;
  std::array<int, 2> lo_{0, 0}, span_{1, 1};
  std::vector<int> lookup_;
  std::vector<GridNode> nodes_;
  Field w_, bw_;

  bool has(std::array<int, 2> p) const { return find(p) >= 0; }

  void build_nodes() {
    const int n = P_.dim;
    std::array<int, 2> hi{0, 0};
    for (int d = 0; d < n; ++d) {
      double mn = 1e300, mx = -1e300;
      for (const auto& v : P_.vertices) {
        mn = std::min(mn, to_double(v[d]));
        mx = std::max(mx, to_double(v[d]));
      }
      lo_[d] = static_cast<int>(std::lround(mn * m_));
      hi[d] = static_cast<int>(std::lround(mx * m_));
      span_[d] = hi[d] - lo_[d] + 1;
    }
    lookup_.assign(static_cast<std::size_t>(span_[0]) * span_[1], -1);
    for (int a = 0; a < span_[0]; ++a) {
      for (int b = 0; b < span_[1]; ++b) {
        std::array<int, 2> p{lo_[0] + a, n == 2 ? lo_[1] + b : 0};
        GridNode g;
        g.idx = p;
        bool inside = true;
        int active = 0;
        for (const auto& f : P_.facets) {
          long long L = f.offset * m_;
          for (int d = 0; d < n; ++d) L += f.normal[d] * p[d];
          if (L < 0) {
            inside = false;
            break;
          }
          if (L == 0) ++active;
          g.ell.push_back(static_cast<double>(L) / m_);
        }
        if (!inside) continue;
        for (int d = 0; d < n; ++d) g.y[d] = static_cast<double>(p[d]) / m_;
        g.kind = active == 0 ? NodeKind::Interior : (active == 1 && n == 2 ? NodeKind::Edge : NodeKind::Vertex);
        lookup_[static_cast<std::size_t>(a) * span_[1] + b] = static_cast<int>(nodes_.size());
        nodes_.push_back(std::move(g));
      }
    }
  }

  void build_weights() {
    Quadrature q = quadrature(P_, m_);
    w_ = Field::Zero(size());
    for (std::size_t k = 0; k < q.weights.size(); ++k) {
      std::array<int, 2> p{0, 0};
      for (int d = 0; d < P_.dim; ++d) {
        double s = q.nodes[k][d] * m_;
        p[d] = static_cast<int>(std::lround(s));
        if (std::abs(s - p[d]) > 1e-9)
          throw UnsupportedPolytope("polytope edges are not aligned with the grid; use the generic quadrature");
      }
      int id = find(p);
      if (id < 0) throw UnsupportedPolytope("quadrature node outside grid");
      w_[id] += q.weights[k];
    }
  }

  // best first-derivative stencil along d: returns order (0 if none)
  int first_along(std::array<int, 2> p, std::array<int, 2> d, Stencil& s) const {
    auto at = [&](int k) { return std::array<int, 2>{p[0] + k * d[0], p[1] + k * d[1]}; };
    const double m = m_;
    s.terms.clear();
    if (has(at(1)) && has(at(-1))) {
      s.add(find(at(1)), m / 2);
      s.add(find(at(-1)), -m / 2);
      return 2;
    }
    for (int sg : {1, -1}) {
      if (has(at(sg)) && has(at(2 * sg))) {
        s.add(find(p), -1.5 * m * sg);
        s.add(find(at(sg)), 2 * m * sg);
        s.add(find(at(2 * sg)), -0.5 * m * sg);
        return 2;
      }
    }
    for (int sg : {1, -1}) {
      if (has(at(sg))) {
        s.add(find(p), -m * sg);
        s.add(find(at(sg)), m * sg);
        return 1;
      }
    }
    return 0;
  }

  int second_along(std::array<int, 2> p, std::array<int, 2> d, Stencil& s) const {
    auto at = [&](int k) { return std::array<int, 2>{p[0] + k * d[0], p[1] + k * d[1]}; };
    const double m2 = double(m_) * m_;
    s.terms.clear();
    if (has(at(1)) && has(at(-1))) {
      s.add(find(at(1)), m2);
      s.add(find(p), -2 * m2);
      s.add(find(at(-1)), m2);
      return 2;
    }
    for (int sg : {1, -1}) {
      if (has(at(sg)) && has(at(2 * sg)) && has(at(3 * sg))) {
        s.add(find(p), 2 * m2);
        s.add(find(at(sg)), -5 * m2);
        s.add(find(at(2 * sg)), 4 * m2);
        s.add(find(at(3 * sg)), -m2);
        return 2;
      }
    }
    for (int sg : {1, -1}) {
      if (has(at(sg)) && has(at(2 * sg))) {
        s.add(find(p), m2);
        s.add(find(at(sg)), -2 * m2);
        s.add(find(at(2 * sg)), m2);
        return 1;
      }
    }
    return 0;
  }

  void build_gradient(GridNode& g) {
    const auto p = g.idx;
    if (P_.dim == 1) {
      if (!first_along(p, {1, 0}, g.grad[0])) throw UnsupportedPolytope("no gradient stencil");
      return;
    }
    const std::array<std::array<int, 2>, 4> dirs{{{1, 0}, {0, 1}, {1, 1}, {1, -1}}};
    std::array<Stencil, 4> st;
    std::array<int, 4> ord{};
    for (int k = 0; k < 4; ++k) ord[k] = first_along(p, dirs[k], st[k]);
    int ba = -1, bb = -1, best = -1;
    for (int a = 0; a < 4; ++a)
      for (int b = a + 1; b < 4; ++b) {
        if (!ord[a] || !ord[b]) continue;
        int score = 100 * std::min(ord[a], ord[b]) + 10 * (ord[a] + ord[b]) - (a + b);
        if (score > best) {
          best = score;
          ba = a;
          bb = b;
        }
      }
    if (ba < 0) throw UnsupportedPolytope("no gradient stencil");
    Eigen::Matrix2d M;
    M << dirs[ba][0], dirs[ba][1], dirs[bb][0], dirs[bb][1];
    Eigen::Matrix2d Mi = M.inverse();
    for (int c = 0; c < 2; ++c) {
      g.grad[c].terms.clear();
      g.grad[c].axpy(Mi(c, 0), st[ba]);
      g.grad[c].axpy(Mi(c, 1), st[bb]);
    }
  }

  void build_stencils() {
    const int n = P_.dim;
    const auto& F = P_.facets;
    for (auto& g : nodes_) {
      build_gradient(g);
      double sum = 0, ulog = 0;
      for (double l : g.ell) {
        sum += 1 - l;
        if (l > 0) ulog += l * std::log(l);
      }
      g.guillemin_prefactor = std::exp(sum);
      g.u_guillemin = ulog;
      const std::size_t nf = F.size();
      auto prod_except = [&](std::size_t i, std::size_t j) {
        double s = 1;
        for (std::size_t k = 0; k < nf; ++k)
          if (k != i && k != j) s *= g.ell[k];
        return s;
      };
      double lam = 1;
      for (double l : g.ell) lam *= l;
      if (n == 1) {
        g.k0 = 0;
        for (std::size_t i = 0; i < nf; ++i) g.k0 += prod_except(i, i);
        if (g.kind == NodeKind::Interior) {
          g.curv.resize(1);
          if (!second_along(g.idx, {1, 0}, g.curv[0])) throw UnsupportedPolytope("no curvature stencil");
          g.lin = {lam};
          g.inv_hess_g[0] = 0;
          for (std::size_t i = 0; i < nf; ++i) g.inv_hess_g[0] += 1.0 / g.ell[i];
        } else {
          g.kind = NodeKind::Vertex;
        }
        continue;
      }
      g.k0 = 0;
      for (std::size_t i = 0; i < nf; ++i)
        for (std::size_t j = i + 1; j < nf; ++j) {
          double det = double(F[i].normal[0] * F[j].normal[1] - F[i].normal[1] * F[j].normal[0]);
          g.k0 += det * det * prod_except(i, j);
        }
      if (g.kind == NodeKind::Interior) {
        g.curv.resize(3);
        if (!second_along(g.idx, {1, 0}, g.curv[0]) || !second_along(g.idx, {0, 1}, g.curv[1]))
          throw UnsupportedPolytope("no curvature stencil");
        g.curv[2] = mixed(g.idx, g.curv[0], g.curv[1]);
        double c11 = 0, c22 = 0, c12 = 0;
        for (std::size_t i = 0; i < nf; ++i) {
          double a = -double(F[i].normal[1]), b = double(F[i].normal[0]);
          double Pi = prod_except(i, i);
          c11 += Pi * a * a;
          c22 += Pi * b * b;
          c12 += 2 * Pi * a * b;
          double n0 = F[i].normal[0], n1 = F[i].normal[1];
          g.inv_hess_g[0] += n0 * n0 / g.ell[i];
          g.inv_hess_g[1] += n1 * n1 / g.ell[i];
          g.inv_hess_g[2] += n0 * n1 / g.ell[i];
        }
        g.lin = {c11, c22, c12};
        g.lambda = lam;
        g.use_det = true;
      } else if (g.kind == NodeKind::Edge) {
        std::size_t k = 0;
        while (g.ell[k] != 0) ++k;
        std::array<int, 2> t{static_cast<int>(-F[k].normal[1]), static_cast<int>(F[k].normal[0])};
        g.curv.resize(1);
        if (!second_along(g.idx, t, g.curv[0])) throw UnsupportedPolytope("no tangential stencil");
        g.lin = {prod_except(k, k)};
      }
    }
  }

  Stencil mixed(std::array<int, 2> p, const Stencil& h11, const Stencil& h22) const {
    Stencil dp, dm, out;
    const double m2 = double(m_) * m_;
    auto centered = [&](std::array<int, 2> d, Stencil& s) {
      std::array<int, 2> a{p[0] + d[0], p[1] + d[1]}, b{p[0] - d[0], p[1] - d[1]};
      if (!has(a) || !has(b)) return false;
      s.terms.clear();
      s.add(find(a), m2);
      s.add(find(p), -2 * m2);
      s.add(find(b), m2);
      return true;
    };
    bool cp = centered({1, 1}, dp), cm = centered({1, -1}, dm);
    if (cp && cm) {
      out.axpy(0.25, dp);
      out.axpy(-0.25, dm);
      return out;
    }
    // H12 from one diagonal second derivative and the axis ones, centered first
    int op = cp ? 3 : second_along(p, {1, 1}, dp);
    int om = cm ? 3 : second_along(p, {1, -1}, dm);
    if (op >= om && op > 0) {
      out.axpy(0.5, dp);
      out.axpy(-0.5, h11);
      out.axpy(-0.5, h22);
      return out;
    }
    if (om > 0) {
      out.axpy(-0.5, dm);
      out.axpy(0.5, h11);
      out.axpy(0.5, h22);
      return out;
    }
    // corner differences
    for (int sa : {1, -1})
      for (int sb : {1, -1}) {
        std::array<int, 2> a{p[0] + sa, p[1]}, b{p[0], p[1] + sb}, c{p[0] + sa, p[1] + sb};
        if (has(a) && has(b) && has(c)) {
          double k = m2 * sa * sb;
          out.add(find(c), k);
          out.add(find(a), -k);
          out.add(find(b), -k);
          out.add(find(p), k);
          return out;
        }
      }
    throw UnsupportedPolytope("no mixed-derivative stencil");
  }

  void build_boundary() {
    bw_ = Field::Zero(size());
    if (P_.dim == 1) {
      for (std::size_t i = 0; i < size(); ++i)
        if (nodes_[i].kind != NodeKind::Interior) bw_[i] = 1;
      return;
    }
    const auto& V = P_.vertices;
    for (std::size_t k = 0; k < V.size(); ++k) {
      const auto& a = V[k];
      const auto& b = V[(k + 1) % V.size()];
      long long dx = (b[0] - a[0]).numerator(), dy = (b[1] - a[1]).numerator();
      long long g = std::gcd(std::abs(dx), std::abs(dy));
      std::array<int, 2> t{static_cast<int>(dx / g), static_cast<int>(dy / g)};
      std::array<int, 2> p0{static_cast<int>(a[0].numerator() * m_), static_cast<int>(a[1].numerator() * m_)};
      long long N = g * m_;
      for (long long s = 0; s <= N; ++s) {
        double c = (s == 0 || s == N) ? 1 : (s % 2 ? 4 : 2);
        int id = find({p0[0] + static_cast<int>(s) * t[0], p0[1] + static_cast<int>(s) * t[1]});
        if (id < 0) throw UnsupportedPolytope("edge node missing");
        bw_[id] += c / (3.0 * m_);
      }
    }
  }
};

}  // namespace kstab
