#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

namespace kstab {

// Exact discrete conjugate r(q) = max_k (q p_k - c_k) for ascending p and
// ascending q, in linear time through the lower convex hull of (p_k, c_k).
// Entries with c_k = +inf are skipped.
inline void conjugate_1d(const std::vector<double>& p, const std::vector<double>& c, const std::vector<double>& q,
                         std::vector<double>& out, std::vector<int>& arg) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<int> hull;
  for (int k = 0; k < static_cast<int>(p.size()); ++k) {
    if (!(c[k] < inf)) continue;
    while (hull.size() >= 2) {
      int a = hull[hull.size() - 2], b = hull.back();
      double cross = (p[b] - p[a]) * (c[k] - c[a]) - (c[b] - c[a]) * (p[k] - p[a]);
      if (cross <= 0)
        hull.pop_back();
      else
        break;
    }
    hull.push_back(k);
  }
  out.assign(q.size(), -inf);
  arg.assign(q.size(), -1);
  if (hull.empty()) return;
  std::size_t j = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    while (j + 1 < hull.size()) {
      int a = hull[j], b = hull[j + 1];
      double slope = (c[b] - c[a]) / (p[b] - p[a]);
      if (q[i] >= slope)
        ++j;
      else
        break;
    }
    out[i] = q[i] * p[hull[j]] - c[hull[j]];
    arg[i] = hull[j];
  }
}

// Separable 2D conjugate of data on a rectangular lattice p0 x p1 (values
// +inf where absent), evaluated on the lattice q0 x q1. The visitor receives
// (a, b, value, i*, j*) for every output node, column by column.
inline void conjugate_2d(const std::vector<double>& p0, const std::vector<double>& p1,
                         const std::function<double(int, int)>& data, const std::vector<double>& q0,
                         const std::vector<double>& q1,
                         const std::function<void(int, int, double, int, int)>& visit) {
  const double inf = std::numeric_limits<double>::infinity();
  const int n0 = static_cast<int>(p0.size()), n1 = static_cast<int>(p1.size());
  const int m0 = static_cast<int>(q0.size()), m1 = static_cast<int>(q1.size());
  std::vector<double> G(static_cast<std::size_t>(n0) * m1);
  std::vector<int> J(static_cast<std::size_t>(n0) * m1);
  std::vector<double> row(n1), out;
  std::vector<int> arg;
  for (int i = 0; i < n0; ++i) {
    for (int j = 0; j < n1; ++j) row[j] = data(i, j);
    conjugate_1d(p1, row, q1, out, arg);
    for (int b = 0; b < m1; ++b) {
      G[static_cast<std::size_t>(i) * m1 + b] = out[b];
      J[static_cast<std::size_t>(i) * m1 + b] = arg[b];
    }
  }
  std::vector<double> col(n0);
  for (int b = 0; b < m1; ++b) {
    for (int i = 0; i < n0; ++i) {
      double g = G[static_cast<std::size_t>(i) * m1 + b];
      col[i] = std::isfinite(g) ? -g : inf;
    }
    conjugate_1d(p0, col, q0, out, arg);
    for (int a = 0; a < m0; ++a) {
      int is = arg[a];
      visit(a, b, out[a], is, is >= 0 ? J[static_cast<std::size_t>(is) * m1 + b] : -1);
    }
  }
}

}  // namespace kstab
