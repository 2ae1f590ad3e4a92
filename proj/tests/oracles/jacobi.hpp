#pragma once

// Cyclic Jacobi eigensolver for small dense symmetric matrices. Test-only
// oracle, written against plain std::vector so it shares nothing with the
// Eigen-based implementation it checks.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

struct EigenPairs {
  std::vector<double> values;  // ascending
  Matrix vectors;              // vectors[row][k] is component row of eigenvector k
};

inline EigenPairs jacobi_eigen(Matrix a) {
  const std::size_t n = a.size();
  Matrix v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x][x] < a[y][y]; });
  EigenPairs out;
  out.vectors.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t k = 0; k < n; ++k) {
    out.values.push_back(a[order[k]][order[k]]);
    for (std::size_t r = 0; r < n; ++r) out.vectors[r][k] = v[r][order[k]];
  }
  return out;
}

// Eccentricity scores by the same construction, computed from scratch.
inline std::vector<double> eccentricity(const Matrix& w, double cutoff = 0.9, std::size_t min_dims = 1) {
  const std::size_t n = w.size();
  std::vector<double> degree(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) degree[i] += w[i][j];
  Matrix lap(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double term = 0.0;
      if (i != j && degree[i] > 0 && degree[j] > 0) term = w[i][j] / std::sqrt(degree[i] * degree[j]);
      lap[i][j] = (i == j ? 1.0 : 0.0) - term;
    }
  }
  const auto eig = jacobi_eigen(lap);
  std::size_t keep = 0;
  while (keep < n && eig.values[keep] < cutoff) ++keep;
  keep = std::max(keep, std::min(min_dims, n));
  std::vector<double> centroid(keep, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < keep; ++k) centroid[k] += eig.vectors[r][k] / static_cast<double>(n);
  std::vector<double> out;
  for (std::size_t r = 0; r < n; ++r) {
    double sq = 0.0;
    for (std::size_t k = 0; k < keep; ++k) sq += std::pow(eig.vectors[r][k] - centroid[k], 2);
    out.push_back(-std::sqrt(sq));
  }
  return out;
}

}  // namespace oracle
