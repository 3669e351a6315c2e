#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "cigit/error.hpp"
#include "cigit/linalg.hpp"

namespace cigit {

/// Hungarian algorithm (shortest augmenting paths with potentials, O(n^3)).
/// Returns, for every row of `weight`, the column it is matched to so that the
/// total weight is maximal; rows left unmatched in a wide/tall problem get -1.
inline std::vector<Index> max_weight_matching(const Matrix& weight) {
  const Index rows = weight.rows(), cols = weight.cols();
  const Index n = std::max(rows, cols);
  if (n == 0) return {};
  const double top = weight.size() > 0 ? weight.maxCoeff() : 0.0;
  // Square cost matrix, padded with zero-weight entries.
  Matrix cost = Matrix::Constant(n, n, top);
  cost.topLeftCorner(rows, cols) = (top - weight.array()).matrix();

  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Index> p(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<bool> used(static_cast<std::size_t>(n + 1), false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const Index i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        if (used[uj]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[uj];
        if (cur < minv[uj]) {
          minv[uj] = cur;
          way[uj] = j0;
        }
        if (minv[uj] < delta) {
          delta = minv[uj];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        if (used[uj]) {
          u[static_cast<std::size_t>(p[uj])] += delta;
          v[uj] -= delta;
        } else {
          minv[uj] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<Index> match(static_cast<std::size_t>(rows), -1);
  for (Index j = 1; j <= n; ++j) {
    const Index i = p[static_cast<std::size_t>(j)];
    if (i >= 1 && i <= rows && j <= cols) match[static_cast<std::size_t>(i - 1)] = j - 1;
  }
  return match;
}

}  // namespace cigit
