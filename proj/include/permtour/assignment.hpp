#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "permtour/error.hpp"
#include "permtour/matrix.hpp"
#include "permtour/perm.hpp"
#include "permtour/sinkhorn.hpp"

namespace permtour {

/// Minimum-cost perfect assignment via the Hungarian method with row/column
/// potentials (shortest augmenting paths), O(n^3).
///
/// Rows are inserted in increasing index order; within each augmenting search
/// columns are scanned in increasing index and a new minimum must be strictly
/// smaller, so among equal reduced costs the lowest column wins. That scan
/// order fixes the result whenever several optimal assignments exist.
inline Permutation solve_assignment(const Matrix& cost) {
  require(cost.square(), ErrorCode::ShapeMismatch,
          "solve_assignment: cost matrix must be square");
  require(cost.rows() >= 1, ErrorCode::Validation, "solve_assignment: empty matrix");
  require(cost.all_finite(), ErrorCode::NonFinite,
          "solve_assignment: cost matrix has non-finite entries");

  const std::size_t n = cost.rows();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based bookkeeping; column 0 is the virtual source.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);

  for (std::size_t row = 1; row <= n; ++row) {
    match[0] = row;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<std::size_t> map(n);
  for (std::size_t j = 1; j <= n; ++j) map[match[j] - 1] = j - 1;
  return Permutation(std::move(map));
}

inline double assignment_cost(const Matrix& cost, const Permutation& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += cost(i, p[i]);
  return s;
}

/// Hard decode: Hungarian on -(logits + gamma * eps) / tau. With gamma == 0
/// the positive 1/tau factor cannot change the argmin.
inline Permutation decode(const Matrix& logits, const SinkhornConfig& cfg) {
  Matrix c = perturbed_logits(logits, cfg);
  for (auto& v : c.data()) v = -v;
  return solve_assignment(c);
}

}  // namespace permtour
