#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "permtour/permtour.hpp"

namespace th {

inline permtour::Permutation random_perm(std::size_t n, permtour::Rng& rng) {
  std::vector<std::size_t> m(n);
  std::iota(m.begin(), m.end(), std::size_t{0});
  rng.shuffle(m.begin(), m.end());
  return permtour::Permutation(std::move(m));
}

inline permtour::Matrix random_matrix(std::size_t r, std::size_t c, permtour::Rng& rng,
                                      double lo = -1.0, double hi = 1.0) {
  permtour::Matrix m(r, c);
  for (auto& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

// Random symmetric zero-diagonal "distance" matrix, not necessarily metric.
inline permtour::DistanceMatrix random_distances(std::size_t n, permtour::Rng& rng) {
  permtour::DistanceMatrix d{permtour::Matrix(n, n)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) d.d(i, j) = d.d(j, i) = rng.uniform(0.0, 2.0);
  return d;
}

// Exhaustive optimum over all orders starting at node 0.
inline double brute_force_tour(const permtour::DistanceMatrix& d) {
  std::vector<std::size_t> rest(d.n() - 1);
  std::iota(rest.begin(), rest.end(), std::size_t{1});
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = d(0, rest.front()) + d(rest.back(), 0);
    for (std::size_t k = 0; k + 1 < rest.size(); ++k) s += d(rest[k], rest[k + 1]);
    best = std::min(best, s);
  } while (std::next_permutation(rest.begin(), rest.end()));
  return best;
}

// Walks successors from node 0 and reports whether all n nodes are visited.
inline bool single_cycle(const std::vector<std::size_t>& succ) {
  std::vector<char> seen(succ.size(), 0);
  std::size_t cur = 0;
  for (std::size_t k = 0; k < succ.size(); ++k) {
    if (seen[cur]) return false;
    seen[cur] = 1;
    cur = succ[cur];
  }
  return cur == 0;
}

inline permtour::EuclideanInstance permuted(const permtour::EuclideanInstance& inst,
                                            const std::vector<std::size_t>& sigma) {
  // new node k is old node sigma[k]
  permtour::EuclideanInstance out = inst;
  for (std::size_t k = 0; k < sigma.size(); ++k) out.coords[k] = inst.coords[sigma[k]];
  return out;
}

inline permtour::EuclideanInstance transformed(const permtour::EuclideanInstance& inst, double angle,
                                               double tx, double ty) {
  permtour::EuclideanInstance out = inst;
  const double c = std::cos(angle), s = std::sin(angle);
  for (auto& p : out.coords) {
    const double x = p.x, y = p.y;
    p = {c * x - s * y + tx, s * x + c * y + ty};
  }
  return out;
}

// Points stretched along one axis so the covariance eigenvalues are well apart.
inline permtour::EuclideanInstance anisotropic(std::size_t n, std::uint64_t seed) {
  auto inst = permtour::generate_one(n, seed, 0);
  for (auto& p : inst.coords) p.x *= 3.0;
  return inst;
}

inline permtour::EuclideanInstance regular_polygon(std::size_t n, double radius = 1.0) {
  permtour::EuclideanInstance inst;
  for (std::size_t k = 0; k < n; ++k) {
    const double a = 2.0 * std::acos(-1.0) * static_cast<double>(k) / static_cast<double>(n);
    inst.coords.push_back({0.5 + radius * std::cos(a), 0.5 + radius * std::sin(a)});
  }
  return inst;
}

}  // namespace th
