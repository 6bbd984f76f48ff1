#pragma once

// Classical comparators: greedy nearest neighbour, 2-opt, and the Held-Karp
// dynamic program as an exact oracle for small n.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "permtour/error.hpp"
#include "permtour/instance.hpp"
#include "permtour/perm.hpp"
#include "permtour/rng.hpp"

namespace permtour {

enum class NnStart { Fixed0, BestOfAll };
enum class TwoOptInit { NearestNeighbor, Random };
enum class TwoOptStrategy { FirstImprovement, BestImprovement };

struct BaselineConfig {
  NnStart nn_start = NnStart::Fixed0;
  TwoOptInit two_opt_init = TwoOptInit::NearestNeighbor;
  TwoOptStrategy two_opt_strategy = TwoOptStrategy::FirstImprovement;
  std::size_t max_sweeps = std::numeric_limits<std::size_t>::max();
  std::uint64_t seed = 0;  // random init only

  void validate() const {
    require(max_sweeps >= 1, ErrorCode::Validation, "BaselineConfig: max_sweeps must be >= 1");
  }
};

inline constexpr std::size_t kHeldKarpMaxN = 18;

/// Nearest-neighbour tour from `start`; ties go to the lowest index.
inline Tour greedy_nn_from(const DistanceMatrix& d, std::size_t start) {
  const std::size_t n = d.n();
  require(n >= 3, ErrorCode::Validation, "greedy_nn: n must be >= 3");
  require(start < n, ErrorCode::Validation, "greedy_nn: start out of range");
  std::vector<char> used(n, 0);
  std::vector<std::size_t> order;
  order.reserve(n);
  std::size_t cur = start;
  used[cur] = 1;
  order.push_back(cur);
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t best = n;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (!used[j] && d(cur, j) < bd) {
        bd = d(cur, j);
        best = j;
      }
    used[best] = 1;
    order.push_back(best);
    cur = best;
  }
  return make_tour(d, std::move(order));
}

inline Tour greedy_nn(const DistanceMatrix& d, const BaselineConfig& cfg = {}) {
  if (cfg.nn_start == NnStart::Fixed0) return greedy_nn_from(d, 0);
  Tour best = greedy_nn_from(d, 0);
  for (std::size_t s = 1; s < d.n(); ++s) {
    Tour t = greedy_nn_from(d, s);
    if (t.length < best.length) best = std::move(t);
  }
  return best;
}

/// Improves `init` by segment reversals. Scans pairs (i, j), i < j, in
/// lexicographic order; a move replaces edges (a,b), (c,e) with (a,c), (b,e).
inline Tour two_opt(const DistanceMatrix& d, const Tour& init, const BaselineConfig& cfg = {}) {
  cfg.validate();
  const std::size_t n = d.n();
  require(init.size() == n, ErrorCode::ShapeMismatch, "two_opt: tour size mismatch");
  std::vector<std::size_t> t = init.order;
  Permutation check(t);
  (void)check;
  const double eps = 1e-12;

  auto gain = [&](std::size_t i, std::size_t j) {
    const std::size_t a = t[i], b = t[i + 1], c = t[j], e = t[(j + 1) % n];
    return d(a, b) + d(c, e) - d(a, c) - d(b, e);
  };
  auto apply = [&](std::size_t i, std::size_t j) {
    std::reverse(t.begin() + static_cast<std::ptrdiff_t>(i + 1),
                 t.begin() + static_cast<std::ptrdiff_t>(j + 1));
  };

  for (std::size_t sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
    bool improved = false;
    if (cfg.two_opt_strategy == TwoOptStrategy::FirstImprovement) {
      for (std::size_t i = 0; i + 2 < n; ++i)
        for (std::size_t j = i + 2; j < n; ++j) {
          if (i == 0 && j == n - 1) continue;  // adjacent through the wrap
          if (gain(i, j) > eps) {
            apply(i, j);
            improved = true;
          }
        }
    } else {
      double bg = eps;
      std::size_t bi = 0, bj = 0;
      for (std::size_t i = 0; i + 2 < n; ++i)
        for (std::size_t j = i + 2; j < n; ++j) {
          if (i == 0 && j == n - 1) continue;
          const double g = gain(i, j);
          if (g > bg) {
            bg = g;
            bi = i;
            bj = j;
          }
        }
      if (bg > eps) {
        apply(bi, bj);
        improved = true;
      }
    }
    if (!improved) break;
  }
  Tour out = make_tour(d, std::move(t));
  // Floating-point rounding can leave the recomputed sum a hair above the input.
  if (out.length > init.length) return make_tour(d, init.order);
  return out;
}

inline Tour two_opt(const DistanceMatrix& d, const BaselineConfig& cfg = {}) {
  if (cfg.two_opt_init == TwoOptInit::NearestNeighbor) return two_opt(d, greedy_nn(d, cfg), cfg);
  std::vector<std::size_t> order(d.n());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng(derive_seed(cfg.seed, {kStreamBaseline})).shuffle(order.begin(), order.end());
  return two_opt(d, make_tour(d, std::move(order)), cfg);
}

/// Exact optimum by subset dynamic programming, node 0 fixed as the start.
inline Tour held_karp(const DistanceMatrix& d) {
  const std::size_t n = d.n();
  require(n >= 3, ErrorCode::Validation, "held_karp: n must be >= 3");
  if (n > kHeldKarpMaxN)
    fail(ErrorCode::Capability, "held_karp: n=" + std::to_string(n) + " exceeds the limit of " +
                                    std::to_string(kHeldKarpMaxN));
  // Subsets of nodes 1..n-1 as bitmasks over m = n-1 bits.
  const std::size_t m = n - 1;
  const std::size_t full = (std::size_t{1} << m);
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> cost(full * m, inf);
  std::vector<std::uint8_t> parent(full * m, 0);
  for (std::size_t k = 0; k < m; ++k) cost[(std::size_t{1} << k) * m + k] = d(0, k + 1);
  for (std::size_t s = 1; s < full; ++s)
    for (std::size_t k = 0; k < m; ++k) {
      if (!(s & (std::size_t{1} << k))) continue;
      const double base = cost[s * m + k];
      if (base == inf) continue;
      for (std::size_t j = 0; j < m; ++j) {
        if (s & (std::size_t{1} << j)) continue;
        const std::size_t ns = s | (std::size_t{1} << j);
        const double c = base + d(k + 1, j + 1);
        if (c < cost[ns * m + j]) {
          cost[ns * m + j] = c;
          parent[ns * m + j] = static_cast<std::uint8_t>(k);
        }
      }
    }
  double best = inf;
  std::size_t last = 0;
  for (std::size_t k = 0; k < m; ++k) {
    const double c = cost[(full - 1) * m + k] + d(k + 1, 0);
    if (c < best) {
      best = c;
      last = k;
    }
  }
  std::vector<std::size_t> rev;
  std::size_t s = full - 1, k = last;
  for (std::size_t step = 0; step < m; ++step) {
    rev.push_back(k + 1);
    const std::size_t p = parent[s * m + k];
    s &= ~(std::size_t{1} << k);
    k = p;
  }
  std::vector<std::size_t> order{0};
  order.insert(order.end(), rev.rbegin(), rev.rend());
  return make_tour(d, std::move(order));
}

}  // namespace permtour
