#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "permtour/error.hpp"
#include "permtour/instance.hpp"
#include "permtour/matrix.hpp"

namespace permtour {

/// Bijection on {0..n-1}; map[i] is the image of i. Dense view: P[i][map[i]] = 1.
/// In the tour encoding, map[i] is the cycle position assigned to node i.
class Permutation {
 public:
  Permutation() = default;
  explicit Permutation(std::vector<std::size_t> map) : map_(std::move(map)) {
    std::vector<char> seen(map_.size(), 0);
    for (auto v : map_) {
      require(v < map_.size() && !seen[v], ErrorCode::Structural,
              "Permutation: map is not a bijection");
      seen[v] = 1;
    }
  }

  static Permutation identity(std::size_t n) {
    std::vector<std::size_t> m(n);
    std::iota(m.begin(), m.end(), std::size_t{0});
    return Permutation(std::move(m));
  }

  std::size_t size() const noexcept { return map_.size(); }
  std::size_t operator[](std::size_t i) const { return map_[i]; }
  const std::vector<std::size_t>& map() const noexcept { return map_; }

  Permutation inverse() const {
    std::vector<std::size_t> inv(map_.size());
    for (std::size_t i = 0; i < map_.size(); ++i) inv[map_[i]] = i;
    return Permutation(std::move(inv));
  }

  /// (this ∘ other)(i) = this[other[i]].
  Permutation compose(const Permutation& other) const {
    require(other.size() == size(), ErrorCode::ShapeMismatch,
            "Permutation::compose: size mismatch");
    std::vector<std::size_t> m(size());
    for (std::size_t i = 0; i < size(); ++i) m[i] = map_[other[i]];
    return Permutation(std::move(m));
  }

  Matrix dense() const {
    Matrix p(size(), size());
    for (std::size_t i = 0; i < size(); ++i) p(i, map_[i]) = 1.0;
    return p;
  }

  friend bool operator==(const Permutation&, const Permutation&) = default;

 private:
  std::vector<std::size_t> map_;
};

/// V with V[i][(i+1) mod n] = 1: the canonical cycle 0 -> 1 -> ... -> n-1 -> 0.
class CyclicShiftMatrix {
 public:
  explicit CyclicShiftMatrix(std::size_t n) : n_(n) {
    require(n >= 3, ErrorCode::Validation,
            "cyclic_shift: n must be >= 3, got " + std::to_string(n));
  }

  std::size_t size() const noexcept { return n_; }
  std::size_t successor(std::size_t i) const { return (i + 1) % n_; }

  Matrix dense() const {
    Matrix v(n_, n_);
    for (std::size_t i = 0; i < n_; ++i) v(i, successor(i)) = 1.0;
    return v;
  }

  /// Dense V^k (row i has its one at column (i+k) mod n).
  Matrix power(std::size_t k) const {
    Matrix v(n_, n_);
    for (std::size_t i = 0; i < n_; ++i) v(i, (i + k) % n_) = 1.0;
    return v;
  }

 private:
  std::size_t n_;
};

inline CyclicShiftMatrix cyclic_shift(std::size_t n) { return CyclicShiftMatrix(n); }

/// Directed successor relation with one 1 per row and column. Values built by
/// conjugate() are single n-cycles; from_dense() accepts arbitrary
/// permutation matrices so that hand-built inputs can be checked.
class HamiltonianCycleMatrix {
 public:
  HamiltonianCycleMatrix() = default;

  static HamiltonianCycleMatrix from_successors(std::vector<std::size_t> succ) {
    Permutation check(succ);  // validates bijection
    (void)check;
    HamiltonianCycleMatrix h;
    h.succ_ = std::move(succ);
    return h;
  }

  static HamiltonianCycleMatrix from_dense(const Matrix& m) {
    require(m.square(), ErrorCode::ShapeMismatch, "cycle matrix must be square");
    const std::size_t n = m.rows();
    std::vector<std::size_t> succ(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t ones = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const double v = m(i, j);
        require(v == 0.0 || v == 1.0, ErrorCode::Structural,
                "cycle matrix entries must be 0 or 1");
        if (v == 1.0) {
          ++ones;
          succ[i] = j;
        }
      }
      require(ones == 1, ErrorCode::Structural,
              "cycle matrix row " + std::to_string(i) + " must contain exactly one 1");
    }
    return from_successors(std::move(succ));
  }

  std::size_t size() const noexcept { return succ_.size(); }
  std::size_t successor(std::size_t i) const { return succ_[i]; }
  const std::vector<std::size_t>& successors() const noexcept { return succ_; }

  Matrix dense() const {
    Matrix h(size(), size());
    for (std::size_t i = 0; i < size(); ++i) h(i, succ_[i]) = 1.0;
    return h;
  }

  /// True when following successors from node 0 visits every node once.
  bool is_single_cycle() const {
    if (succ_.empty()) return false;
    std::size_t cur = 0;
    for (std::size_t step = 1; step < size(); ++step) {
      cur = succ_[cur];
      if (cur == 0) return false;
    }
    return succ_[cur] == 0;
  }

  friend bool operator==(const HamiltonianCycleMatrix&,
                         const HamiltonianCycleMatrix&) = default;

 private:
  std::vector<std::size_t> succ_;
};

/// Cyclic visiting order anchored at node 0, plus its cached length.
struct Tour {
  std::vector<std::size_t> order;
  double length = 0.0;

  std::size_t size() const noexcept { return order.size(); }
};

/// H = P V P^T. Node i sits at position p[i]; its successor is the node at
/// position p[i] + 1. Always a single n-cycle.
inline HamiltonianCycleMatrix conjugate(const Permutation& p, const CyclicShiftMatrix& v) {
  require(p.size() == v.size(), ErrorCode::ShapeMismatch,
          "conjugate: permutation size " + std::to_string(p.size()) +
              " vs shift size " + std::to_string(v.size()));
  const auto inv = p.inverse();
  std::vector<std::size_t> succ(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) succ[i] = inv[v.successor(p[i])];
  return HamiltonianCycleMatrix::from_successors(std::move(succ));
}

/// Sum of cyclic consecutive distances along `order`.
inline double tour_length(const DistanceMatrix& d, const std::vector<std::size_t>& order) {
  require(order.size() == d.n(), ErrorCode::ShapeMismatch,
          "tour_length: tour size " + std::to_string(order.size()) +
              " vs distance matrix size " + std::to_string(d.n()));
  double s = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k)
    s += d(order[k], order[(k + 1) % order.size()]);
  return s;
}

inline double tour_length(const DistanceMatrix& d, const Tour& t) {
  return tour_length(d, t.order);
}

/// Builds a Tour (length unset) by following successors from node 0.
inline Tour tour_from_cycle_matrix(const HamiltonianCycleMatrix& h) {
  const std::size_t n = h.size();
  require(n >= 1, ErrorCode::Structural, "tour_from_cycle_matrix: empty matrix");
  Tour t;
  t.order.reserve(n);
  std::vector<char> seen(n, 0);
  std::size_t cur = 0;
  for (std::size_t step = 0; step < n; ++step) {
    if (seen[cur])
      fail(ErrorCode::Structural,
           "tour_from_cycle_matrix: sub-cycle detected, node " + std::to_string(cur) +
               " repeats after " + std::to_string(step) + " steps");
    seen[cur] = 1;
    t.order.push_back(cur);
    cur = h.successor(cur);
  }
  return t;
}

inline Tour tour_from_cycle_matrix(const HamiltonianCycleMatrix& h, const DistanceMatrix& d) {
  Tour t = tour_from_cycle_matrix(h);
  t.length = tour_length(d, t);
  return t;
}

/// Rotate so order[0] == 0, keeping direction.
inline Tour canonicalize(Tour t) {
  auto it = std::find(t.order.begin(), t.order.end(), std::size_t{0});
  std::rotate(t.order.begin(), it, t.order.end());
  return t;
}

/// Tour with the given visiting order, canonicalized, with its length filled in.
inline Tour make_tour(const DistanceMatrix& d, std::vector<std::size_t> order) {
  Permutation check(order);
  (void)check;
  Tour t{std::move(order), 0.0};
  t = canonicalize(std::move(t));
  t.length = tour_length(d, t);
  return t;
}

/// <D, P V P^T> evaluated through dense matrix products. Deliberately a separate
/// route from tour_length so the two can be cross-checked.
inline double tsp_objective(const DistanceMatrix& d, const Permutation& p) {
  require(p.size() == d.n(), ErrorCode::ShapeMismatch,
          "tsp_objective: permutation size " + std::to_string(p.size()) +
              " vs distance matrix size " + std::to_string(d.n()));
  const Matrix pm = p.dense();
  const Matrix h = matmul(matmul(pm, cyclic_shift(p.size()).dense()), pm.transposed());
  return frobenius_inner(d.d, h);
}

/// Position assignment realizing a tour: node order[k] gets position k.
inline Permutation permutation_from_tour(const Tour& t) {
  std::vector<std::size_t> m(t.size());
  for (std::size_t k = 0; k < t.size(); ++k) m[t.order[k]] = k;
  return Permutation(std::move(m));
}

}  // namespace permtour
