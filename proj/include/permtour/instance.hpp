#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "permtour/error.hpp"
#include "permtour/matrix.hpp"
#include "permtour/rng.hpp"

namespace permtour {

inline constexpr double kDefaultDistanceScale = 5.0;

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// n cities in the unit square. seed_tag identifies the generating stream.
struct EuclideanInstance {
  std::vector<Point> coords;
  std::uint64_t seed_tag = 0;

  std::size_t n() const noexcept { return coords.size(); }
  friend bool operator==(const EuclideanInstance&, const EuclideanInstance&) = default;
};

/// Symmetric, zero-diagonal Euclidean distances.
struct DistanceMatrix {
  Matrix d;
  std::size_t n() const noexcept { return d.rows(); }
  double operator()(std::size_t i, std::size_t j) const { return d(i, j); }
};

/// a = exp(-d / scale), entries in (0, 1], unit diagonal.
struct AdjacencyMatrix {
  Matrix a;
  double scale = kDefaultDistanceScale;
  std::size_t n() const noexcept { return a.rows(); }
};

inline void validate(const EuclideanInstance& inst) {
  require(inst.n() >= 3, ErrorCode::Validation,
          "instance needs n >= 3, got " + std::to_string(inst.n()));
  for (const auto& p : inst.coords)
    require(std::isfinite(p.x) && std::isfinite(p.y), ErrorCode::NonFinite,
            "instance has non-finite coordinates");
}

/// Instance `index` of the uniform stream keyed by `seed`. Depends only on
/// (n, seed, index), so datasets are prefix-stable and order-independent.
inline EuclideanInstance generate_one(std::size_t n, std::uint64_t seed,
                                      std::uint64_t index) {
  require(n >= 3, ErrorCode::Validation, "generate: n must be >= 3");
  EuclideanInstance inst;
  inst.seed_tag = derive_seed(seed, {kStreamInstances, index});
  Rng rng(inst.seed_tag);
  inst.coords.resize(n);
  for (auto& p : inst.coords) {
    p.x = rng.uniform();
    p.y = rng.uniform();
  }
  return inst;
}

inline std::vector<EuclideanInstance> generate_uniform(std::size_t n, std::size_t m,
                                                       std::uint64_t seed) {
  require(n >= 3, ErrorCode::Validation,
          "generate_uniform: n must be >= 3, got " + std::to_string(n));
  require(m >= 1, ErrorCode::Validation, "generate_uniform: count must be >= 1");
  std::vector<EuclideanInstance> out;
  out.reserve(m);
  for (std::size_t k = 0; k < m; ++k) out.push_back(generate_one(n, seed, k));
  return out;
}

inline DistanceMatrix distance_matrix(const EuclideanInstance& inst) {
  validate(inst);
  const std::size_t n = inst.n();
  DistanceMatrix dm{Matrix(n, n)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = std::hypot(inst.coords[i].x - inst.coords[j].x,
                                  inst.coords[i].y - inst.coords[j].y);
      dm.d(i, j) = v;
      dm.d(j, i) = v;
    }
  return dm;
}

inline AdjacencyMatrix adjacency(const DistanceMatrix& dm,
                                 double scale = kDefaultDistanceScale) {
  require(scale > 0.0 && std::isfinite(scale), ErrorCode::Validation,
          "adjacency: scale must be positive");
  const std::size_t n = dm.n();
  AdjacencyMatrix am{Matrix(n, n), scale};
  for (std::size_t k = 0; k < n * n; ++k)
    am.a.data()[k] = std::exp(-dm.d.data()[k] / scale);
  return am;
}

}  // namespace permtour
