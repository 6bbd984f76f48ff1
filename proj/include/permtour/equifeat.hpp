#pragma once

// Equivariant coordinate features: a data-dependent canonical frame from the
// covariance of the centered point cloud, intrinsic polar coordinates in that
// frame and their Fourier harmonics. Relabeling points permutes feature rows;
// translations leave features unchanged; rotations leave them unchanged
// whenever the covariance has distinct eigenvalues.

#include <array>
#include <cmath>
#include <cstddef>
#include <string>

#include "permtour/error.hpp"
#include "permtour/instance.hpp"
#include "permtour/matrix.hpp"

namespace permtour {

/// How the sign of the principal axis is fixed.
enum class SignRule {
  /// u_1 >= 0 (u_2 >= 0 when u_1 == 0). Invariant only under rotations that
  /// do not flip the sign of the first component of the rotated axis.
  FirstComponent,
  /// Orient u so the third moment of the projections is positive. Co-rotates
  /// with the data; falls back to FirstComponent when the third moment
  /// vanishes (symmetric clouds).
  ThirdMoment,
};

struct FeatureConfig {
  std::size_t harmonics = 8;
  double eps_radius = 1e-8;
  double degeneracy_tol = 1e-6;
  SignRule sign_rule = SignRule::ThirdMoment;

  std::size_t width() const noexcept { return 3 + 2 * harmonics; }

  void validate() const {
    require(harmonics >= 1, ErrorCode::Validation, "FeatureConfig: harmonics must be >= 1");
    require(eps_radius > 0.0, ErrorCode::Validation, "FeatureConfig: eps_radius must be > 0");
    require(degeneracy_tol >= 0.0, ErrorCode::Validation,
            "FeatureConfig: degeneracy_tol must be >= 0");
  }
};

struct CanonicalFrame {
  Point centroid;
  Point u;       // principal axis (eigenvalue lambda2)
  Point u_perp;  // minor axis, u rotated by +90 degrees
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  bool degenerate = false;
  std::size_t n = 0;

  /// U = [u_perp, u] as a 2x2 matrix (columns).
  Matrix basis() const {
    Matrix b(2, 2);
    b(0, 0) = u_perp.x;
    b(1, 0) = u_perp.y;
    b(0, 1) = u.x;
    b(1, 1) = u.y;
    return b;
  }
};

/// Per-node rows laid out as [r, a_x, a_y, sin(1θ)..sin(Mθ), cos(1θ)..cos(Mθ)].
struct NodeFeatures {
  Matrix f;
  std::vector<double> theta;
  std::size_t harmonics = 0;

  std::size_t n() const noexcept { return f.rows(); }
  double r(std::size_t i) const { return f(i, 0); }
  double a_x(std::size_t i) const { return f(i, 1); }
  double a_y(std::size_t i) const { return f(i, 2); }
  double sin_h(std::size_t i, std::size_t m) const { return f(i, 2 + m); }
  double cos_h(std::size_t i, std::size_t m) const { return f(i, 2 + harmonics + m); }
};

namespace detail {

inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }

inline Point orient_first_component(Point u) {
  if (u.x < 0.0 || (u.x == 0.0 && u.y < 0.0)) return {-u.x, -u.y};
  return u;
}

}  // namespace detail

inline CanonicalFrame canonical_frame(const EuclideanInstance& inst, const FeatureConfig& cfg) {
  validate(inst);
  cfg.validate();
  const std::size_t n = inst.n();
  CanonicalFrame fr;
  fr.n = n;
  for (const auto& p : inst.coords) {
    fr.centroid.x += p.x;
    fr.centroid.y += p.y;
  }
  fr.centroid.x /= static_cast<double>(n);
  fr.centroid.y /= static_cast<double>(n);

  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& p : inst.coords) {
    const double dx = p.x - fr.centroid.x, dy = p.y - fr.centroid.y;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  sxx /= static_cast<double>(n);
  sxy /= static_cast<double>(n);
  syy /= static_cast<double>(n);

  // Closed-form symmetric 2x2 eigendecomposition.
  const double mean = 0.5 * (sxx + syy);
  const double rad = std::hypot(0.5 * (sxx - syy), sxy);
  fr.lambda2 = mean + rad;
  fr.lambda1 = mean - rad;

  const double gap = (fr.lambda2 - fr.lambda1) / std::max(fr.lambda2, cfg.eps_radius);
  if (gap < cfg.degeneracy_tol) {
    fr.degenerate = true;
    fr.u = {1.0, 0.0};
    fr.u_perp = {0.0, 1.0};
    return fr;
  }

  Point u;
  if (sxy == 0.0) {
    u = sxx >= syy ? Point{1.0, 0.0} : Point{0.0, 1.0};
  } else {
    const double phi = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
    u = {std::cos(phi), std::sin(phi)};
  }
  u = detail::orient_first_component(u);

  if (cfg.sign_rule == SignRule::ThirdMoment) {
    double m3 = 0.0, scale = 0.0;
    for (const auto& p : inst.coords) {
      const double a = detail::dot({p.x - fr.centroid.x, p.y - fr.centroid.y}, u);
      m3 += a * a * a;
      scale += std::abs(a * a * a);
    }
    if (std::abs(m3) > 1e-9 * scale && m3 < 0.0) u = {-u.x, -u.y};
  }

  fr.u = u;
  fr.u_perp = {-u.y, u.x};
  return fr;
}

inline NodeFeatures node_features(const EuclideanInstance& inst, const CanonicalFrame& frame,
                                  const FeatureConfig& cfg) {
  cfg.validate();
  require(frame.n == inst.n(), ErrorCode::ShapeMismatch,
          "node_features: frame built for n=" + std::to_string(frame.n) + " but instance has n=" +
              std::to_string(inst.n()));
  const std::size_t n = inst.n(), m = cfg.harmonics;
  NodeFeatures out{Matrix(n, cfg.width()), std::vector<double>(n, 0.0), m};
  for (std::size_t i = 0; i < n; ++i) {
    const Point c{inst.coords[i].x - frame.centroid.x, inst.coords[i].y - frame.centroid.y};
    const double ax = detail::dot(c, frame.u);
    const double ay = detail::dot(c, frame.u_perp);
    const double theta = (ax == 0.0 && ay == 0.0) ? 0.0 : std::atan2(ay, ax);
    out.theta[i] = theta;
    out.f(i, 0) = std::sqrt(ax * ax + ay * ay + cfg.eps_radius);
    out.f(i, 1) = ax;
    out.f(i, 2) = ay;
    for (std::size_t h = 1; h <= m; ++h) {
      out.f(i, 2 + h) = std::sin(static_cast<double>(h) * theta);
      out.f(i, 2 + m + h) = std::cos(static_cast<double>(h) * theta);
    }
  }
  return out;
}

inline NodeFeatures node_features(const EuclideanInstance& inst, const FeatureConfig& cfg) {
  return node_features(inst, canonical_frame(inst, cfg), cfg);
}

}  // namespace permtour
