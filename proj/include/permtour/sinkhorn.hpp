#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "permtour/error.hpp"
#include "permtour/instance.hpp"
#include "permtour/matrix.hpp"
#include "permtour/perm.hpp"
#include "permtour/rng.hpp"
#include "permtour/tensor.hpp"

namespace permtour {

struct SinkhornConfig {
  double tau = 3.0;    // relaxation temperature
  double gamma = 0.0;  // Gumbel noise magnitude
  std::size_t iters = 60;
  std::uint64_t noise_seed = 0;

  void validate() const {
    require(tau > 0.0 && std::isfinite(tau), ErrorCode::Validation,
            "SinkhornConfig: tau must be positive");
    require(gamma >= 0.0 && std::isfinite(gamma), ErrorCode::Validation,
            "SinkhornConfig: gamma must be non-negative");
    require(iters >= 1, ErrorCode::Validation, "SinkhornConfig: iters must be >= 1");
  }
};

/// Strictly positive, approximately doubly-stochastic matrix. Columns are
/// normalized last, so column sums are exact up to rounding and
/// `max_marginal_deviation` is dominated by the rows.
struct SoftPermutation {
  Matrix t;
  double max_marginal_deviation = 0.0;
  std::size_t iterations = 0;
};

/// Smallest uniform draw admitted; keeps -log(-log(u)) finite.
inline constexpr double kGumbelGuard = 0x1.0p-53;

/// n x n i.i.d. standard Gumbel samples, a pure function of the seed.
inline Matrix gumbel_noise(std::size_t n, std::uint64_t seed) {
  require(n >= 1, ErrorCode::Validation, "gumbel_noise: n must be >= 1");
  Rng rng(seed);
  Matrix g(n, n);
  for (auto& v : g.data()) {
    const double u = std::clamp(rng.uniform(), kGumbelGuard, 1.0 - kGumbelGuard);
    v = -std::log(-std::log(u));
  }
  return g;
}

inline double max_marginal_deviation(const Matrix& t) {
  double dev = 0.0;
  std::vector<double> col(t.cols(), 0.0);
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < t.cols(); ++j) {
      row += t(i, j);
      col[j] += t(i, j);
    }
    dev = std::max(dev, std::abs(row - 1.0));
  }
  for (double c : col) dev = std::max(dev, std::abs(c - 1.0));
  return dev;
}

/// Alternating row/column normalization of exp(logits), carried out on the
/// logits with log-sum-exp subtractions.
inline SoftPermutation sinkhorn_normalize(const Matrix& logits, std::size_t iters) {
  require(logits.square() && logits.rows() >= 1, ErrorCode::ShapeMismatch,
          "sinkhorn_normalize: logits must be a non-empty square matrix");
  require(logits.all_finite(), ErrorCode::NonFinite, "sinkhorn_normalize: non-finite logits");
  require(iters >= 1, ErrorCode::Validation, "sinkhorn_normalize: iters must be >= 1");
  const std::size_t n = logits.rows();
  Matrix x = logits;
  std::vector<double> buf(n);

  auto lse = [](const std::vector<double>& v) {
    const double m = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double e : v) s += std::exp(e - m);
    return m + std::log(s);
  };

  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) buf[j] = x(i, j);
      const double z = lse(buf);
      for (std::size_t j = 0; j < n; ++j) x(i, j) -= z;
    }
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < n; ++i) buf[i] = x(i, j);
      const double z = lse(buf);
      for (std::size_t i = 0; i < n; ++i) x(i, j) -= z;
    }
  }
  for (auto& v : x.data()) v = std::exp(v);
  SoftPermutation sp{std::move(x), 0.0, iters};
  sp.max_marginal_deviation = max_marginal_deviation(sp.t);
  return sp;
}

/// (logits + gamma * noise) / tau; noise is drawn only when gamma > 0.
inline Matrix perturbed_logits(const Matrix& logits, const SinkhornConfig& cfg) {
  cfg.validate();
  Matrix x = logits;
  if (cfg.gamma > 0.0) {
    const Matrix eps = gumbel_noise(logits.rows(), cfg.noise_seed);
    for (std::size_t k = 0; k < x.data().size(); ++k) x.data()[k] += cfg.gamma * eps.data()[k];
  }
  for (auto& v : x.data()) v /= cfg.tau;
  return x;
}

inline SoftPermutation gumbel_sinkhorn(const Matrix& logits, const SinkhornConfig& cfg) {
  require(logits.square(), ErrorCode::ShapeMismatch, "gumbel_sinkhorn: logits must be square");
  return sinkhorn_normalize(perturbed_logits(logits, cfg), cfg.iters);
}

/// <D, T V T^T>. Equals tsp_objective when T is a hard permutation matrix.
inline double soft_objective(const DistanceMatrix& d, const Matrix& t, const CyclicShiftMatrix& v) {
  require(t.square() && t.rows() == d.n() && v.size() == d.n(), ErrorCode::ShapeMismatch,
          "soft_objective: sizes disagree");
  // (T V)[i][j] = T[i][j-1]
  const std::size_t n = d.n();
  Matrix tv(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) tv(i, v.successor(j)) = t(i, j);
  return frobenius_inner(d.d, matmul(tv, t.transposed()));
}

inline double soft_objective(const DistanceMatrix& d, const SoftPermutation& t,
                             const CyclicShiftMatrix& v) {
  return soft_objective(d, t.t, v);
}

// ---------------------------------------------------------------------------
// Differentiable counterparts recorded on an autodiff tape.

namespace ad_ops {

inline ad::Tensor to_tensor(const Matrix& m) {
  return ad::Tensor::matrix(m.rows(), m.cols(), m.data());
}

/// Unrolled log-domain Sinkhorn; the tape differentiates every iteration.
inline ad::Var sinkhorn_log(ad::Var x, std::size_t iters) {
  for (std::size_t it = 0; it < iters; ++it) {
    x = ad::sub_along(x, ad::logsumexp(x, 2), 2);
    x = ad::sub_along(x, ad::logsumexp(x, 1), 1);
  }
  return x;
}

/// T = exp(sinkhorn_log((logits + gamma * eps) / tau)). `noise` may be empty
/// when gamma == 0.
inline ad::Var gumbel_sinkhorn(ad::Var logits, const SinkhornConfig& cfg, const Matrix& noise) {
  cfg.validate();
  ad::Var x = logits;
  if (cfg.gamma > 0.0) {
    ad::Tensor eps = to_tensor(noise);
    for (auto& v : eps.data) v *= cfg.gamma;
    x = ad::add(x, logits.tape->constant(std::move(eps)));
  }
  x = ad::scale(x, 1.0 / cfg.tau);
  return ad::exp(sinkhorn_log(x, cfg.iters));
}

inline ad::Var soft_objective(ad::Var t, const DistanceMatrix& d, const CyclicShiftMatrix& v) {
  ad::Tape& tape = *t.tape;
  ad::Var vm = tape.constant(to_tensor(v.dense()));
  ad::Var dm = tape.constant(to_tensor(d.d));
  return ad::inner(dm, ad::matmul(ad::matmul(t, vm), ad::transpose(t)));
}

}  // namespace ad_ops

}  // namespace permtour
