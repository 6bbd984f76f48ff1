#pragma once

// Scattering-attention GNN producing the n x n scaled logits
//   F = alpha * tanh(head(H_L)),
// where H_L comes from L layers of per-node attention over diffusion channels
// (identity, normalized graph convolution, and J lazy-walk wavelets) followed
// by a residual feed-forward update.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "permtour/equifeat.hpp"
#include "permtour/error.hpp"
#include "permtour/instance.hpp"
#include "permtour/matrix.hpp"
#include "permtour/rng.hpp"
#include "permtour/sinkhorn.hpp"
#include "permtour/tensor.hpp"

namespace permtour {

struct ModelConfig {
  std::size_t n = 20;  // problem size; the head emits one logit per cycle position
  std::size_t layers = 4;
  std::size_t hidden = 64;
  std::size_t attention_width = 16;
  std::size_t scattering_scales = 3;  // J
  double alpha = 10.0;
  double dropout_p = 0.1;
  double distance_scale = kDefaultDistanceScale;
  FeatureConfig feature_cfg;
  SinkhornConfig sinkhorn_cfg{3.0, 1.0, 60, 0};

  std::size_t channels() const noexcept { return scattering_scales + 2; }

  void validate() const {
    require(n >= 3, ErrorCode::Validation, "ModelConfig: n must be >= 3");
    require(layers >= 1, ErrorCode::Validation, "ModelConfig: layers must be >= 1");
    require(hidden >= 1, ErrorCode::Validation, "ModelConfig: hidden must be >= 1");
    require(attention_width >= 1, ErrorCode::Validation,
            "ModelConfig: attention_width must be >= 1");
    require(scattering_scales >= 1, ErrorCode::Validation,
            "ModelConfig: scattering_scales must be >= 1");
    require(alpha > 0.0, ErrorCode::Validation, "ModelConfig: alpha must be > 0");
    require(dropout_p >= 0.0 && dropout_p < 1.0, ErrorCode::Validation,
            "ModelConfig: dropout_p must lie in [0, 1)");
    require(distance_scale > 0.0, ErrorCode::Validation,
            "ModelConfig: distance_scale must be > 0");
    feature_cfg.validate();
    sinkhorn_cfg.validate();
  }

  /// Hash of every field that changes parameter shapes or the forward map.
  std::uint64_t fingerprint() const {
    auto bits = [](double v) {
      std::uint64_t u;
      std::memcpy(&u, &v, sizeof u);
      return u;
    };
    return derive_seed(0x5c7a11ed, {n, layers, hidden, attention_width, scattering_scales,
                                    bits(alpha), bits(dropout_p), bits(distance_scale),
                                    feature_cfg.harmonics, bits(feature_cfg.eps_radius),
                                    bits(feature_cfg.degeneracy_tol),
                                    static_cast<std::uint64_t>(feature_cfg.sign_rule),
                                    bits(sinkhorn_cfg.tau), bits(sinkhorn_cfg.gamma),
                                    sinkhorn_cfg.iters});
  }
};

struct NamedTensor {
  std::string name;
  ad::Tensor value;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// All learnable weights, in a fixed order.
struct ModelParams {
  std::vector<NamedTensor> tensors;

  std::size_t count() const {
    std::size_t c = 0;
    for (const auto& t : tensors) c += t.value.size();
    return c;
  }

  const ad::Tensor& at(std::string_view name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t.value;
    fail(ErrorCode::Validation, "ModelParams: no tensor named " + std::string(name));
  }

  bool all_finite() const {
    for (const auto& t : tensors)
      for (double v : t.value.data)
        if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Ordered diffusion operators: [I, D^-1/2 W D^-1/2, Psi_1, ..., Psi_J] with
/// Psi_j = P^(2^(j-1)) - P^(2^j) and lazy walk P = (I + D^-1 W) / 2.
struct DiffusionOperators {
  std::vector<Matrix> ops;
  std::size_t n() const { return ops.empty() ? 0 : ops.front().rows(); }

  /// Stacked as a (C, n, n) tensor.
  ad::Tensor stacked() const {
    const std::size_t c = ops.size(), m = n();
    ad::Tensor t(ad::Shape{c, m, m});
    for (std::size_t k = 0; k < c; ++k)
      std::copy(ops[k].data().begin(), ops[k].data().end(), t.data.begin() + k * m * m);
    return t;
  }
};

/// Random-walk matrix P = (I + D^-1 W) / 2, row-stochastic.
inline Matrix lazy_walk(const AdjacencyMatrix& a) {
  const std::size_t n = a.n();
  Matrix p(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += a.a(i, j);
    require(deg > 0.0, ErrorCode::Structural, "lazy_walk: zero-degree node");
    for (std::size_t j = 0; j < n; ++j) p(i, j) = 0.5 * a.a(i, j) / deg;
    p(i, i) += 0.5;
  }
  return p;
}

inline DiffusionOperators build_operators(const AdjacencyMatrix& a, std::size_t scales) {
  require(a.a.square() && a.n() >= 1, ErrorCode::ShapeMismatch,
          "build_operators: adjacency must be square");
  require(scales >= 1, ErrorCode::Validation, "build_operators: need at least one scale");
  const std::size_t n = a.n();
  DiffusionOperators out;
  out.ops.reserve(scales + 2);
  out.ops.push_back(Matrix::identity(n));

  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += a.a(i, j);
    require(deg > 0.0, ErrorCode::Structural, "build_operators: zero-degree node");
    inv_sqrt[i] = 1.0 / std::sqrt(deg);
  }
  Matrix gcn(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) gcn(i, j) = inv_sqrt[i] * a.a(i, j) * inv_sqrt[j];
  out.ops.push_back(std::move(gcn));

  Matrix prev = lazy_walk(a);  // P^(2^0)
  for (std::size_t j = 1; j <= scales; ++j) {
    Matrix next = matmul(prev, prev);  // P^(2^j)
    Matrix psi(n, n);
    for (std::size_t k = 0; k < n * n; ++k) psi.data()[k] = prev.data()[k] - next.data()[k];
    out.ops.push_back(std::move(psi));
    prev = std::move(next);
  }
  return out;
}

namespace detail {

inline ad::Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  ad::Tensor t(ad::Shape{1, fan_in, fan_out});
  for (auto& v : t.data) v = rng.uniform(-lim, lim);
  return t;
}

inline ad::Tensor zeros(std::size_t rows, std::size_t cols) {
  return ad::Tensor(ad::Shape{1, rows, cols}, 0.0);
}

}  // namespace detail

/// Parameter layout, in order:
///   embed.w, embed.b,
///   per layer l: L<l>.att_q, L<l>.att_k, L<l>.att_v, L<l>.ff1.w, L<l>.ff1.b,
///                L<l>.ff2.w, L<l>.ff2.b,
///   head.w, head.b.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, {kStreamInit}));
  const std::size_t d = cfg.hidden, f0 = cfg.feature_cfg.width(), at = cfg.attention_width;
  ModelParams p;
  p.tensors.push_back({"embed.w", detail::xavier(f0, d, rng)});
  p.tensors.push_back({"embed.b", detail::zeros(1, d)});
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string pre = "L" + std::to_string(l) + ".";
    p.tensors.push_back({pre + "att_q", detail::xavier(d, at, rng)});
    p.tensors.push_back({pre + "att_k", detail::xavier(d, at, rng)});
    p.tensors.push_back({pre + "att_v", detail::xavier(at, 1, rng)});
    p.tensors.push_back({pre + "ff1.w", detail::xavier(d, d, rng)});
    p.tensors.push_back({pre + "ff1.b", detail::zeros(1, d)});
    p.tensors.push_back({pre + "ff2.w", detail::xavier(d, d, rng)});
    p.tensors.push_back({pre + "ff2.b", detail::zeros(1, d)});
  }
  p.tensors.push_back({"head.w", detail::xavier(d, cfg.n, rng)});
  p.tensors.push_back({"head.b", detail::zeros(1, cfg.n)});
  return p;
}

/// Everything the network consumes for one instance.
struct PreparedInstance {
  DistanceMatrix d;
  NodeFeatures features;
  DiffusionOperators ops;
};

inline PreparedInstance prepare(const EuclideanInstance& inst, const ModelConfig& cfg) {
  PreparedInstance p;
  p.d = distance_matrix(inst);
  p.features = node_features(inst, cfg.feature_cfg);
  p.ops = build_operators(adjacency(p.d, cfg.distance_scale), cfg.scattering_scales);
  return p;
}

/// Records the forward pass on `tape`. `weights` are tape variables for the
/// tensors of ModelParams, in order. Dropout (attention weights and the
/// feed-forward hidden layer) is active in Train and McDropout modes.
inline ad::Var forward_tape(ad::Tape& tape, std::span<const ad::Var> weights,
                            const PreparedInstance& in, const ModelConfig& cfg, ad::Mode mode,
                            std::uint64_t seed) {
  const std::size_t n = in.features.n();
  require(n == cfg.n, ErrorCode::ShapeMismatch,
          "forward: model built for n=" + std::to_string(cfg.n) + " but instance has n=" +
              std::to_string(n));
  require(in.features.f.cols() == cfg.feature_cfg.width(), ErrorCode::ShapeMismatch,
          "forward: feature width mismatch");
  require(in.ops.ops.size() == cfg.channels(), ErrorCode::ShapeMismatch,
          "forward: operator count mismatch");
  require(weights.size() == 4 + 7 * cfg.layers, ErrorCode::ShapeMismatch,
          "forward: parameter count mismatch");

  const bool drop = mode != ad::Mode::Deterministic;
  auto check = [](ad::Var v, std::size_t layer) {
    for (double x : v.value().data)
      if (!std::isfinite(x))
        fail(ErrorCode::NonFinite, "forward: non-finite activation in layer " + std::to_string(layer));
  };

  ad::Var x = tape.constant(ad::Tensor::matrix(n, in.features.f.cols(), in.features.f.data()));
  ad::Var ops = tape.constant(in.ops.stacked());

  std::size_t w = 0;
  ad::Var h = ad::add_along(ad::matmul(x, weights[w]), weights[w + 1], 1);
  w += 2;

  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const ad::Var att_q = weights[w], att_k = weights[w + 1], att_v = weights[w + 2];
    const ad::Var ff1_w = weights[w + 3], ff1_b = weights[w + 4];
    const ad::Var ff2_w = weights[w + 5], ff2_b = weights[w + 6];
    w += 7;

    ad::Var z = ad::matmul(ops, h);  // (C, n, d): channel outputs phi_k H
    // score_{i,k} = v^T tanh(Q h_i + K z_{i,k}) = v^T tanh(W [h_i || z_{i,k}])
    ad::Var q = ad::matmul(h, att_q);
    ad::Var k = ad::matmul(z, att_k);
    ad::Var score = ad::matmul(ad::tanh(ad::add(k, q)), att_v);  // (C, n, 1)
    ad::Var attn = ad::softmax(score, 0);
    attn = ad::dropout(attn, cfg.dropout_p, derive_seed(seed, {kStreamDropout, l, 0}), drop);
    ad::Var mixed = ad::sum(ad::mul_along(z, attn, 2), 0);  // (1, n, d)

    ad::Var hid = ad::tanh(ad::add_along(ad::matmul(mixed, ff1_w), ff1_b, 1));
    hid = ad::dropout(hid, cfg.dropout_p, derive_seed(seed, {kStreamDropout, l, 1}), drop);
    ad::Var upd = ad::add_along(ad::matmul(hid, ff2_w), ff2_b, 1);
    h = ad::add(h, upd);
    check(h, l);
  }

  ad::Var raw = ad::add_along(ad::matmul(h, weights[w]), weights[w + 1], 1);
  ad::Var logits = ad::scale(ad::tanh(raw), cfg.alpha);
  check(logits, cfg.layers);
  return logits;
}

inline std::vector<ad::Var> bind_params(ad::Tape& tape, const ModelParams& params,
                                        bool requires_grad) {
  std::vector<ad::Var> vars;
  vars.reserve(params.tensors.size());
  for (const auto& t : params.tensors) vars.push_back(tape.leaf(t.value, requires_grad));
  return vars;
}

/// n x n logits F with every entry in (-alpha, alpha).
inline Matrix forward(const PreparedInstance& in, const ModelParams& params,
                      const ModelConfig& cfg, ad::Mode mode, std::uint64_t seed) {
  ad::Tape tape;
  const auto vars = bind_params(tape, params, false);
  const ad::Var logits = forward_tape(tape, vars, in, cfg, mode, seed);
  return Matrix(cfg.n, cfg.n, logits.value().data);
}

/// Unsupervised objective <D, T V T^T> with T = GS((F + gamma eps) / tau, l).
inline ad::Var loss_tape(ad::Tape& tape, std::span<const ad::Var> weights,
                         const PreparedInstance& in, const ModelConfig& cfg, ad::Mode mode,
                         std::uint64_t dropout_seed, const SinkhornConfig& sk) {
  const ad::Var logits = forward_tape(tape, weights, in, cfg, mode, dropout_seed);
  const Matrix noise = sk.gamma > 0.0 ? gumbel_noise(cfg.n, sk.noise_seed) : Matrix();
  const ad::Var t = ad_ops::gumbel_sinkhorn(logits, sk, noise);
  return ad_ops::soft_objective(t, in.d, cyclic_shift(cfg.n));
}

}  // namespace permtour
