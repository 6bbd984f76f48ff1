#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace permtour;

namespace {

ModelConfig small_cfg(std::size_t n = 8, std::size_t layers = 2) {
  ModelConfig c;
  c.n = n;
  c.layers = layers;
  c.hidden = 12;
  c.attention_width = 5;
  return c;
}

}  // namespace

TEST(Operators, LazyWalkIsRowStochastic) {
  const auto d = distance_matrix(generate_one(15, 3, 0));
  const Matrix p = lazy_walk(adjacency(d, 5.0));
  for (std::size_t i = 0; i < 15; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 15; ++j) {
      EXPECT_GE(p(i, j), 0.0);
      s += p(i, j);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_GE(p(i, i), 0.5);
  }
}

TEST(Operators, WaveletRowsSumToZero) {
  const auto d = distance_matrix(generate_one(12, 4, 0));
  const auto ops = build_operators(adjacency(d, 5.0), 3);
  ASSERT_EQ(ops.ops.size(), 5u);
  EXPECT_EQ(ops.ops[0], Matrix::identity(12));
  for (std::size_t k = 2; k < 5; ++k)
    for (std::size_t i = 0; i < 12; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 12; ++j) s += ops.ops[k](i, j);
      EXPECT_NEAR(s, 0.0, 1e-12) << "psi_" << k - 1;
    }
  // GCN operator is symmetric
  EXPECT_LT(max_abs_diff(ops.ops[1], ops.ops[1].transposed()), 1e-15);
}

// Psi_1 = P - P^2 computed directly.
TEST(Operators, FirstWaveletMatchesDefinition) {
  const auto a = adjacency(distance_matrix(generate_one(7, 5, 0)), 5.0);
  const Matrix p = lazy_walk(a);
  const Matrix p2 = matmul(p, p);
  const auto ops = build_operators(a, 1);
  for (std::size_t k = 0; k < 49; ++k) EXPECT_NEAR(ops.ops[2].data()[k], p.data()[k] - p2.data()[k], 1e-15);
}

TEST(Model, ParameterLayout) {
  const ModelConfig cfg;
  const auto p = init_params(cfg, 1);
  EXPECT_EQ(p.tensors.size(), 4u + 7u * cfg.layers);
  EXPECT_EQ(p.at("head.w").shape, (ad::Shape{1, 64, 20}));
  EXPECT_EQ(p.at("embed.w").shape, (ad::Shape{1, 19, 64}));
  EXPECT_EQ(init_params(cfg, 1), p);
  EXPECT_NE(init_params(cfg, 2), p);
  EXPECT_THROW(p.at("nope"), Error);
}

TEST(Model, LogitsBoundedByAlpha) {
  ModelConfig cfg = small_cfg(10, 2);
  cfg.alpha = 2.0;
  auto params = init_params(cfg, 3);
  // blow the head up so tanh saturates
  for (auto& t : params.tensors)
    if (t.name == "head.w")
      for (auto& v : t.value.data) v *= 50.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Matrix f = forward(prepare(generate_one(10, s, 0), cfg), params, cfg, ad::Mode::Deterministic, 0);
    for (double v : f.data()) EXPECT_LE(std::abs(v), 2.0);
  }
}

// Relabeling nodes relabels rows of F: F(sigma x)[k] = F(x)[sigma[k]].
TEST(Model, ForwardIsPermutationEquivariant) {
  const ModelConfig cfg = small_cfg(9, 3);
  const auto params = init_params(cfg, 4);
  Rng rng(6);
  const auto inst = generate_one(9, 11, 0);
  const auto sigma = th::random_perm(9, rng).map();
  const Matrix f = forward(prepare(inst, cfg), params, cfg, ad::Mode::Deterministic, 0);
  const Matrix g = forward(prepare(th::permuted(inst, sigma), cfg), params, cfg, ad::Mode::Deterministic, 0);
  for (std::size_t k = 0; k < 9; ++k)
    for (std::size_t c = 0; c < 9; ++c) EXPECT_NEAR(g(k, c), f(sigma[k], c), 1e-10);
}

TEST(Model, ForwardIsRotationInvariant) {
  const ModelConfig cfg = small_cfg(10, 2);
  const auto params = init_params(cfg, 5);
  const auto inst = th::anisotropic(10, 2);
  const Matrix f = forward(prepare(inst, cfg), params, cfg, ad::Mode::Deterministic, 0);
  const Matrix g = forward(prepare(th::transformed(inst, 2.2, 0.3, -0.1), cfg), params, cfg,
                           ad::Mode::Deterministic, 0);
  EXPECT_LT(max_abs_diff(f, g), 1e-6);
}

TEST(Model, DropoutDeterminism) {
  const ModelConfig cfg = small_cfg(8, 2);
  const auto params = init_params(cfg, 6);
  const auto prep = prepare(generate_one(8, 1, 0), cfg);
  const Matrix det_a = forward(prep, params, cfg, ad::Mode::Deterministic, 1);
  const Matrix det_b = forward(prep, params, cfg, ad::Mode::Deterministic, 2);
  EXPECT_EQ(det_a, det_b);  // seed ignored without dropout
  const Matrix mc_a = forward(prep, params, cfg, ad::Mode::McDropout, 7);
  const Matrix mc_b = forward(prep, params, cfg, ad::Mode::McDropout, 7);
  const Matrix mc_c = forward(prep, params, cfg, ad::Mode::McDropout, 8);
  EXPECT_EQ(mc_a, mc_b);
  EXPECT_NE(mc_a, mc_c);
  EXPECT_NE(mc_a, det_a);
  EXPECT_EQ(forward(prep, params, cfg, ad::Mode::Train, 7), mc_a);
}

TEST(Model, RejectsWrongSize) {
  const ModelConfig cfg = small_cfg(8, 2);
  const auto params = init_params(cfg, 6);
  const ModelConfig other = small_cfg(9, 2);
  EXPECT_THROW(forward(prepare(generate_one(9, 1, 0), other), params, cfg, ad::Mode::Deterministic, 0), Error);
  ModelConfig bad = cfg;
  bad.dropout_p = 1.0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Model, FingerprintTracksShapeFields) {
  ModelConfig a;
  ModelConfig b = a;
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  b.layers = 6;
  EXPECT_NE(a.fingerprint(), b.fingerprint());
  b = a;
  b.sinkhorn_cfg.tau = 2.0;
  EXPECT_NE(a.fingerprint(), b.fingerprint());
}

// End-to-end gradient of the unsupervised loss through Gumbel-Sinkhorn.
TEST(Model, FullLossGradCheck) {
  const ModelConfig cfg = small_cfg(8, 2);
  const auto params = init_params(cfg, 9);
  const auto prep = prepare(generate_one(8, 2, 0), cfg);
  SinkhornConfig sk = cfg.sinkhorn_cfg;
  sk.noise_seed = 1234;
  std::vector<ad::Tensor> ws;
  for (const auto& t : params.tensors) ws.push_back(t.value);
  for (auto mode : {ad::Mode::Deterministic, ad::Mode::Train}) {
    const ad::Objective f = [&](ad::Tape& tape, std::span<const ad::Var> w) {
      return loss_tape(tape, w, prep, cfg, mode, 55, sk);
    };
    const auto r = ad::grad_check(f, ws, 1e-5, 600, 3);
    EXPECT_FALSE(r.non_finite);
    EXPECT_LT(r.max_rel_error, 1e-4) << "worst tensor " << params.tensors[r.worst_param].name;
  }
}

// The loss on a near-hard permutation approaches that tour's length.
TEST(Model, LossIsTourLengthForHardLogits) {
  const std::size_t n = 7;
  const auto inst = generate_one(n, 3, 0);
  const auto d = distance_matrix(inst);
  Rng rng(1);
  const auto p = th::random_perm(n, rng);
  ad::Tape tape;
  Matrix logits = p.dense();
  for (auto& v : logits.data()) v *= 50.0;
  const auto x = tape.leaf(ad_ops::to_tensor(logits));
  const auto t = ad_ops::gumbel_sinkhorn(x, SinkhornConfig{1.0, 0.0, 60, 0}, Matrix());
  EXPECT_NEAR(ad_ops::soft_objective(t, d, cyclic_shift(n)).item(), tsp_objective(d, p), 1e-9);
}
