#include <gtest/gtest.h>

#include <numbers>

#include "helpers.hpp"

using namespace permtour;

namespace {

double brute_force_assignment(const Matrix& c) {
  std::vector<std::size_t> p(c.rows());
  std::iota(p.begin(), p.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += c(i, p[i]);
    best = std::min(best, s);
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

}  // namespace

TEST(Hungarian, MatchesBruteForce) {
  Rng rng(10);
  for (std::size_t n : {1u, 2u, 3u, 5u, 7u})
    for (int t = 0; t < 60; ++t) {
      const Matrix c = th::random_matrix(n, n, rng, -5.0, 5.0);
      ASSERT_DOUBLE_EQ(assignment_cost(c, solve_assignment(c)), brute_force_assignment(c));
    }
}

// Integer costs make the optimum exact in floating point.
TEST(Hungarian, IntegerCostsExact) {
  Rng rng(11);
  for (int t = 0; t < 100; ++t) {
    Matrix c(6, 6);
    for (auto& v : c.data()) v = static_cast<double>(rng.below(20));
    EXPECT_EQ(assignment_cost(c, solve_assignment(c)), brute_force_assignment(c));
  }
}

TEST(Hungarian, TieBreakIsDeterministic) {
  const Matrix zero(4, 4);
  EXPECT_EQ(solve_assignment(zero), Permutation::identity(4));
  Matrix c(3, 3, std::vector<double>(9, 1.0));
  EXPECT_EQ(solve_assignment(c), solve_assignment(c));
}

TEST(Hungarian, RejectsBadInput) {
  EXPECT_THROW(solve_assignment(Matrix(2, 3)), Error);
  Matrix c(2, 2);
  c(0, 1) = std::numeric_limits<double>::infinity();
  try {
    solve_assignment(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFinite);
  }
}

TEST(Decode, PicksArgmaxOfPermutationMatrix) {
  Rng rng(12);
  const auto p = th::random_perm(8, rng);
  Matrix logits = p.dense();
  for (auto& v : logits.data()) v *= 5.0;
  EXPECT_EQ(decode(logits, SinkhornConfig{}), p);
}

TEST(Gumbel, MomentsMatchStandardGumbel) {
  const Matrix g = gumbel_noise(400, 99);  // 160000 samples
  double mean = 0.0;
  for (double v : g.data()) mean += v;
  mean /= static_cast<double>(g.data().size());
  double var = 0.0;
  for (double v : g.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(g.data().size() - 1);
  EXPECT_NEAR(mean, 0.5772156649, 0.01);
  EXPECT_NEAR(var, std::numbers::pi * std::numbers::pi / 6.0, 0.02);
  EXPECT_TRUE(g.all_finite());
  EXPECT_EQ(gumbel_noise(5, 1), gumbel_noise(5, 1));
}

TEST(Sinkhorn, MarginalsConverge) {
  Rng rng(13);
  for (std::size_t n : {2u, 5u, 16u, 33u, 64u})
    for (double tau : {1.0, 3.0, 10.0}) {
      const Matrix f = th::random_matrix(n, n, rng, -1.0, 1.0);
      const auto t = gumbel_sinkhorn(f, SinkhornConfig{tau, 0.0, 60, 0});
      EXPECT_LT(t.max_marginal_deviation, 1e-6) << "n=" << n << " tau=" << tau;
      for (double v : t.t.data()) EXPECT_GT(v, 0.0);
    }
}

// Training regime: bounded logits plus unit Gumbel noise at tau = 3.
TEST(Sinkhorn, MarginalsConvergeWithNoiseAtTrainingTemperature) {
  Rng rng(18);
  for (std::size_t n : {5u, 20u, 64u})
    for (int trial = 0; trial < 10; ++trial) {
      const Matrix f = th::random_matrix(n, n, rng, -10.0, 10.0);
      const auto t = gumbel_sinkhorn(f, SinkhornConfig{3.0, 1.0, 60, rng.next_u64()});
      EXPECT_LT(t.max_marginal_deviation, 1e-6) << "n=" << n;
    }
}

namespace {

// Gap between the best and second-best assignment scores (maximization).
double assignment_gap(const Matrix& f) {
  std::vector<std::size_t> p(f.rows());
  std::iota(p.begin(), p.end(), std::size_t{0});
  double best = -1e300, second = -1e300;
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += f(i, p[i]);
    if (s > best) {
      second = best;
      best = s;
    } else if (s > second) {
      second = s;
    }
  } while (std::next_permutation(p.begin(), p.end()));
  return best - second;
}

}  // namespace

// As tau -> 0 the fixed point approaches the hard assignment, but plain
// Sinkhorn converges sublinearly there, so the iteration count must grow too.
TEST(Sinkhorn, LowTemperatureApproachesHungarian) {
  Rng rng(14);
  int checked = 0;
  while (checked < 10) {
    const Matrix f = th::random_matrix(4, 4, rng, -1.0, 1.0);
    if (assignment_gap(f) < 0.5) continue;
    const Matrix hard = decode(f, SinkhornConfig{1.0, 0.0, 1, 0}).dense();
    const double d200 = max_abs_diff(gumbel_sinkhorn(f, SinkhornConfig{0.01, 0.0, 200, 0}).t, hard);
    const double d20k = max_abs_diff(gumbel_sinkhorn(f, SinkhornConfig{0.01, 0.0, 20000, 0}).t, hard);
    EXPECT_LE(d20k, d200);
    EXPECT_LT(d20k, 1e-3);
    ++checked;
  }
}

// Two rows sharing an argmax column: the tie resolves at rate ~1/(2l).
TEST(Sinkhorn, SublinearRateNearVertex) {
  Matrix f(2, 2);
  f(0, 0) = 1.0;
  f(1, 0) = 0.5;
  const Matrix hard = Permutation::identity(2).dense();
  for (std::size_t l : {100u, 1000u}) {
    const double d = max_abs_diff(gumbel_sinkhorn(f, SinkhornConfig{0.01, 0.0, l, 0}).t, hard);
    EXPECT_GT(d, 0.1 / static_cast<double>(l));
    EXPECT_LT(d, 2.0 / static_cast<double>(l));
  }
}

TEST(Sinkhorn, RejectsBadConfig) {
  EXPECT_THROW(gumbel_sinkhorn(Matrix(3, 3), SinkhornConfig{0.0, 0.0, 10, 0}), Error);
  EXPECT_THROW(gumbel_sinkhorn(Matrix(3, 3), SinkhornConfig{1.0, -1.0, 10, 0}), Error);
  EXPECT_THROW(gumbel_sinkhorn(Matrix(3, 3), SinkhornConfig{1.0, 0.0, 0, 0}), Error);
  Matrix bad(3, 3);
  bad(1, 1) = std::nan("");
  EXPECT_THROW(sinkhorn_normalize(bad, 10), Error);
}

// The tape version and the plain version agree.
TEST(Sinkhorn, TapeMatchesPlain) {
  Rng rng(15);
  const Matrix f = th::random_matrix(7, 7, rng, -3.0, 3.0);
  const SinkhornConfig cfg{2.0, 1.0, 30, 77};
  const auto plain = gumbel_sinkhorn(f, cfg);
  ad::Tape tape;
  const auto x = tape.leaf(ad_ops::to_tensor(f));
  const auto t = ad_ops::gumbel_sinkhorn(x, cfg, gumbel_noise(7, 77));
  for (std::size_t k = 0; k < 49; ++k) EXPECT_NEAR(t.value().data[k], plain.t.data()[k], 1e-12);
}

TEST(SoftObjective, EqualsTspObjectiveOnHardPermutations) {
  Rng rng(16);
  for (int trial = 0; trial < 50; ++trial) {
    const auto d = th::random_distances(9, rng);
    const auto p = th::random_perm(9, rng);
    EXPECT_NEAR(soft_objective(d, p.dense(), cyclic_shift(9)), tsp_objective(d, p), 1e-12);
  }
}

// Uniform T = J/n spreads mass evenly: objective = sum(D)/n.
TEST(SoftObjective, UniformMatrix) {
  Rng rng(17);
  const auto d = th::random_distances(6, rng);
  Matrix t(6, 6, std::vector<double>(36, 1.0 / 6.0));
  double total = 0.0;
  for (double v : d.d.data()) total += v;
  EXPECT_NEAR(soft_objective(d, t, cyclic_shift(6)), total / 6.0, 1e-12);
}
