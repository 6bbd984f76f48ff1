#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace permtour;

namespace {

bool is_two_opt_local_optimum(const DistanceMatrix& d, const std::vector<std::size_t>& t) {
  const std::size_t n = t.size();
  for (std::size_t i = 0; i + 2 < n; ++i)
    for (std::size_t j = i + 2; j < n; ++j) {
      if (i == 0 && j == n - 1) continue;
      const double g = d(t[i], t[i + 1]) + d(t[j], t[(j + 1) % n]) - d(t[i], t[j]) - d(t[i + 1], t[(j + 1) % n]);
      if (g > 1e-9) return false;
    }
  return true;
}

}  // namespace

TEST(NearestNeighbor, CollinearPoints) {
  EuclideanInstance inst{{{0, 0}, {2, 0}, {1, 0}}, 0};
  const auto t = greedy_nn(distance_matrix(inst));
  EXPECT_EQ(t.order, (std::vector<std::size_t>{0, 2, 1}));
  EXPECT_DOUBLE_EQ(t.length, 4.0);
}

TEST(NearestNeighbor, TiesGoToLowestIndex) {
  // 1 and 2 equidistant from 0
  EuclideanInstance inst{{{0, 0}, {1, 0}, {-1, 0}, {0, 5}}, 0};
  EXPECT_EQ(greedy_nn_from(distance_matrix(inst), 0).order[1], 1u);
}

TEST(NearestNeighbor, ValidTourAndBestStartNoWorse) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto d = distance_matrix(generate_one(15, s, 0));
    const auto t = greedy_nn(d);
    EXPECT_NO_THROW(Permutation(t.order));
    EXPECT_NEAR(t.length, tour_length(d, t), 1e-12);
    BaselineConfig all;
    all.nn_start = NnStart::BestOfAll;
    EXPECT_LE(greedy_nn(d, all).length, t.length);
  }
}

TEST(TwoOpt, UncrossesSquare) {
  EuclideanInstance sq{{{0, 0}, {1, 0}, {1, 1}, {0, 1}}, 0};
  const auto d = distance_matrix(sq);
  const auto crossed = make_tour(d, {0, 2, 1, 3});
  EXPECT_GT(crossed.length, 4.0);
  EXPECT_DOUBLE_EQ(two_opt(d, crossed).length, 4.0);
}

TEST(TwoOpt, NeverWorseAndLocallyOptimal) {
  for (auto strat : {TwoOptStrategy::FirstImprovement, TwoOptStrategy::BestImprovement})
    for (std::uint64_t s = 0; s < 30; ++s) {
      const auto d = distance_matrix(generate_one(20, s, 0));
      BaselineConfig c;
      c.two_opt_strategy = strat;
      const auto nn = greedy_nn(d);
      const auto t = two_opt(d, nn, c);
      EXPECT_LE(t.length, nn.length);
      EXPECT_TRUE(is_two_opt_local_optimum(d, t.order));
      EXPECT_NEAR(t.length, tour_length(d, t), 1e-12);
    }
}

TEST(TwoOpt, SweepLimitAndRandomInit) {
  const auto d = distance_matrix(generate_one(30, 4, 0));
  BaselineConfig one;
  one.max_sweeps = 1;
  const double l1 = two_opt(d, one).length;
  EXPECT_LE(two_opt(d).length, l1);
  BaselineConfig r;
  r.two_opt_init = TwoOptInit::Random;
  r.seed = 9;
  EXPECT_EQ(two_opt(d, r).order, two_opt(d, r).order);
  one.max_sweeps = 0;
  EXPECT_THROW(two_opt(d, one), Error);
}

TEST(HeldKarp, MatchesBruteForce) {
  Rng rng(1);
  for (std::size_t n : {3u, 4u, 6u, 8u})
    for (int t = 0; t < 10; ++t) {
      const auto d = th::random_distances(n, rng);  // need not be metric
      const auto hk = held_karp(d);
      EXPECT_NEAR(hk.length, th::brute_force_tour(d), 1e-12);
      EXPECT_NEAR(hk.length, tour_length(d, hk), 1e-12);
    }
}

TEST(HeldKarp, LowerBoundsHeuristics) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto d = distance_matrix(generate_one(11, s, 0));
    const double opt = held_karp(d).length;
    EXPECT_LE(opt, greedy_nn(d).length + 1e-12);
    EXPECT_LE(opt, two_opt(d).length + 1e-12);
  }
}

TEST(HeldKarp, CapabilityLimit) {
  const auto d = distance_matrix(generate_one(kHeldKarpMaxN + 1, 0, 0));
  try {
    held_karp(d);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Capability);
  }
}
