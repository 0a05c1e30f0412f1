#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>

#include "cdpo/preference.hpp"

using namespace cdpo;

namespace {

RewardFn first_coordinate() {
  return {"x0", [](std::span<const double> x, Condition) { return x[0]; }};
}

RankedPool pool_from_scores(const std::vector<double>& scores) {
  std::vector<Example> xs;
  for (const double s : scores) xs.push_back({{s}, 0});
  return rank_pool(xs, first_coordinate());
}

std::vector<std::size_t> order(const RankedPool& p) {
  std::vector<std::size_t> out;
  for (const auto& s : p.samples) out.push_back(s.index);
  return out;
}

}  // namespace

TEST(RankPool, SortsDescending) { EXPECT_EQ(order(pool_from_scores({0.2, 0.9, 0.5})), (std::vector<std::size_t>{1, 2, 0})); }

TEST(RankPool, TiesKeepInputOrder) {
  EXPECT_EQ(order(pool_from_scores({1.0, 1.0, 1.0, 1.0})), (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(RankPool, MatchesReferenceSort) {
  Rng rng(1);
  std::vector<double> scores(100);
  for (auto& s : scores) s = rng.normal();
  std::vector<std::size_t> want(scores.size());
  std::iota(want.begin(), want.end(), 0);
  std::stable_sort(want.begin(), want.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  EXPECT_EQ(order(pool_from_scores(scores)), want);
}

TEST(BuildPairs, CountsAndThreshold) {
  EXPECT_EQ(build_pairs(pool_from_scores({3.0, 1.0, 2.0}), 0.0).size(), 3u);
  EXPECT_EQ(build_pairs(pool_from_scores({1.0, 1.0, 0.5}), 0.0).size(), 2u);
  const auto pairs = build_pairs(pool_from_scores({9, 7, 6, 2, 1}), 3.0);
  std::vector<std::pair<std::size_t, std::size_t>> got;
  for (const auto& p : pairs) got.emplace_back(p.winner_rank, p.loser_rank);
  std::sort(got.begin(), got.end());
  const std::vector<std::pair<std::size_t, std::size_t>> want{{0, 3}, {0, 4}, {1, 3}, {1, 4}, {2, 3}, {2, 4}};
  EXPECT_EQ(got, want);
}

TEST(BuildPairs, RaisingThresholdNeverAddsPairs) {
  Rng rng(2);
  std::vector<double> scores(40);
  for (auto& s : scores) s = rng.normal();
  const auto pool = pool_from_scores(scores);
  std::size_t prev = build_pairs(pool, 0.0).size();
  for (const double tau : {0.1, 0.3, 0.7, 1.5, 3.0}) {
    const std::size_t n = build_pairs(pool, tau).size();
    EXPECT_LE(n, prev);
    prev = n;
  }
}

TEST(BatchLimits, Formula) {
  const auto one = batch_limits(7, 1);
  EXPECT_EQ(one.lower, (std::vector<double>{0}));
  EXPECT_EQ(one.upper, (std::vector<double>{6}));
  const auto l = batch_limits(101, 5);
  EXPECT_EQ(l.lower, (std::vector<double>{80, 60, 40, 20, 0}));
  EXPECT_EQ(l.upper, (std::vector<double>{100, 80, 60, 40, 20}));
  for (std::size_t M = 2; M < 60; M += 7) {
    for (std::size_t B = 1; B <= 9; ++B) {
      const auto lim = batch_limits(M, B);
      for (std::size_t k = 0; k + 1 < B; ++k) EXPECT_EQ(lim.upper[k + 1], lim.lower[k]);
    }
  }
}

TEST(AssignBatches, FivePointFixture) {
  const auto pairs = build_pairs(pool_from_scores({5, 4, 3, 2, 1}), 0.0);
  ASSERT_EQ(pairs.size(), 10u);
  const auto b = assign_batches(pairs, batch_limits(5, 2), DifficultyMeasure::rank);
  ASSERT_EQ(b.B(), 2u);
  EXPECT_EQ(b.batches[0].size(), 3u);
  EXPECT_EQ(b.batches[1].size(), 7u);
  for (const auto& p : b.batches[0]) EXPECT_GE(p.rank_diff, 3);
  for (const auto& p : b.batches[1]) EXPECT_LE(p.rank_diff, 2);
  const auto single = assign_batches(pairs, batch_limits(5, 1), DifficultyMeasure::rank);
  EXPECT_EQ(single.batches[0].size(), 10u);
}

TEST(AssignBatches, FuzzPartitionAndOrdering) {
  Rng rng(3);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t M = 2 + static_cast<std::size_t>(rng.uniform_int(0, 120));
    const std::size_t B = 1 + static_cast<std::size_t>(rng.uniform_int(0, 9));
    std::vector<double> scores(M);
    for (auto& s : scores) s = rng.normal();
    const auto pairs = build_pairs(pool_from_scores(scores), 0.0);
    if (pairs.empty()) continue;
    const auto b = assign_batches(pairs, batch_limits(M, B), DifficultyMeasure::rank);
    EXPECT_EQ(b.total_pairs() + b.dropped, pairs.size());
    EXPECT_EQ(b.dropped, 0u);
    int prev_min = std::numeric_limits<int>::max();
    for (const auto& batch : b.batches) {
      if (batch.empty()) continue;
      int lo = std::numeric_limits<int>::max(), hi = 0;
      for (const auto& p : batch) {
        lo = std::min(lo, p.rank_diff);
        hi = std::max(hi, p.rank_diff);
      }
      EXPECT_LT(hi, prev_min);
      prev_min = lo;
    }
  }
}

TEST(ScoreLimits, QuantileSplit) {
  std::vector<PreferencePair> pairs(4);
  for (int i = 0; i < 4; ++i) pairs[static_cast<std::size_t>(i)].score_diff = i + 1.0;
  const auto b = assign_batches(pairs, score_quantile_limits(pairs, 2), DifficultyMeasure::score);
  ASSERT_EQ(b.B(), 2u);
  std::vector<double> s1, s2;
  for (const auto& p : b.batches[0]) s1.push_back(p.score_diff);
  for (const auto& p : b.batches[1]) s2.push_back(p.score_diff);
  std::sort(s1.begin(), s1.end());
  std::sort(s2.begin(), s2.end());
  EXPECT_EQ(s1, (std::vector<double>{3, 4}));
  EXPECT_EQ(s2, (std::vector<double>{1, 2}));
}

TEST(ScoreLimits, BalancedCounts) {
  Rng rng(4);
  std::vector<PreferencePair> pairs(103);
  for (auto& p : pairs) p.score_diff = rng.uniform01();
  for (std::size_t B = 1; B <= 7; ++B) {
    const auto b = assign_batches(pairs, score_quantile_limits(pairs, B), DifficultyMeasure::score);
    std::size_t lo = pairs.size(), hi = 0;
    for (const auto& batch : b.batches) {
      lo = std::min(lo, batch.size());
      hi = std::max(hi, batch.size());
    }
    EXPECT_LE(hi - lo, 1u);
    EXPECT_EQ(b.total_pairs(), pairs.size());
  }
}

TEST(ScheduleIterations, DefaultSplit) {
  EXPECT_EQ(schedule_iterations(5, 400, 10000), (std::vector<int>{400, 400, 400, 400, 8400}));
  EXPECT_EQ(schedule_iterations(1, 400, 2000), (std::vector<int>{2000}));
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const auto B = static_cast<std::size_t>(rng.uniform_int(1, 8));
    const int K = static_cast<int>(rng.uniform_int(1, 100));
    const int total = static_cast<int>(B - 1) * K + static_cast<int>(rng.uniform_int(1, 500));
    const auto h = schedule_iterations(B, K, total);
    EXPECT_EQ(std::accumulate(h.begin(), h.end(), 0), total);
  }
}

TEST(Sampler, PhaseContainmentAndBoundaries) {
  const auto pairs = build_pairs(pool_from_scores({9, 8, 7, 6, 5, 4, 3, 2}), 0.0);
  CurriculumPlan plan;
  plan.iters = schedule_iterations(3, 20, 100);
  auto b = assign_batches(pairs, batch_limits(8, 3), DifficultyMeasure::rank);
  b.iters = plan.iters;
  plan.per_condition.push_back(b);
  Rng rng(6);
  CurriculumSampler sampler(plan, rng);
  int it = 0;
  while (auto d = sampler.next()) {
    ++it;
    EXPECT_TRUE(sampler.in_accumulated(*d));
    const std::size_t want_phase = it <= 20 ? 0 : it <= 40 ? 1 : 2;
    EXPECT_EQ(d->phase, want_phase);
  }
  EXPECT_EQ(it, 100);
}

TEST(Sampler, EmptyPhaseCarriesIterations) {
  CurriculumBatches b;
  b.limits = batch_limits(5, 2);
  b.batches.resize(2);
  PreferencePair p;
  p.rank_diff = 1;
  b.batches[1].push_back(p);
  b.iters = {30, 70};
  Rng rng(7);
  CurriculumSampler sampler(b, rng);
  EXPECT_EQ(sampler.effective_iters(), (std::vector<int>{0, 100}));
  EXPECT_EQ(sampler.total_iterations(), 100u);
}

TEST(Sampler, UniformOverAccumulatedSet) {
  CurriculumBatches b;
  b.limits = batch_limits(5, 1);
  b.batches.resize(1);
  for (int i = 0; i < 10; ++i) {
    PreferencePair p;
    p.winner_index = static_cast<std::size_t>(i);
    b.batches[0].push_back(p);
  }
  b.iters = {100000};
  Rng rng(8);
  CurriculumSampler sampler(b, rng);
  std::map<std::size_t, int> counts;
  while (auto d = sampler.next()) ++counts[d->pair->winner_index];
  double chi2 = 0.0;
  for (const auto& [k, n] : counts) chi2 += (n - 10000.0) * (n - 10000.0) / 10000.0;
  EXPECT_EQ(counts.size(), 10u);
  EXPECT_LT(chi2, 27.877164871256573469);  // chi-square, 9 dof, p = 0.001
}

TEST(BradleyTerry, Probabilities) {
  EXPECT_EQ(bt_prob(1.0, 1.0), 0.5);
  EXPECT_NEAR(bt_prob(std::log(3.0), 0.0), 0.75, 1e-15);
  EXPECT_NEAR(bt_prob(2.0, 0.0), 0.88079707797788244406, 1e-15);
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    const double a = 5 * rng.normal(), b = 5 * rng.normal();
    EXPECT_NEAR(bt_prob(a, b) + bt_prob(b, a), 1.0, 1e-15);
  }
}

TEST(BradleyTerry, ConstantRewardGivesLn2) {
  RewardNet net(2, {4}, 1, 0);  // zero output layer: constant reward
  std::vector<PreferencePair> pairs(3);
  for (auto& p : pairs) {
    p.winner = {0.1, 0.2};
    p.loser = {-0.3, 0.5};
  }
  EXPECT_NEAR(loss_bt(net, pairs), std::log(2.0), 1e-15);
}
