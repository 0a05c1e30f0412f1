#include <gtest/gtest.h>

#include <cmath>

#include "cdpo/dpo.hpp"
#include "cdpo/gradcheck.hpp"

using namespace cdpo;

namespace {

constexpr double kLn2 = 0.69314718055994530942;

MlpSpec small_spec() {
  MlpSpec s;
  s.hidden = {8, 8};
  s.time_embed = 4;
  s.cond_embed = 2;
  s.n_conditions = 2;
  s.time_horizon = 16;
  return s;
}

template <typename Net>
Net randomized(Net net, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& v : net.params().values()) v = 0.3 * rng.normal();
  return net;
}

class ScalarOut : public ConsistencyFunction {
 public:
  ScalarOut(double at_next, double at_hat, double t_next) : next_(at_next), hat_(at_hat), t_next_(t_next) {}
  Vec apply(std::span<const double>, double t, Condition) const override { return {t == t_next_ ? next_ : hat_}; }

 private:
  double next_, hat_, t_next_;
};

}  // namespace

TEST(DiscreteDpo, PolicyEqualsReferenceGivesLn2) {
  const auto ref = DiscretePolicy::from_probs({{0.2, 0.3, 0.5}});
  EXPECT_NEAR(loss_dpo_discrete(ref, ref, {0, 0, 2}, 3.0), kLn2, 1e-15);
}

TEST(DiscreteDpo, ThreeOutcomeGolden) {
  const auto p = DiscretePolicy::from_probs({{0.5, 0.3, 0.2}});
  const auto ref = DiscretePolicy::from_probs({{1.0 / 3, 1.0 / 3, 1.0 / 3}});
  EXPECT_NEAR(loss_dpo_discrete(p, ref, {0, 0, 2}, 1.0), 0.3364722366212129305, 1e-14);
  EXPECT_NEAR(loss_dpo_discrete(p, ref, {0, 0, 2}, 1.0), std::log(1.4), 1e-14);
}

TEST(DiscreteDpo, LargerBetaLowersLossForPositiveGap) {
  const auto p = DiscretePolicy::from_probs({{0.5, 0.3, 0.2}});
  const auto ref = DiscretePolicy::from_probs({{0.4, 0.3, 0.3}});
  EXPECT_LT(loss_dpo_discrete(p, ref, {0, 0, 2}, 2.0), loss_dpo_discrete(p, ref, {0, 0, 2}, 1.0));
}

TEST(DiscreteDpo, ZeroReferenceProbabilityIsDomainError) {
  const auto p = DiscretePolicy::from_probs({{0.5, 0.5}});
  const auto ref = DiscretePolicy::from_probs({{1.0, 0.0}});
  EXPECT_THROW(loss_dpo_discrete(p, ref, {0, 0, 1}, 1.0), std::domain_error);
}

TEST(DiscreteDpo, GradientMatchesFactoredForm) {
  Rng rng(1);
  DiscretePolicy p(1, 4), ref(1, 4);
  for (auto& l : p.logits()) l = rng.normal();
  for (auto& l : ref.logits()) l = rng.normal();
  const DiscretePair pair{0, 1, 3};
  const double beta = 1.7;
  Vec grad(4, 0.0);
  loss_dpo_discrete(p, ref, pair, beta, grad);
  const double z = implied_reward(p, ref, 1, 0, beta) - implied_reward(p, ref, 3, 0, beta);
  const double w = sigmoid(-z);
  // -beta * sigma(-z) * (grad log p_w - grad log p_l); the softmax terms cancel.
  Vec want(4, 0.0);
  want[1] = -beta * w;
  want[3] = beta * w;
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(grad[static_cast<std::size_t>(i)], want[static_cast<std::size_t>(i)], 1e-8);
}

TEST(ImpliedReward, Values) {
  const auto ref = DiscretePolicy::from_probs({{0.25, 0.75}});
  EXPECT_EQ(implied_reward(ref, ref, 0, 0, 5.0), 0.0);
  auto p = ref;
  p.logits()[0] += 1.0;  // ratio e on outcome 0 before renormalising
  const double lz = p.log_normalizer(0);
  EXPECT_NEAR(implied_reward(p, ref, 0, 0, 2.0), 2.0 * (1.0 - lz), 1e-14);
}

TEST(ImpliedReward, RecoversRewardUpToConstantAtOptimum) {
  const auto ref = DiscretePolicy::from_probs({{0.1, 0.2, 0.3, 0.4}});
  const Vec r{0.3, -1.2, 2.0, 0.7};
  const double beta = 0.8;
  const auto opt = optimal_policy_oracle(ref, [&](std::size_t i, Condition) { return r[i]; }, beta);
  const double shift = implied_reward(opt, ref, 0, 0, beta) - r[0];
  for (std::size_t i = 1; i < 4; ++i) EXPECT_NEAR(implied_reward(opt, ref, i, 0, beta) - r[i], shift, 1e-12);
}

TEST(OptimalPolicy, ClosedForms) {
  const auto ref = DiscretePolicy::from_probs({{1.0 / 3, 1.0 / 3, 1.0 / 3}});
  const double beta = 1.5;
  const Vec r{0.0, beta * std::log(2.0), beta * std::log(4.0)};
  const auto p = optimal_policy_oracle(ref, [&](std::size_t i, Condition) { return r[i]; }, beta).probs(0);
  EXPECT_NEAR(p[0], 1.0 / 7, 1e-15);
  EXPECT_NEAR(p[1], 2.0 / 7, 1e-15);
  EXPECT_NEAR(p[2], 4.0 / 7, 1e-15);

  const auto ref2 = DiscretePolicy::from_probs({{0.1, 0.6, 0.3}});
  const auto same = optimal_policy_oracle(ref2, [](std::size_t, Condition) { return 4.2; }, 1.0).probs(0);
  EXPECT_LT(total_variation(same, ref2.probs(0)), 1e-15);
  const auto flat = optimal_policy_oracle(ref2, [](std::size_t i, Condition) { return double(i); }, 1e6).probs(0);
  EXPECT_LT(total_variation(flat, ref2.probs(0)), 1e-5);
}

TEST(DiffusionDpo, ReferenceIdentityAndGolden) {
  EXPECT_NEAR(diffusion_dpo_from_deltas(-0.01, 0.01, 100.0 / 64.0, 64), 0.12692801104297249644, 1e-14);

  const auto s = build_vp_schedule(16, 1e-3, 0.2);
  const auto net = randomized(DenoiserNet(small_spec()), 1);
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const Vec w = rng.normal_vec(2), l = rng.normal_vec(2), ew = rng.normal_vec(2), el = rng.normal_vec(2);
    DiffusionDpoInput in{w, l, static_cast<Condition>(i % 2), 1 + i % 16, ew, el};
    EXPECT_NEAR(loss_diffusion_dpo(net, net, in, 5000.0, s), kLn2, 1e-9);
  }
}

TEST(DiffusionDpo, MonotoneInDeltas) {
  const double base = diffusion_dpo_from_deltas(0.002, -0.001, 3.0, 16);
  EXPECT_GT(diffusion_dpo_from_deltas(0.003, -0.001, 3.0, 16), base);
  EXPECT_LT(diffusion_dpo_from_deltas(0.002, 0.0, 3.0, 16), base);
}

TEST(DiffusionDpo, GradientMatchesFiniteDifferences) {
  const auto s = build_vp_schedule(16, 1e-3, 0.2);
  MlpSpec spec = small_spec();
  spec.hidden = {6, 6};
  const auto net = randomized(DenoiserNet(spec), 3);
  const auto ref = randomized(DenoiserNet(spec), 4);
  const Vec w{0.5, -0.2}, l{-0.7, 0.9}, ew{0.3, 1.1}, el{-0.4, 0.2};
  const DiffusionDpoInput in{w, l, 1, 7, ew, el};
  const auto report = grad_check(
      [&](std::span<const double> p, std::span<double> g) {
        DenoiserNet n = net;
        std::copy(p.begin(), p.end(), n.params().values().begin());
        if (!g.empty()) std::fill(g.begin(), g.end(), 0.0);
        return loss_diffusion_dpo(n, ref, in, 2.0, s, g);
      },
      net.params().values(), 1e-4);
  EXPECT_LT(report.max_rel_error, 1e-5);
}

TEST(ConsistencyDpo, DStarValues) {
  const ScalarOut student(1.0, 0.5, 4.0);
  const ScalarOut ref(0.8, 0.5, 4.0);
  EXPECT_NEAR(d_star(student, ref, Vec{0.0}, Vec{0.0}, 4.0, 3.0, 0), 0.16, 1e-15);
  EXPECT_EQ(d_star(ref, ref, Vec{0.0}, Vec{0.0}, 4.0, 3.0, 0), 0.0);
  const ScalarOut closer(0.6, 0.5, 4.0);
  EXPECT_LT(d_star(closer, ref, Vec{0.0}, Vec{0.0}, 4.0, 3.0, 0), 0.0);
}

TEST(ConsistencyDpo, GoldenAndMonotone) {
  EXPECT_NEAR(consistency_dpo_from_d(-0.5, 0.5, 2.0), 0.12692801104297249644, 1e-14);
  EXPECT_GT(consistency_dpo_from_d(-0.4, 0.5, 2.0), consistency_dpo_from_d(-0.5, 0.5, 2.0));
  EXPECT_LT(consistency_dpo_from_d(-0.5, 0.6, 2.0), consistency_dpo_from_d(-0.5, 0.5, 2.0));
}

TEST(ConsistencyDpo, ReferenceIdentity) {
  const auto s = build_vp_schedule(16, 1e-3, 0.2);
  const auto grid = discretize(s, 6, 1.0);
  const ConsistencyNet cm(randomized(Mlp(small_spec()), 5), BoundaryScaling{});
  const auto teacher = randomized(DenoiserNet(small_spec()), 6);
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    const Vec w = rng.normal_vec(2), l = rng.normal_vec(2), e = rng.normal_vec(2);
    const ConsistencyDpoInput in{w, l, static_cast<Condition>(i % 2), 1 + static_cast<std::size_t>(i % 5), e};
    EXPECT_NEAR(loss_consistency_dpo(cm, cm, teacher, in, 200.0, s, grid), kLn2, 1e-9);
  }
}

TEST(ConsistencyDpo, GradientMatchesFiniteDifferences) {
  const auto s = build_vp_schedule(16, 1e-3, 0.2);
  const auto grid = discretize(s, 6, 1.0);
  MlpSpec spec = small_spec();
  spec.hidden = {6, 6};
  const ConsistencyNet student(randomized(Mlp(spec), 8), BoundaryScaling{});
  const ConsistencyNet ref(randomized(Mlp(spec), 9), BoundaryScaling{});
  const auto teacher = randomized(DenoiserNet(spec), 10);
  const Vec w{0.5, -0.2}, l{-0.7, 0.9}, e{0.3, 1.1};
  const ConsistencyDpoInput in{w, l, 0, 3, e};
  const auto report = grad_check(
      [&](std::span<const double> p, std::span<double> g) {
        ConsistencyNet n = student;
        std::copy(p.begin(), p.end(), n.params().values().begin());
        if (!g.empty()) std::fill(g.begin(), g.end(), 0.0);
        return loss_consistency_dpo(n, ref, teacher, in, 2.0, s, grid, g);
      },
      student.params().values(), 1e-5);
  EXPECT_LT(report.max_rel_error, 1e-5);
}
