#include <gtest/gtest.h>

#include "cdpo/gradcheck.hpp"
#include "cdpo/nets.hpp"

using namespace cdpo;

namespace {

MlpSpec small_spec() {
  MlpSpec s;
  s.hidden = {6, 5};
  s.time_embed = 4;
  s.cond_embed = 3;
  s.n_conditions = 3;
  s.time_horizon = 16;
  return s;
}

Mlp random_mlp(std::uint64_t seed) {
  Mlp m(small_spec());
  Rng rng(seed);
  for (auto& v : m.params().values()) v = 0.4 * rng.normal();
  return m;
}

}  // namespace

TEST(Mlp, ZeroParamsGiveZeroOutput) {
  Mlp m(small_spec());
  EXPECT_EQ(m.forward(Vec{0.3, -2.0}, 5.0, 1), (Vec{0.0, 0.0}));
}

TEST(Mlp, InitLeavesOutputLayerZero) {
  Mlp m(small_spec());
  Rng rng(1);
  m.init(rng);
  EXPECT_EQ(m.forward(Vec{0.3, -2.0}, 5.0, 2), (Vec{0.0, 0.0}));
}

TEST(Mlp, ForwardIsPure) {
  const auto m = random_mlp(3);
  EXPECT_EQ(m.forward(Vec{0.1, 0.2}, 3.5, 0), m.forward(Vec{0.1, 0.2}, 3.5, 0));
}

TEST(Mlp, GradientOfSquaredNormMatchesFiniteDifferences) {
  const auto m = random_mlp(4);
  const Vec x{0.7, -0.4};
  const auto report = grad_check(
      [&](std::span<const double> p, std::span<double> g) {
        Mlp n = m;
        std::copy(p.begin(), p.end(), n.params().values().begin());
        MlpCache cache;
        const Vec y = n.forward(x, 7.25, 2, &cache);
        if (!g.empty()) {
          std::fill(g.begin(), g.end(), 0.0);
          Vec dout(y.size());
          for (std::size_t i = 0; i < y.size(); ++i) dout[i] = 2.0 * y[i];
          n.backward(cache, dout, g);
        }
        double s = 0.0;
        for (const double v : y) s += v * v;
        return s;
      },
      m.params().values(), 1e-5);
  EXPECT_LT(report.max_rel_error, 1e-5);
}

TEST(GradCheck, QuadraticIsExact) {
  const Vec p{0.5, -1.5, 2.0, 3.25};
  const auto report = grad_check(
      [](std::span<const double> q, std::span<double> g) {
        double s = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i) {
          s += 0.5 * q[i] * q[i];
          if (!g.empty()) g[i] = q[i];
        }
        return s;
      },
      p, 1e-4);
  EXPECT_LT(report.max_rel_error, 1e-9);
}

TEST(GradCheck, ConstantLossHasZeroError) {
  const Vec p{1.0, 2.0};
  const auto report = grad_check(
      [](std::span<const double>, std::span<double> g) {
        if (!g.empty()) std::fill(g.begin(), g.end(), 0.0);
        return 3.0;
      },
      p, 1e-4);
  EXPECT_LT(report.max_rel_error, 1e-12);
}

TEST(Lora, ZeroUpdateKeepsBaseOutputs) {
  const auto base = random_mlp(5);
  LoraAdapter a(base.spec(), {2, 8.0});
  Rng rng(6);
  a.init(rng);  // B starts at zero
  const auto adapted = apply_lora(base, a);
  for (int i = 0; i < 20; ++i) {
    const Vec x = rng.normal_vec(2);
    EXPECT_EQ(adapted.forward(x, 3.0, 1), base.forward(x, 3.0, 1));
  }
}

TEST(Lora, ScaleIsAlphaOverRank) {
  LoraAdapter a(small_spec(), {8, 32.0});
  EXPECT_EQ(a.scale(), 4.0);
}

TEST(Lora, RankOneUpdateOnTwoByTwoLayer) {
  MlpSpec s;
  s.dim = 1;
  s.out_dim = 1;
  s.hidden = {2, 2};  // layer 1 is the 2x2 map under test
  s.time_embed = 0;
  s.cond_embed = 0;
  Mlp base(s);
  const std::string w1 = Mlp::weight_name(1);
  auto W = base.params().view(w1);
  const double w0[] = {1.0, 2.0, 3.0, 4.0};
  std::copy(std::begin(w0), std::end(w0), W.begin());

  LoraAdapter a(s, {1, 2.0});  // scale 2
  auto A = a.params().view(LoraAdapter::a_name(1));
  auto B = a.params().view(LoraAdapter::b_name(1));
  A[0] = 1.0;
  A[1] = -1.0;  // A is 1x2
  B[0] = 0.5;
  B[1] = 2.0;  // B is 2x1
  const auto merged = apply_lora(base, a);
  const auto M = merged.params().view(w1);
  // W + 2 * B A = [[1+1, 2-1], [3+4, 4-4]]
  EXPECT_DOUBLE_EQ(M[0], 2.0);
  EXPECT_DOUBLE_EQ(M[1], 1.0);
  EXPECT_DOUBLE_EQ(M[2], 7.0);
  EXPECT_DOUBLE_EQ(M[3], 0.0);
}
