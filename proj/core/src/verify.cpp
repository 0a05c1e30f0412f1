#include "cdpo/verify.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "cdpo/checkpoint.hpp"
#include "cdpo/config.hpp"
#include "cdpo/consistency.hpp"
#include "cdpo/diffusion.hpp"
#include "cdpo/dpo.hpp"
#include "cdpo/gradcheck.hpp"
#include "cdpo/preference.hpp"
#include "cdpo/trainer.hpp"

namespace cdpo {

namespace {

template <typename F>
CheckResult timed(const std::string& name, F&& body) {
  const auto start = std::chrono::steady_clock::now();
  CheckResult r;
  r.name = name;
  try {
    std::ostringstream detail;
    r.passed = body(detail);
    r.detail = detail.str();
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

MlpSpec small_spec(std::size_t n_conditions, double T) {
  MlpSpec s;
  s.dim = 2;
  s.out_dim = 2;
  s.hidden = {16, 16};
  s.time_embed = 8;
  s.cond_embed = 4;
  s.n_conditions = n_conditions;
  s.time_horizon = T;
  return s;
}

void randomize(ParamVector& p, Rng& rng, double scale) {
  for (auto& v : p.values()) v = scale * rng.normal();
}

Vec random_point(Rng& rng) {
  Vec x = rng.normal_vec(2);
  for (auto& v : x) v *= 1.5;
  return x;
}

}  // namespace

CheckResult check_reference_identity(const VerifyOptions& o) {
  return timed("reference identity", [&](std::ostream& out) {
    Rng rng(o.seed, 11);
    const double ln2 = std::numbers::ln2;
    const auto schedule = build_vp_schedule(32, 3e-3, 0.5);
    const auto grid = discretize(schedule, 8, 1.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < o.identity_inputs; ++i) {
      // Discrete policies.
      const auto n = static_cast<std::size_t>(rng.uniform_int(2, 6));
      DiscretePolicy policy(2, n);
      for (auto& l : policy.logits()) l = 2.0 * rng.normal();
      const DiscretePair pair{static_cast<Condition>(rng.uniform_int(0, 1)), 0,
                              static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(n) - 1))};
      const double beta = std::exp(rng.normal() * 2.0);
      worst = std::max(worst, std::abs(loss_dpo_discrete(policy, policy, pair, beta) - ln2));

      // Diffusion-DPO.
      DenoiserNet net(small_spec(3, 32));
      randomize(net.params(), rng, 0.5);
      const Vec w = random_point(rng), l = random_point(rng), ew = rng.normal_vec(2), el = rng.normal_vec(2);
      DiffusionDpoInput din{w, l, static_cast<Condition>(rng.uniform_int(0, 2)),
                            static_cast<int>(rng.uniform_int(1, 32)), ew, el};
      worst = std::max(worst, std::abs(loss_diffusion_dpo(net, net, din, 5000.0, schedule) - ln2));

      // Consistency-DPO.
      DenoiserNet teacher(small_spec(3, 32));
      randomize(teacher.params(), rng, 0.5);
      ConsistencyNet student(Mlp(small_spec(3, 32)), BoundaryScaling{});
      randomize(student.params(), rng, 0.5);
      const Vec eps = rng.normal_vec(2);
      ConsistencyDpoInput cin{w, l, din.condition, static_cast<std::size_t>(rng.uniform_int(1, 7)), eps};
      worst = std::max(worst,
                       std::abs(loss_consistency_dpo(student, student, teacher, cin, 200.0, schedule, grid) - ln2));
    }
    out << "max |loss - ln 2| = " << worst << " over " << o.identity_inputs << " inputs per loss";
    return worst <= 1e-9;
  });
}

CheckResult check_gradients(const VerifyOptions& o) {
  return timed("gradients", [&](std::ostream& out) {
    Rng rng(o.seed, 12);
    const auto schedule = build_vp_schedule(16, 5e-3, 0.6);
    const auto grid = discretize(schedule, 6, 1.0);
    const double h = 1e-5;
    const double tol = 1e-5;
    bool ok = true;
    auto report = [&](const std::string& name, const GradCheckReport& r) {
      out << name << " " << r.max_rel_error << "; ";
      ok = ok && r.max_rel_error < tol;
    };

    DenoiserNet net(small_spec(2, 16));
    randomize(net.params(), rng, 0.4);
    DenoiserNet ref(small_spec(2, 16));
    randomize(ref.params(), rng, 0.4);
    out << "params " << net.params().size() << "; ";

    std::vector<Example> batch;
    for (int i = 0; i < 4; ++i) batch.push_back({random_point(rng), static_cast<Condition>(i % 2)});
    const auto simple_draws = draw_simple_noise(batch.size(), 2, schedule, rng);
    {
      DenoiserNet probe = net;
      report("L_simple", grad_check(
                             [&](std::span<const double> p, std::span<double> g) {
                               std::copy(p.begin(), p.end(), probe.params().values().begin());
                               return loss_simple(probe, batch, simple_draws, schedule, g);
                             },
                             net.params().values(), h));
    }

    ConsistencyNet student(net.mlp(), BoundaryScaling{});
    ConsistencyNet target(ref.mlp(), BoundaryScaling{});
    const auto cd_draws = draw_cd_noise(batch.size(), 2, grid, rng);
    {
      ConsistencyNet probe = student;
      report("L_CD", grad_check(
                         [&](std::span<const double> p, std::span<double> g) {
                           std::copy(p.begin(), p.end(), probe.params().values().begin());
                           return loss_cd(probe, target, ref, batch, cd_draws, grid, schedule, g);
                         },
                         student.params().values(), h));
    }

    {
      DiscretePolicy policy(2, 5), pref(2, 5);
      for (auto& l : policy.logits()) l = rng.normal();
      for (auto& l : pref.logits()) l = rng.normal();
      const DiscretePair pair{1, 3, 0};
      report("L_DPO", grad_check(
                          [&](std::span<const double> p, std::span<double> g) {
                            DiscretePolicy probe = policy;
                            std::copy(p.begin(), p.end(), probe.logits().begin());
                            return loss_dpo_discrete(probe, pref, pair, 1.7, g);
                          },
                          policy.logits(), h));
    }

    const Vec w = random_point(rng), l = random_point(rng), ew = rng.normal_vec(2), el = rng.normal_vec(2);
    {
      DenoiserNet probe = net;
      const DiffusionDpoInput in{w, l, 1, 7, ew, el};
      report("L_Diff-DPO", grad_check(
                               [&](std::span<const double> p, std::span<double> g) {
                                 std::copy(p.begin(), p.end(), probe.params().values().begin());
                                 return loss_diffusion_dpo(probe, ref, in, 0.05, schedule, g);
                               },
                               net.params().values(), h));
    }

    const ConsistencyDpoInput cin{w, l, 0, 3, ew};
    const double beta = 0.8;
    {
      ConsistencyNet probe = student;
      report("L_Con-DPO", grad_check(
                              [&](std::span<const double> p, std::span<double> g) {
                                std::copy(p.begin(), p.end(), probe.params().values().begin());
                                return loss_consistency_dpo(probe, target, ref, cin, beta, schedule, grid, g);
                              },
                              student.params().values(), h));
    }

    // Factored form: beta * sigma(beta (d_w - d_l)) * (grad d_w - grad d_l).
    {
      Vec fused(student.params().size(), 0.0);
      ConsistencyDpoTerms terms;
      loss_consistency_dpo(student, target, ref, cin, beta, schedule, grid, fused, &terms);
      auto grad_d = [&](std::span<const double> x0) {
        const auto p = trajectory_pair(ref, x0, cin.condition, cin.n, cin.eps, grid, schedule);
        const Vec tgt = target.apply(p.x_hat, p.t_cur, cin.condition);
        MlpCache cache;
        const Vec y = student.forward(p.x_next, p.t_next, cin.condition, &cache);
        Vec dout(y.size());
        for (std::size_t k = 0; k < y.size(); ++k) dout[k] = 2.0 * (y[k] - tgt[k]);
        Vec g(student.params().size(), 0.0);
        student.backward(cache, p.t_next, dout, g);
        return g;
      };
      const Vec gw = grad_d(w);
      const Vec gl = grad_d(l);
      const double weight = beta * sigmoid(beta * (terms.d_w - terms.d_l));
      double worst = 0.0;
      for (std::size_t i = 0; i < fused.size(); ++i) {
        const double factored = weight * (gw[i] - gl[i]);
        const double denom = std::max({std::abs(factored), std::abs(fused[i]), 1e-12});
        worst = std::max(worst, std::abs(factored - fused[i]) / denom);
      }
      out << "factored " << worst;
      ok = ok && worst < 1e-6;
    }
    return ok;
  });
}

CheckResult check_curriculum_structure(const VerifyOptions& o) {
  return timed("curriculum structure", [&](std::ostream& out) {
    Rng rng(o.seed, 13);
    std::size_t failures = 0;
    std::string first;
    auto fail = [&](const std::string& why) {
      if (failures++ == 0) first = why;
    };
    for (std::size_t n = 0; n < o.curriculum_cases; ++n) {
      const auto M = static_cast<std::size_t>(rng.uniform_int(3, 300));
      const auto B = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(std::min<std::size_t>(M - 1, 10))));
      const auto lim = batch_limits(M, B);
      if (lim.upper[0] != static_cast<double>(M - 1)) fail("R_1 != M-1");
      if (lim.lower[B - 1] != 0.0) fail("L_B != 0");
      for (std::size_t k = 0; k + 1 < B; ++k) {
        if (lim.upper[k + 1] != lim.lower[k]) fail("R_{k+1} != L_k");
      }

      RankedPool pool;
      for (std::size_t i = 0; i < M; ++i) pool.samples.push_back({i, {}, static_cast<double>(M - i) + rng.uniform01() * 0.5});
      const auto pairs = build_pairs(pool, 0.0);
      if (pairs.size() != M * (M - 1) / 2) fail("pair count");
      const auto measure = n % 2 == 0 ? DifficultyMeasure::rank : DifficultyMeasure::score;
      const auto limits = measure == DifficultyMeasure::rank ? lim : score_quantile_limits(pairs, B);
      const auto batches = assign_batches(pairs, limits, measure);

      std::set<std::pair<std::size_t, std::size_t>> seen;
      std::size_t covered = 0;
      for (std::size_t k = 0; k < B; ++k) {
        for (const auto& p : batches.batches[k]) {
          if (!seen.insert({p.winner_rank, p.loser_rank}).second) fail("pair in two batches");
          const double d = difficulty(p, measure);
          if (!(limits.lower[k] < d && d <= limits.upper[k])) fail("pair outside its interval");
          ++covered;
        }
      }
      if (covered != pairs.size() || batches.dropped != 0) fail("partition does not cover all pairs");
      double prev_min = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < B; ++k) {
        const auto& b = batches.batches[k];
        if (b.empty()) continue;
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& p : b) {
          lo = std::min(lo, difficulty(p, measure));
          hi = std::max(hi, difficulty(p, measure));
        }
        if (!(prev_min > hi)) fail("batches not strictly ordered by difficulty");
        prev_min = lo;
      }

      const int K = static_cast<int>(rng.uniform_int(0, 500));
      const int total = static_cast<int>((B - 1) * K + rng.uniform_int(1, 1000));
      const auto H = schedule_iterations(B, K, total);
      long long sum = 0;
      for (const int x : H) sum += x;
      if (sum != total || H.size() != B) fail("schedule does not sum to total");
    }
    out << o.curriculum_cases << " cases, " << failures << " failures";
    if (failures) out << " (first: " << first << ")";
    return failures == 0;
  });
}

CheckResult check_optimal_policy(const VerifyOptions& o) {
  return timed("optimal policy", [&](std::ostream& out) {
    Rng rng(o.seed, 14);
    double worst = 0.0;
    for (std::size_t inst = 0; inst < o.policy_instances; ++inst) {
      const auto n = static_cast<std::size_t>(rng.uniform_int(3, 5));
      std::vector<Vec> probs(1, Vec(n));
      double s = 0.0;
      for (auto& p : probs[0]) s += (p = 0.2 + rng.uniform01());
      for (auto& p : probs[0]) p /= s;
      const auto ref = DiscretePolicy::from_probs(probs);
      Vec r(n);
      for (auto& v : r) v = 2.0 * rng.uniform01() - 1.0;
      const double beta = 0.5 + 1.5 * rng.uniform01();
      const auto target = optimal_policy_oracle(ref, [&](std::size_t i, Condition) { return r[i]; }, beta);

      // Full-batch descent on the Bradley-Terry-weighted expected loss.
      DiscretePolicy policy = ref;
      OptimState state(policy.logits().size(), AdamWConfig{0.05});
      Vec grad(policy.logits().size());
      for (int step = 0; step < 4000; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            Vec g(grad.size(), 0.0);
            loss_dpo_discrete(policy, ref, {0, i, j}, beta, g);
            const double weight = sigmoid(r[i] - r[j]);
            for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += weight * g[k];
          }
        }
        adamw_step(policy.logits(), grad, state);
      }
      worst = std::max(worst, total_variation(policy.probs(0), target.probs(0)));
    }
    out << "max TV = " << worst << " over " << o.policy_instances << " instances";
    return worst < 1e-2;
  });
}

CheckResult check_checkpoints(const VerifyOptions& o) {
  return timed("checkpoints", [&](std::ostream& out) {
    namespace fs = std::filesystem;
    const fs::path dir = o.scratch_dir.empty() ? fs::temp_directory_path() : fs::path(o.scratch_dir);
    const fs::path file = dir / ("cdpo-verify-" + std::to_string(o.seed) + ".ckpt");
    Rng rng(o.seed, 15);
    DenoiserNet net(small_spec(3, 32));
    for (auto& v : net.params().values()) v = rng.normal() * std::exp(10.0 * rng.normal());
    save_denoiser(net, file.string());
    const auto back = load_denoiser(file.string());
    bool ok = std::memcmp(back.params().values().data(), net.params().values().data(),
                          net.params().size() * sizeof(double)) == 0 &&
              back.params().layout() == net.params().layout();

    const auto size = fs::file_size(file);
    fs::resize_file(file, size - 5);
    bool truncated_rejected = false;
    try {
      load_checkpoint(file.string());
    } catch (const CheckpointError& e) {
      truncated_rejected = e.reason() == CheckpointError::Reason::checksum_mismatch;
    }
    save_denoiser(net, file.string());
    {
      std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(static_cast<std::streamoff>(size - 3));
      f.put('\x5a');
    }
    bool flipped_rejected = false;
    try {
      load_checkpoint(file.string());
    } catch (const CheckpointError&) {
      flipped_rejected = true;
    }
    fs::remove(file);
    out << "round trip " << (ok ? "exact" : "differs") << ", truncation "
        << (truncated_rejected ? "rejected" : "accepted") << ", corruption "
        << (flipped_rejected ? "rejected" : "accepted");
    return ok && truncated_rejected && flipped_rejected;
  });
}

CheckResult check_boundary_and_config(const VerifyOptions& o) {
  return timed("boundary and config", [&](std::ostream& out) {
    Rng rng(o.seed, 16);
    ConsistencyNet net(Mlp(small_spec(3, 32)), BoundaryScaling{});
    randomize(net.params(), rng, 1.0);
    bool exact = true;
    for (int i = 0; i < 100; ++i) {
      const Vec x = random_point(rng);
      const Vec y = net.forward(x, net.boundary().delta, static_cast<Condition>(i % 3));
      exact = exact && std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) == 0;
    }
    ExperimentConfig c;
    c.seed = 42;
    c.dpo.beta = 123.5;
    c.net.hidden = {32, 16, 8};
    c.curriculum.measure = "score";
    const bool round_trip = parse_config(to_json_string(c)) == c;
    out << "boundary " << (exact ? "exact" : "inexact") << ", config round trip " << (round_trip ? "ok" : "broken");
    return exact && round_trip;
  });
}

std::vector<CheckResult> run_verify_suite(const VerifyOptions& options) {
  return {check_reference_identity(options), check_gradients(options),   check_curriculum_structure(options),
          check_optimal_policy(options),     check_checkpoints(options), check_boundary_and_config(options)};
}

}  // namespace cdpo
