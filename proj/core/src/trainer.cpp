#include "cdpo/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "cdpo/diffusion.hpp"

namespace cdpo {

OptimState::OptimState(std::size_t n, AdamWConfig cfg) : config(cfg), m(n, 0.0), v(n, 0.0) {}

void adamw_step(std::span<double> params, std::span<const double> grads, OptimState& state) {
  require(params.size() == grads.size() && state.m.size() == params.size() && state.v.size() == params.size(),
          "adamw_step: parameter, gradient and moment sizes differ");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericalAbort("adamw_step: non-finite gradient at coordinate " + std::to_string(i) + " (step " +
                           std::to_string(state.step + 1) + ")");
    }
  }
  const auto& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * grads[i];
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= c.lr * c.weight_decay * params[i];
    params[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
  }
}

Vec TrainLog::losses() const {
  Vec out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.loss);
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::vector<Example> draw_minibatch(std::span<const Example> data, std::size_t size, Rng& rng) {
  std::vector<Example> batch;
  batch.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    batch.push_back(data[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1))]);
  }
  return batch;
}

void guard_loss(double loss, double initial, long long iter, const char* what) {
  if (!std::isfinite(loss)) {
    throw NumericalAbort(std::string(what) + ": non-finite loss at iteration " + std::to_string(iter));
  }
  if (initial > 0.0 && loss > 1e3 * initial) {
    throw NumericalAbort(std::string(what) + ": loss " + std::to_string(loss) + " exceeds 1000x the initial " +
                         std::to_string(initial) + " at iteration " + std::to_string(iter));
  }
}

}  // namespace

TrainLog pretrain_diffusion(DenoiserNet& net, std::span<const Example> data, const NoiseSchedule& schedule,
                            const PretrainOptions& options, Rng& rng) {
  require(options.iters >= 1, "pretrain_diffusion: iters must be >= 1");
  require(!data.empty() && options.batch_size >= 1, "pretrain_diffusion: empty data or batch");
  TrainLog log;
  OptimState state(net.params().size(), options.optim);
  Vec grad(net.params().size());
  double initial = 0.0;
  const auto start = Clock::now();
  for (long long it = 1; it <= options.iters; ++it) {
    const auto batch = draw_minibatch(data, options.batch_size, rng);
    std::fill(grad.begin(), grad.end(), 0.0);
    const double loss = loss_simple(net, batch, schedule, rng, grad);
    if (it == 1) initial = loss;
    guard_loss(loss, initial, it, "pretrain_diffusion");
    adamw_step(net.params().values(), grad, state);
    log.entries.push_back({it, 0, loss, std::nullopt, elapsed_ms(start)});
  }
  return log;
}

TrainLog distill_consistency(ConsistencyNet& student, const DenoiserNet& teacher, std::span<const Example> data,
                             const TimeGrid& grid, const NoiseSchedule& schedule, const DistillOptions& options,
                             Rng& rng) {
  require(options.iters >= 1, "distill_consistency: iters must be >= 1");
  require(!data.empty() && options.batch_size >= 1, "distill_consistency: empty data or batch");
  require(options.ema_decay >= 0.0 && options.ema_decay < 1.0, "distill_consistency: ema_decay must be in [0, 1)");
  TrainLog log;
  ConsistencyNet target = student;
  OptimState state(student.params().size(), options.optim);
  Vec grad(student.params().size());
  double initial = 0.0;
  const auto start = Clock::now();
  for (long long it = 1; it <= options.iters; ++it) {
    const auto batch = draw_minibatch(data, options.batch_size, rng);
    std::fill(grad.begin(), grad.end(), 0.0);
    const double loss = loss_cd(student, target, teacher, batch, grid, schedule, rng, grad);
    if (it == 1) initial = loss;
    guard_loss(loss, initial, it, "distill_consistency");
    adamw_step(student.params().values(), grad, state);
    auto& tv = target.params().values();
    const auto& sv = student.params().values();
    for (std::size_t i = 0; i < tv.size(); ++i) tv[i] = options.ema_decay * tv[i] + (1.0 - options.ema_decay) * sv[i];
    log.entries.push_back({it, 0, loss, std::nullopt, elapsed_ms(start)});
  }
  return log;
}

namespace {

/// Shared optimisation loop. `mlp` is the trainable network inside the model;
/// `pair_loss(draw, grad)` evaluates one pair on the current weights.
template <typename PairLoss>
TrainLog run_finetune(Mlp& mlp, const CurriculumPlan& plan, const FinetuneOptions& options, Rng& rng,
                      PairLoss&& pair_loss) {
  require(options.beta > 0.0, "finetune: beta must be positive");
  require(options.batch_pairs >= 1 && options.grad_accum >= 1, "finetune: batch_pairs and grad_accum must be >= 1");
  const std::size_t per_iter = options.batch_pairs * options.grad_accum;

  const Mlp base = mlp;
  std::optional<LoraAdapter> adapter;
  if (options.lora) {
    adapter.emplace(mlp.spec(), *options.lora);
    Rng lora_rng = rng.split(0x4c6f5241);
    adapter->init(lora_rng);
    adapter->merge(base, mlp.params());
  }
  Vec& trainable = adapter ? adapter->params().values() : mlp.params().values();
  OptimState state(trainable.size(), options.optim);
  Vec grad(mlp.params().size());
  Vec adapter_grad(adapter ? trainable.size() : 0);

  CurriculumSampler sampler(plan, rng);
  TrainLog log;
  const auto start = Clock::now();
  long long it = 0;
  while (auto draws = sampler.next_batch(per_iter)) {
    ++it;
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (const auto& d : *draws) loss += pair_loss(*d.pair, std::span<double>(grad));
    const double inv = 1.0 / static_cast<double>(per_iter);
    loss *= inv;
    for (auto& g : grad) g *= inv;
    if (!std::isfinite(loss)) {
      throw NumericalAbort("finetune: non-finite loss at iteration " + std::to_string(it));
    }
    if (adapter) {
      std::fill(adapter_grad.begin(), adapter_grad.end(), 0.0);
      adapter->pullback(base, grad, adapter_grad);
      adamw_step(trainable, adapter_grad, state);
      adapter->merge(base, mlp.params());
    } else {
      adamw_step(trainable, grad, state);
    }
    LogEntry entry{it, draws->front().phase, loss, std::nullopt, 0.0};
    if (options.evaluate && options.eval_every > 0 && it % options.eval_every == 0) {
      entry.mean_reward = options.evaluate();
    }
    entry.wallclock_ms = elapsed_ms(start);
    log.entries.push_back(entry);
  }
  return log;
}

}  // namespace

TrainLog finetune_curriculum(DenoiserNet& model, const DenoiserNet& ref, const CurriculumPlan& plan,
                             const NoiseSchedule& schedule, const FinetuneOptions& options, Rng& rng) {
  require(model.mlp().spec() == ref.mlp().spec(), "finetune: model and reference architectures differ");
  const std::size_t D = model.dim();
  return run_finetune(model.mlp(), plan, options, rng, [&](const PreferencePair& p, std::span<double> grad) {
    DiffusionDpoInput in;
    in.winner = p.winner;
    in.loser = p.loser;
    in.condition = p.condition;
    in.t = static_cast<int>(rng.uniform_int(1, schedule.T()));
    const Vec eps_w = rng.normal_vec(D);
    const Vec eps_l = options.shared_eps ? eps_w : rng.normal_vec(D);
    in.eps_w = eps_w;
    in.eps_l = eps_l;
    return loss_diffusion_dpo(model, ref, in, options.beta, schedule, grad);
  });
}

TrainLog finetune_curriculum(ConsistencyNet& model, const ConsistencyNet& ref, const DenoiserNet& teacher,
                             const CurriculumPlan& plan, const NoiseSchedule& schedule, const TimeGrid& grid,
                             const FinetuneOptions& options, Rng& rng) {
  require(model.raw().spec() == ref.raw().spec(), "finetune: model and reference architectures differ");
  const std::size_t D = model.dim();
  return run_finetune(model.raw(), plan, options, rng, [&](const PreferencePair& p, std::span<double> grad) {
    ConsistencyDpoInput in;
    in.winner = p.winner;
    in.loser = p.loser;
    in.condition = p.condition;
    in.n = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(grid.N()) - 1));
    const Vec eps = rng.normal_vec(D);
    in.eps = eps;
    return loss_consistency_dpo(model, ref, teacher, in, options.beta, schedule, grid, grad, nullptr,
                                options.target_mode);
  });
}

CurriculumPlan uniform_plan(std::span<const PreferencePair> pairs, int iters) {
  if (pairs.empty()) throw std::invalid_argument("finetune_dpo: empty pair set");
  require(iters >= 1, "finetune_dpo: iters must be >= 1");
  std::map<Condition, std::vector<PreferencePair>> grouped;
  for (const auto& p : pairs) grouped[p.condition].push_back(p);
  CurriculumPlan plan;
  plan.iters = {iters};
  for (auto& [c, list] : grouped) {
    CurriculumBatches b;
    b.limits.lower = {-std::numeric_limits<double>::infinity()};
    b.limits.upper = {std::numeric_limits<double>::infinity()};
    b.batches.push_back(std::move(list));
    b.iters = plan.iters;
    plan.per_condition.push_back(std::move(b));
  }
  return plan;
}

TrainLog finetune_dpo(DenoiserNet& model, const DenoiserNet& ref, std::span<const PreferencePair> pairs, int iters,
                      const NoiseSchedule& schedule, const FinetuneOptions& options, Rng& rng) {
  return finetune_curriculum(model, ref, uniform_plan(pairs, iters), schedule, options, rng);
}

TrainLog finetune_dpo(ConsistencyNet& model, const ConsistencyNet& ref, const DenoiserNet& teacher,
                      std::span<const PreferencePair> pairs, int iters, const NoiseSchedule& schedule,
                      const TimeGrid& grid, const FinetuneOptions& options, Rng& rng) {
  return finetune_curriculum(model, ref, teacher, uniform_plan(pairs, iters), schedule, grid, options, rng);
}

}  // namespace cdpo
