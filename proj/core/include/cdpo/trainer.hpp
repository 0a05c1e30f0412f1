#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "cdpo/common.hpp"
#include "cdpo/consistency.hpp"
#include "cdpo/dpo.hpp"
#include "cdpo/nets.hpp"
#include "cdpo/preference.hpp"
#include "cdpo/schedule.hpp"

namespace cdpo {

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct OptimState {
  OptimState() = default;
  OptimState(std::size_t n, AdamWConfig config);

  AdamWConfig config;
  Vec m;
  Vec v;
  long long step = 0;
};

/// Decoupled-weight-decay Adam with bias correction. Throws NumericalAbort on a
/// non-finite gradient before touching the parameters.
void adamw_step(std::span<double> params, std::span<const double> grads, OptimState& state);

struct LogEntry {
  long long iter = 0;  ///< 1-based optimizer step
  std::size_t phase = 0;
  double loss = 0.0;
  std::optional<double> mean_reward;
  double wallclock_ms = 0.0;  ///< since the loop started
};

struct TrainLog {
  std::vector<LogEntry> entries;

  Vec losses() const;
};

struct PretrainOptions {
  int iters = 5000;
  std::size_t batch_size = 64;
  AdamWConfig optim{1e-3};
};

/// Minibatch descent on loss_simple. Aborts when the loss stops being finite or
/// exceeds 1000x its first value.
TrainLog pretrain_diffusion(DenoiserNet& net, std::span<const Example> data, const NoiseSchedule& schedule,
                            const PretrainOptions& options, Rng& rng);

struct DistillOptions {
  int iters = 5000;
  std::size_t batch_size = 64;
  AdamWConfig optim{1e-3};
  double ema_decay = 0.95;
};

/// Consistency distillation against an EMA copy of the student.
TrainLog distill_consistency(ConsistencyNet& student, const DenoiserNet& teacher, std::span<const Example> data,
                             const TimeGrid& grid, const NoiseSchedule& schedule, const DistillOptions& options,
                             Rng& rng);

struct FinetuneOptions {
  double beta = 200.0;
  AdamWConfig optim;
  std::size_t batch_pairs = 1;
  std::size_t grad_accum = 1;
  std::optional<LoraSpec> lora;
  /// Diffusion variant only: reuse eps_w for the loser branch.
  bool shared_eps = false;
  TargetMode target_mode = TargetMode::reference;
  /// Evaluated every `eval_every` iterations (and never when 0) with the model
  /// holding its current weights.
  std::function<double()> evaluate;
  int eval_every = 0;
};

/// Staged fine-tuning: phase k draws from the accumulated batches S_1..S_k.
TrainLog finetune_curriculum(DenoiserNet& model, const DenoiserNet& ref, const CurriculumPlan& plan,
                             const NoiseSchedule& schedule, const FinetuneOptions& options, Rng& rng);
TrainLog finetune_curriculum(ConsistencyNet& model, const ConsistencyNet& ref, const DenoiserNet& teacher,
                             const CurriculumPlan& plan, const NoiseSchedule& schedule, const TimeGrid& grid,
                             const FinetuneOptions& options, Rng& rng);

/// Single-batch plan holding every pair, grouped by condition.
CurriculumPlan uniform_plan(std::span<const PreferencePair> pairs, int iters);

/// Baseline: uniform pair draws over all pairs for `iters` iterations.
TrainLog finetune_dpo(DenoiserNet& model, const DenoiserNet& ref, std::span<const PreferencePair> pairs, int iters,
                      const NoiseSchedule& schedule, const FinetuneOptions& options, Rng& rng);
TrainLog finetune_dpo(ConsistencyNet& model, const ConsistencyNet& ref, const DenoiserNet& teacher,
                      std::span<const PreferencePair> pairs, int iters, const NoiseSchedule& schedule,
                      const TimeGrid& grid, const FinetuneOptions& options, Rng& rng);

}  // namespace cdpo
