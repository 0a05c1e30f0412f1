#include "cdpo/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

#include "cdpo/diffusion.hpp"
#include "cdpo/reward.hpp"

namespace cdpo {

NoiseSchedule make_schedule(const ExperimentConfig& c) {
  return build_vp_schedule(c.schedule.T, c.schedule.beta_min, c.schedule.beta_max);
}

TimeGrid make_grid(const ExperimentConfig& c, const NoiseSchedule& schedule) {
  return discretize(schedule, c.schedule.N, c.schedule.delta);
}

MlpSpec make_net_spec(const ExperimentConfig& c) {
  MlpSpec s;
  s.dim = c.data.dim;
  s.out_dim = c.data.dim;
  s.hidden = c.net.hidden;
  s.time_embed = c.net.time_emb;
  s.cond_embed = c.net.cond_emb;
  s.n_conditions = c.data.modes;
  s.time_horizon = static_cast<double>(c.schedule.T);
  return s;
}

BoundaryScaling make_boundary(const ExperimentConfig& c) {
  BoundaryScaling b;
  b.delta = c.schedule.delta;
  b.sigma_data = c.schedule.sigma_data;
  return b;
}

ToyDataset make_dataset(const ExperimentConfig& c) {
  Rng rng(c.seed, stream::data);
  return gen_toy_data(c.data, rng);
}

RewardFn make_reward(const ExperimentConfig& c) {
  return analytic_reward(c.reward.id, ring_modes(c.data), c.data.radius, c.reward.target_angle);
}

FinetuneOptions make_finetune_options(const ExperimentConfig& c) {
  FinetuneOptions o;
  o.beta = c.beta();
  o.optim = {c.lr(), c.train.beta1, c.train.beta2, c.train.eps, c.train.weight_decay};
  o.batch_pairs = c.batch_pairs();
  o.grad_accum = c.train.grad_accum;
  if (c.net.lora_rank > 0) o.lora = LoraSpec{c.net.lora_rank, c.net.lora_alpha};
  o.shared_eps = c.dpo.shared_eps;
  o.target_mode = c.target_mode();
  o.eval_every = c.metrics.eval_every;
  return o;
}

DenoiserNet pretrain_teacher(const ExperimentConfig& c, const ToyDataset& data, const NoiseSchedule& schedule,
                             TrainLog* log) {
  DenoiserNet net(make_net_spec(c));
  Rng init_rng(c.seed, stream::init);
  net.mlp().init(init_rng);
  PretrainOptions o;
  o.iters = c.train.pretrain_iters;
  o.batch_size = c.train.batch_size;
  o.optim = {c.train.pretrain_lr, c.train.beta1, c.train.beta2, c.train.eps, 0.0};
  Rng rng(c.seed, stream::pretrain);
  auto l = pretrain_diffusion(net, data.samples, schedule, o, rng);
  if (log) *log = std::move(l);
  return net;
}

ConsistencyNet distill_student(const ExperimentConfig& c, const DenoiserNet& teacher, const ToyDataset& data,
                               const NoiseSchedule& schedule, const TimeGrid& grid, TrainLog* log) {
  auto student = ConsistencyNet::from_teacher(teacher, make_boundary(c));
  DistillOptions o;
  o.iters = c.train.distill_iters;
  o.batch_size = c.train.batch_size;
  o.optim = {c.train.distill_lr, c.train.beta1, c.train.beta2, c.train.eps, 0.0};
  o.ema_decay = c.train.ema_decay;
  Rng rng(c.seed, stream::distill);
  auto l = distill_consistency(student, teacher, data.samples, grid, schedule, o, rng);
  if (log) *log = std::move(l);
  return student;
}

Generator::Generator(const DenoiserNet& net, const NoiseSchedule& schedule, int ddim_steps)
    : diffusion_(&net), schedule_(&schedule), steps_(ddim_steps) {}

Generator::Generator(const ConsistencyNet& net, const NoiseSchedule& schedule, int cm_steps)
    : consistency_(&net), schedule_(&schedule), steps_(cm_steps) {}

std::size_t Generator::dim() const { return diffusion_ ? diffusion_->dim() : consistency_->dim(); }

Vec Generator::sample(Condition c, Rng& rng) const {
  if (diffusion_) return sample_ddim(*diffusion_, c, *schedule_, steps_, rng, diffusion_->dim());
  return multistep_sample(*consistency_, c, *schedule_, consistency_->boundary().delta, steps_, rng,
                          consistency_->dim());
}

std::vector<std::vector<Example>> generate_pool(const Generator& gen, std::size_t n_conditions, std::size_t M,
                                                std::uint64_t seed, std::size_t threads) {
  std::vector<std::vector<Example>> pool(n_conditions);
  const Rng base(seed, stream::pool);
  auto work = [&](Condition c) {
    Rng rng = base.split(c);
    auto& out = pool[c];
    out.reserve(M);
    for (std::size_t i = 0; i < M; ++i) out.push_back({gen.sample(c, rng), c});
  };
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n_conditions, 1));
  if (threads == 1) {
    for (Condition c = 0; c < n_conditions; ++c) work(c);
    return pool;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < threads; ++w) {
    workers.emplace_back([&] {
      for (std::size_t c = next++; c < n_conditions; c = next++) work(c);
    });
  }
  for (auto& t : workers) t.join();
  return pool;
}

double mean_reward(const Generator& gen, const RewardFn& reward, std::size_t n_conditions, std::size_t per_condition,
                   std::uint64_t seed) {
  const Rng base(seed, stream::eval);
  double total = 0.0;
  for (Condition c = 0; c < n_conditions; ++c) {
    Rng rng = base.split(c);
    for (std::size_t i = 0; i < per_condition; ++i) total += reward(gen.sample(c, rng), c);
  }
  return total / static_cast<double>(n_conditions * per_condition);
}

RankedData rank_and_batch(const ExperimentConfig& c, const std::vector<std::vector<Example>>& pool,
                          const RewardFn& reward) {
  RankedData out;
  const std::size_t B = is_uniform_strategy(c) ? 1 : c.curriculum.B;
  out.plan.iters = schedule_iterations(B, c.curriculum.K, c.curriculum.total);
  const auto measure = c.measure();
  for (const auto& samples : pool) {
    auto ranked = rank_pool(samples, reward);
    const double range = ranked.samples.front().score - ranked.samples.back().score;
    auto pairs = build_pairs(ranked, c.curriculum.tau * range);
    BatchLimits limits = measure == DifficultyMeasure::rank || pairs.empty() ? batch_limits(ranked.M(), B)
                                                                            : score_quantile_limits(pairs, B);
    auto batches = assign_batches(pairs, limits, measure);
    batches.iters = out.plan.iters;
    out.plan.per_condition.push_back(std::move(batches));
    out.pools.push_back(std::move(ranked));
    out.pairs.push_back(std::move(pairs));
  }
  return out;
}

Generator Prepared::reference_generator() const {
  if (student) return Generator(*student, schedule, config.sample.cm_steps);
  return Generator(teacher, schedule, config.sample.ddim_steps);
}

Prepared prepare(const ExperimentConfig& config) {
  Prepared p{config, make_schedule(config), {}, make_dataset(config), make_reward(config), {}, std::nullopt, {}, {}};
  p.grid = make_grid(config, p.schedule);
  p.teacher = pretrain_teacher(config, p.data, p.schedule, &p.pretrain_log);
  if (config.variant() == DpoVariant::consistency) {
    p.student = distill_student(config, p.teacher, p.data, p.schedule, p.grid, &p.distill_log);
  }
  return p;
}

bool is_uniform_strategy(const ExperimentConfig& c) { return c.strategy == "dpo" || c.curriculum.B == 1; }

FinetuneOutcome run_finetune(const Prepared& prepared, const ExperimentConfig& c, std::size_t threads) {
  FinetuneOutcome out;
  const std::size_t C = prepared.data.n_conditions();
  const Generator ref_gen = prepared.reference_generator();
  const auto pool = generate_pool(ref_gen, C, c.curriculum.M, c.seed, threads);
  out.ranked = rank_and_batch(c, pool, prepared.reward);
  out.baseline_reward = mean_reward(ref_gen, prepared.reward, C, c.sample.eval_samples, c.seed);

  auto options = make_finetune_options(c);
  Rng rng(c.seed, stream::finetune);
  const bool uniform = is_uniform_strategy(c);
  std::vector<PreferencePair> all_pairs;
  for (const auto& p : out.ranked.pairs) all_pairs.insert(all_pairs.end(), p.begin(), p.end());

  if (c.variant() == DpoVariant::consistency) {
    require(prepared.student.has_value(), "run_finetune: consistency variant needs a distilled model");
    out.consistency = *prepared.student;
    const Generator gen(*out.consistency, prepared.schedule, c.sample.cm_steps);
    options.evaluate = [&] { return mean_reward(gen, prepared.reward, C, c.sample.eval_samples, c.seed); };
    out.log = uniform ? finetune_dpo(*out.consistency, *prepared.student, prepared.teacher, all_pairs,
                                     c.curriculum.total, prepared.schedule, prepared.grid, options, rng)
                      : finetune_curriculum(*out.consistency, *prepared.student, prepared.teacher, out.ranked.plan,
                                            prepared.schedule, prepared.grid, options, rng);
    out.final_reward = mean_reward(gen, prepared.reward, C, c.sample.eval_samples, c.seed);
  } else {
    out.diffusion = prepared.teacher;
    const Generator gen(*out.diffusion, prepared.schedule, c.sample.ddim_steps);
    options.evaluate = [&] { return mean_reward(gen, prepared.reward, C, c.sample.eval_samples, c.seed); };
    out.log = uniform ? finetune_dpo(*out.diffusion, prepared.teacher, all_pairs, c.curriculum.total,
                                     prepared.schedule, options, rng)
                      : finetune_curriculum(*out.diffusion, prepared.teacher, out.ranked.plan, prepared.schedule,
                                            options, rng);
    out.final_reward = mean_reward(gen, prepared.reward, C, c.sample.eval_samples, c.seed);
  }

  out.summary.strategy = uniform ? "dpo" : "curriculum-dpo";
  out.summary.beta = c.beta();
  out.summary.B = uniform ? 1 : c.curriculum.B;
  out.summary.K = c.curriculum.K;
  out.summary.M = c.curriculum.M;
  out.summary.final_mean_reward = out.final_reward;
  out.summary.seed = c.seed;
  return out;
}

}  // namespace cdpo
