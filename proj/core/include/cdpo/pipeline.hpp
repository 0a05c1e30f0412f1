#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "cdpo/config.hpp"
#include "cdpo/consistency.hpp"
#include "cdpo/data.hpp"
#include "cdpo/metrics.hpp"
#include "cdpo/nets.hpp"
#include "cdpo/preference.hpp"
#include "cdpo/schedule.hpp"
#include "cdpo/trainer.hpp"

namespace cdpo {

/// RNG stream ids; every stage draws from its own stream of the run seed.
namespace stream {
inline constexpr std::uint64_t data = 1;
inline constexpr std::uint64_t init = 2;
inline constexpr std::uint64_t pretrain = 3;
inline constexpr std::uint64_t distill = 4;
inline constexpr std::uint64_t pool = 5;
inline constexpr std::uint64_t finetune = 6;
inline constexpr std::uint64_t eval = 7;
}  // namespace stream

NoiseSchedule make_schedule(const ExperimentConfig& config);
TimeGrid make_grid(const ExperimentConfig& config, const NoiseSchedule& schedule);
MlpSpec make_net_spec(const ExperimentConfig& config);
BoundaryScaling make_boundary(const ExperimentConfig& config);
ToyDataset make_dataset(const ExperimentConfig& config);
RewardFn make_reward(const ExperimentConfig& config);
FinetuneOptions make_finetune_options(const ExperimentConfig& config);

DenoiserNet pretrain_teacher(const ExperimentConfig& config, const ToyDataset& data, const NoiseSchedule& schedule,
                             TrainLog* log = nullptr);
ConsistencyNet distill_student(const ExperimentConfig& config, const DenoiserNet& teacher, const ToyDataset& data,
                               const NoiseSchedule& schedule, const TimeGrid& grid, TrainLog* log = nullptr);

/// Draws x0 from either a diffusion model (DDIM) or a consistency model (multistep).
class Generator {
 public:
  Generator(const DenoiserNet& net, const NoiseSchedule& schedule, int ddim_steps);
  Generator(const ConsistencyNet& net, const NoiseSchedule& schedule, int cm_steps);

  Vec sample(Condition c, Rng& rng) const;
  std::size_t dim() const;

 private:
  const DenoiserNet* diffusion_ = nullptr;
  const ConsistencyNet* consistency_ = nullptr;
  const NoiseSchedule* schedule_;
  int steps_;
};

/// M samples per condition. Condition c uses substream c of the pool stream, so
/// results do not depend on `threads`.
std::vector<std::vector<Example>> generate_pool(const Generator& gen, std::size_t n_conditions, std::size_t M,
                                                std::uint64_t seed, std::size_t threads = 1);

/// Mean reward over `per_condition` samples of each condition from a fixed
/// evaluation stream.
double mean_reward(const Generator& gen, const RewardFn& reward, std::size_t n_conditions,
                   std::size_t per_condition, std::uint64_t seed);

struct RankedData {
  std::vector<RankedPool> pools;
  std::vector<std::vector<PreferencePair>> pairs;  ///< per condition
  CurriculumPlan plan;
};

/// Ranks each condition's pool, builds pairs above tau * (score range) and
/// splits them into B difficulty batches.
RankedData rank_and_batch(const ExperimentConfig& config, const std::vector<std::vector<Example>>& pool,
                          const RewardFn& reward);

/// Trained reference models for one seed.
struct Prepared {
  ExperimentConfig config;
  NoiseSchedule schedule;
  TimeGrid grid;
  ToyDataset data;
  RewardFn reward;
  DenoiserNet teacher;
  std::optional<ConsistencyNet> student;
  TrainLog pretrain_log;
  TrainLog distill_log;

  Generator reference_generator() const;
};

Prepared prepare(const ExperimentConfig& config);

struct FinetuneOutcome {
  TrainLog log;
  RunSummary summary;
  double baseline_reward = 0.0;
  double final_reward = 0.0;
  std::optional<DenoiserNet> diffusion;
  std::optional<ConsistencyNet> consistency;
  RankedData ranked;
};

/// `strategy`, `curriculum.*`, `dpo.*` and `train.*` come from `config`; the
/// reference models come from `prepared`.
FinetuneOutcome run_finetune(const Prepared& prepared, const ExperimentConfig& config, std::size_t threads = 1);

/// True when the strategy collapses to uniform pair sampling.
bool is_uniform_strategy(const ExperimentConfig& config);

}  // namespace cdpo
