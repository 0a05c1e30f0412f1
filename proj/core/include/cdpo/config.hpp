#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cdpo/data.hpp"
#include "cdpo/dpo.hpp"
#include "cdpo/preference.hpp"
#include "cdpo/reward.hpp"

namespace cdpo {

struct ScheduleConfig {
  int T = 64;
  double beta_min = 1.5625e-3;
  double beta_max = 0.3125;
  std::size_t N = 32;
  double delta = 1.0;
  double sigma_data = 0.5;
  bool operator==(const ScheduleConfig&) const = default;
};

struct NetConfig {
  std::vector<std::size_t> hidden{64, 64};
  std::size_t time_emb = 16;
  std::size_t cond_emb = 8;
  std::size_t lora_rank = 0;  ///< 0 trains all weights
  double lora_alpha = 32.0;
  bool operator==(const NetConfig&) const = default;
};

struct CurriculumConfig {
  std::size_t B = 5;
  int K = 400;
  int total = 2000;
  double tau = 0.0;  ///< fraction of each condition's score range
  std::string measure = "rank";
  std::size_t M = 64;
  bool operator==(const CurriculumConfig&) const = default;
};

struct DpoSection {
  std::string variant = "diffusion";
  std::optional<double> beta;  ///< unset: variant default
  bool shared_eps = false;
  std::string target = "reference";
  bool operator==(const DpoSection&) const = default;
};

struct TrainConfig {
  std::optional<double> lr;  ///< unset: variant default
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::optional<std::size_t> batch_pairs;  ///< unset: variant default
  std::size_t grad_accum = 1;
  int pretrain_iters = 5000;
  double pretrain_lr = 1e-3;
  int distill_iters = 5000;
  double distill_lr = 1e-3;
  std::size_t batch_size = 64;
  double ema_decay = 0.95;
  bool operator==(const TrainConfig&) const = default;
};

struct SampleConfig {
  int ddim_steps = 32;
  int cm_steps = 4;
  std::size_t eval_samples = 256;  ///< per condition
  bool operator==(const SampleConfig&) const = default;
};

struct MetricsConfig {
  bool wallclock = false;
  int eval_every = 0;
  bool operator==(const MetricsConfig&) const = default;
};

struct AblateConfig {
  std::vector<std::size_t> B{3, 5, 7};
  std::vector<std::size_t> M{5, 16, 64};
  std::vector<double> beta;
  std::vector<int> K;
  bool operator==(const AblateConfig&) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string strategy = "curriculum-dpo";
  std::string out_dir = "runs/default";
  ScheduleConfig schedule;
  NetConfig net;
  DataConfig data;
  RewardConfig reward;
  CurriculumConfig curriculum;
  DpoSection dpo;
  TrainConfig train;
  SampleConfig sample;
  MetricsConfig metrics;
  AblateConfig ablate;

  bool operator==(const ExperimentConfig&) const;

  DpoVariant variant() const;
  DifficultyMeasure measure() const;
  TargetMode target_mode() const;
  double beta() const;
  double lr() const;
  std::size_t batch_pairs() const;
};

using Override = std::pair<std::string, std::string>;

/// Parses a JSON document over the defaults. Missing keys keep their default;
/// unknown keys, wrong types and out-of-range values raise ConfigError.
ExperimentConfig parse_config(const std::string& text, const std::vector<Override>& overrides = {});
ExperimentConfig load_config(const std::optional<std::string>& path, const std::vector<Override>& overrides = {});
std::string to_json_string(const ExperimentConfig& config);

void validate(const ExperimentConfig& config);

}  // namespace cdpo
