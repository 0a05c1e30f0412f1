#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "cdpo/common.hpp"
#include "cdpo/consistency.hpp"
#include "cdpo/nets.hpp"
#include "cdpo/schedule.hpp"

namespace cdpo {

enum class DpoVariant { discrete, diffusion, consistency };

struct DpoConfig {
  double beta = 200.0;
  DpoVariant variant = DpoVariant::consistency;

  /// 5000 for the diffusion variant, 200 for the consistency variant.
  static double default_beta(DpoVariant variant);
};

/// Per-condition categorical distribution over a finite outcome set,
/// parameterised by logits stored row-major as [condition][outcome].
class DiscretePolicy {
 public:
  DiscretePolicy() = default;
  DiscretePolicy(std::size_t n_conditions, std::size_t n_outcomes);
  /// Logits are log(probs); zero probabilities become -inf logits.
  static DiscretePolicy from_probs(const std::vector<Vec>& probs);

  std::size_t n_conditions() const { return n_conditions_; }
  std::size_t n_outcomes() const { return n_outcomes_; }

  Vec& logits() { return logits_; }
  const Vec& logits() const { return logits_; }

  Vec probs(Condition c) const;
  double prob(Condition c, std::size_t outcome) const;
  double log_prob(Condition c, std::size_t outcome) const;
  /// log Z of the logits of one condition.
  double log_normalizer(Condition c) const;

 private:
  std::size_t n_conditions_ = 0;
  std::size_t n_outcomes_ = 0;
  Vec logits_;
};

struct DiscretePair {
  Condition condition = 0;
  std::size_t winner = 0;
  std::size_t loser = 0;
};

using DiscreteReward = std::function<double(std::size_t outcome, Condition c)>;

/// -log sigma(beta (log p(w)/p_ref(w) - log p(l)/p_ref(l))). Gradient w.r.t. the
/// policy logits is accumulated into `grad` when non-empty.
double loss_dpo_discrete(const DiscretePolicy& policy, const DiscretePolicy& ref, const DiscretePair& pair,
                         double beta, std::span<double> grad = {});

/// beta * log(p(x0|c) / p_ref(x0|c))
double implied_reward(const DiscretePolicy& policy, const DiscretePolicy& ref, std::size_t outcome, Condition c,
                      double beta);

/// p*(x0|c) proportional to p_ref(x0|c) exp(r(x0, c) / beta).
DiscretePolicy optimal_policy_oracle(const DiscretePolicy& ref, const DiscreteReward& reward, double beta);

double total_variation(std::span<const double> p, std::span<const double> q);

// --- Diffusion-DPO ---------------------------------------------------------

/// -log sigma(-beta T (delta_w - delta_l)) from precomputed error differences.
double diffusion_dpo_from_deltas(double delta_w, double delta_l, double beta, int T);

struct DiffusionDpoTerms {
  double delta_w = 0.0;  ///< ||eps_w - eps_theta||^2 - ||eps_w - eps_ref||^2 on the winner
  double delta_l = 0.0;
  double loss = 0.0;
};

struct DiffusionDpoInput {
  std::span<const double> winner;
  std::span<const double> loser;
  Condition condition = 0;
  int t = 1;
  std::span<const double> eps_w;
  std::span<const double> eps_l;
};

double loss_diffusion_dpo(const DenoiserNet& net, const NoisePredictor& ref, const DiffusionDpoInput& in,
                          double beta, const NoiseSchedule& schedule, std::span<double> grad = {},
                          DiffusionDpoTerms* terms = nullptr);

// --- Consistency-DPO -------------------------------------------------------

/// Which network produces the target f(x_hat_{t_n}) in the first distance of d*.
enum class TargetMode {
  reference,  ///< frozen pretrained model
  naive,      ///< the model being fine-tuned (breaks self-consistency)
};

/// d(f_student(x_next), f_ref(x_hat)) - d(f_ref(x_next), f_ref(x_hat)), squared Euclidean d.
double d_star(const ConsistencyFunction& student, const ConsistencyFunction& ref, std::span<const double> x_next,
              std::span<const double> x_hat, double t_next, double t_cur, Condition c);

/// -log sigma(-beta (d_w - d_l))
double consistency_dpo_from_d(double d_w, double d_l, double beta);

struct ConsistencyDpoTerms {
  double d_w = 0.0;
  double d_l = 0.0;
  double loss = 0.0;
};

struct ConsistencyDpoInput {
  std::span<const double> winner;
  std::span<const double> loser;
  Condition condition = 0;
  std::size_t n = 1;  ///< 1-based grid interval [t_n, t_{n+1}]
  std::span<const double> eps;  ///< shared by both branches
};

double loss_consistency_dpo(const ConsistencyNet& student, const ConsistencyFunction& ref,
                            const NoisePredictor& teacher, const ConsistencyDpoInput& in, double beta,
                            const NoiseSchedule& schedule, const TimeGrid& grid, std::span<double> grad = {},
                            ConsistencyDpoTerms* terms = nullptr, TargetMode mode = TargetMode::reference);

}  // namespace cdpo
