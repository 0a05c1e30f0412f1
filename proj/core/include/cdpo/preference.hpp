#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdpo/common.hpp"
#include "cdpo/diffusion.hpp"
#include "cdpo/nets.hpp"

namespace cdpo {

struct RewardFn {
  std::string id;
  std::function<double(std::span<const double> x0, Condition c)> eval;

  double operator()(std::span<const double> x0, Condition c) const { return eval(x0, c); }
};

struct ScoredSample {
  std::size_t index = 0;  ///< position in the unranked input
  Vec x0;
  double score = 0.0;
};

/// Samples of one condition sorted by descending reward, ties in input order.
struct RankedPool {
  Condition condition = 0;
  std::vector<ScoredSample> samples;

  std::size_t M() const { return samples.size(); }
};

struct PreferencePair {
  Condition condition = 0;
  Vec winner;
  Vec loser;
  std::size_t winner_index = 0;  ///< original sample indices
  std::size_t loser_index = 0;
  std::size_t winner_rank = 0;  ///< 0-based positions in the ranking
  std::size_t loser_rank = 0;
  int rank_diff = 0;
  double score_diff = 0.0;
};

enum class DifficultyMeasure { rank, score };

double difficulty(const PreferencePair& pair, DifficultyMeasure measure);

/// Half-open difficulty intervals (lower[k], upper[k]] for k = 0..B-1.
/// Interval 0 holds the largest differences (easiest pairs).
struct BatchLimits {
  std::vector<double> lower;
  std::vector<double> upper;

  std::size_t B() const { return lower.size(); }
};

struct CurriculumBatches {
  DifficultyMeasure measure = DifficultyMeasure::rank;
  BatchLimits limits;
  std::vector<std::vector<PreferencePair>> batches;
  std::vector<int> iters;
  std::size_t dropped = 0;  ///< pairs outside (lower[B-1], upper[0]]

  std::size_t B() const { return batches.size(); }
  std::size_t total_pairs() const;
};

RankedPool rank_pool(std::span<const Example> samples, const RewardFn& reward);

/// Ordered pairs i < j of the ranking with score_i - score_j > max(tau, 0).
std::vector<PreferencePair> build_pairs(const RankedPool& pool, double tau);

/// lower_k = (M-1)(B-k)/B, upper_k = (M-1)(B-k+1)/B (1-based k).
BatchLimits batch_limits(std::size_t M, std::size_t B);

/// Equal-count score-difference limits: the top batch ends at the largest
/// difference and the bottom batch starts just below the smallest one.
BatchLimits score_quantile_limits(std::span<const PreferencePair> pairs, std::size_t B);

CurriculumBatches assign_batches(std::span<const PreferencePair> pairs, const BatchLimits& limits,
                                 DifficultyMeasure measure);

/// H_k = K for k < B and H_B = total - (B-1) K.
std::vector<int> schedule_iterations(std::size_t B, int K, int total);

/// Per-condition curricula sharing one iteration schedule.
struct CurriculumPlan {
  std::vector<CurriculumBatches> per_condition;
  std::vector<int> iters;

  std::size_t B() const { return iters.size(); }
};

/// One sampled training pair with the phase (0-based) it was drawn in.
struct CurriculumDraw {
  const PreferencePair* pair = nullptr;
  std::size_t phase = 0;
  std::size_t condition_slot = 0;
};

/// Streams pairs phase by phase. In phase k a condition is drawn uniformly
/// among those with a non-empty accumulated set S_1..S_k, then a pair uniformly
/// (with replacement) from that set. Phases whose accumulated set is empty for
/// every condition pass their iteration budget on to the next phase.
class CurriculumSampler {
 public:
  CurriculumSampler(const CurriculumPlan& plan, Rng& rng);
  CurriculumSampler(const CurriculumBatches& batches, Rng& rng);
  CurriculumSampler(const CurriculumSampler&) = delete;
  CurriculumSampler& operator=(const CurriculumSampler&) = delete;

  std::optional<CurriculumDraw> next();
  /// Advances one iteration and draws `count` pairs from the current phase.
  std::optional<std::vector<CurriculumDraw>> next_batch(std::size_t count);

  /// Iterations each phase will actually run, after carrying empty phases.
  const std::vector<int>& effective_iters() const { return effective_; }
  std::size_t total_iterations() const;

  /// True when `pair` belongs to the accumulated set of `phase`.
  bool in_accumulated(const CurriculumDraw& draw) const;

 private:
  void init();
  void enter_phase(std::size_t k);
  CurriculumDraw draw();

  std::vector<CurriculumBatches> owned_;
  const std::vector<CurriculumBatches>* conditions_ = nullptr;
  std::vector<int> iters_;
  std::vector<int> effective_;
  Rng* rng_;
  std::size_t phase_ = 0;
  int remaining_ = 0;
  std::vector<std::size_t> available_;  // condition slots with non-empty accumulation
};

/// sigma(r_w - r_l)
double bt_prob(double r_w, double r_l);

/// Scalar reward model r(x, c).
class RewardNet {
 public:
  RewardNet() = default;
  RewardNet(std::size_t dim, std::vector<std::size_t> hidden, std::size_t n_conditions, std::size_t cond_embed);

  Mlp& mlp() { return mlp_; }
  const Mlp& mlp() const { return mlp_; }
  ParamVector& params() { return mlp_.params(); }
  const ParamVector& params() const { return mlp_.params(); }

  double score(std::span<const double> x, Condition c, MlpCache* cache = nullptr) const;
  RewardFn as_reward_fn() const;

 private:
  Mlp mlp_;
};

/// Mean of -log sigma(r(x_w, c) - r(x_l, c)); gradient accumulated into `grad`.
double loss_bt(const RewardNet& net, std::span<const PreferencePair> pairs, std::span<double> grad = {});

}  // namespace cdpo
