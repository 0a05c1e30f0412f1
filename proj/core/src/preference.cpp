#include "cdpo/preference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace cdpo {

double difficulty(const PreferencePair& pair, DifficultyMeasure measure) {
  return measure == DifficultyMeasure::rank ? static_cast<double>(pair.rank_diff) : pair.score_diff;
}

std::size_t CurriculumBatches::total_pairs() const {
  std::size_t n = 0;
  for (const auto& b : batches) n += b.size();
  return n;
}

RankedPool rank_pool(std::span<const Example> samples, const RewardFn& reward) {
  require(samples.size() >= 2, "rank_pool: need at least two samples");
  RankedPool pool;
  pool.condition = samples.front().condition;
  pool.samples.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].condition != pool.condition) {
      throw std::invalid_argument("rank_pool: samples mix several conditions");
    }
    const double score = reward(samples[i].x0, samples[i].condition);
    if (!std::isfinite(score)) throw std::domain_error("rank_pool: reward returned a non-finite score");
    pool.samples.push_back({i, samples[i].x0, score});
  }
  std::stable_sort(pool.samples.begin(), pool.samples.end(),
                   [](const ScoredSample& a, const ScoredSample& b) { return a.score > b.score; });
  return pool;
}

std::vector<PreferencePair> build_pairs(const RankedPool& pool, double tau) {
  require(tau >= 0.0, "build_pairs: tau must be non-negative");
  std::vector<PreferencePair> pairs;
  const auto& s = pool.samples;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = i + 1; j < s.size(); ++j) {
      const double diff = s[i].score - s[j].score;
      // Strict reward order; tied samples never form a pair.
      if (!(s[i].score > s[j].score) || !(diff > tau)) continue;
      PreferencePair p;
      p.condition = pool.condition;
      p.winner = s[i].x0;
      p.loser = s[j].x0;
      p.winner_index = s[i].index;
      p.loser_index = s[j].index;
      p.winner_rank = i;
      p.loser_rank = j;
      p.rank_diff = static_cast<int>(j - i);
      p.score_diff = diff;
      pairs.push_back(std::move(p));
    }
  }
  return pairs;
}

BatchLimits batch_limits(std::size_t M, std::size_t B) {
  require(B >= 1, "batch_limits: B must be >= 1");
  require(M >= 2, "batch_limits: M must be >= 2");
  BatchLimits lim;
  lim.lower.resize(B);
  lim.upper.resize(B);
  const double span = static_cast<double>(M - 1);
  const double b = static_cast<double>(B);
  for (std::size_t k = 0; k < B; ++k) {
    lim.lower[k] = span * static_cast<double>(B - k - 1) / b;
    lim.upper[k] = span * static_cast<double>(B - k) / b;
  }
  return lim;
}

BatchLimits score_quantile_limits(std::span<const PreferencePair> pairs, std::size_t B) {
  require(!pairs.empty(), "score_quantile_limits: no pairs");
  require(B >= 1, "score_quantile_limits: B must be >= 1");
  std::vector<double> d;
  d.reserve(pairs.size());
  for (const auto& p : pairs) d.push_back(p.score_diff);
  std::sort(d.begin(), d.end());
  const std::size_t n = d.size();
  const double below_min = std::nextafter(d.front(), -std::numeric_limits<double>::infinity());

  BatchLimits lim;
  lim.lower.resize(B);
  lim.upper.resize(B);
  for (std::size_t k = 0; k < B; ++k) {
    const std::size_t count_below = n * (B - k - 1) / B;
    lim.lower[k] = count_below == 0 ? below_min : d[count_below - 1];
    lim.upper[k] = k == 0 ? d.back() : lim.lower[k - 1];
  }
  return lim;
}

CurriculumBatches assign_batches(std::span<const PreferencePair> pairs, const BatchLimits& limits,
                                 DifficultyMeasure measure) {
  require(limits.B() >= 1 && limits.upper.size() == limits.B(), "assign_batches: malformed limits");
  CurriculumBatches out;
  out.measure = measure;
  out.limits = limits;
  out.batches.resize(limits.B());
  for (const auto& p : pairs) {
    const double d = difficulty(p, measure);
    bool placed = false;
    for (std::size_t k = 0; k < limits.B(); ++k) {
      if (limits.lower[k] < d && d <= limits.upper[k]) {
        out.batches[k].push_back(p);
        placed = true;
        break;
      }
    }
    if (!placed) ++out.dropped;
  }
  return out;
}

std::vector<int> schedule_iterations(std::size_t B, int K, int total) {
  require(B >= 1, "schedule_iterations: B must be >= 1");
  require(K >= 0, "schedule_iterations: K must be non-negative");
  const long long head = static_cast<long long>(B - 1) * K;
  if (static_cast<long long>(total) <= head) {
    throw std::invalid_argument("schedule_iterations: total must exceed (B-1)*K");
  }
  std::vector<int> H(B, K);
  H.back() = static_cast<int>(total - head);
  return H;
}

// ---------------------------------------------------------------------------

CurriculumSampler::CurriculumSampler(const CurriculumPlan& plan, Rng& rng)
    : conditions_(&plan.per_condition), iters_(plan.iters), rng_(&rng) {
  init();
}

CurriculumSampler::CurriculumSampler(const CurriculumBatches& batches, Rng& rng)
    : owned_{batches}, iters_(batches.iters), rng_(&rng) {
  conditions_ = &owned_;
  init();
}

void CurriculumSampler::init() {
  const std::size_t B = iters_.size();
  require(B >= 1, "CurriculumSampler: empty iteration schedule");
  require(!conditions_->empty(), "CurriculumSampler: no conditions");
  for (const auto& c : *conditions_) {
    require(c.B() == B, "CurriculumSampler: batch count does not match the iteration schedule");
  }
  effective_.assign(B, 0);
  int carry = 0;
  bool any = false;
  for (std::size_t k = 0; k < B; ++k) {
    for (const auto& c : *conditions_) any = any || !c.batches[k].empty();
    if (any) {
      effective_[k] = iters_[k] + carry;
      carry = 0;
    } else {
      carry += iters_[k];
    }
  }
  if (!any) throw std::invalid_argument("CurriculumSampler: all batches are empty");
  enter_phase(0);
}

void CurriculumSampler::enter_phase(std::size_t k) {
  phase_ = k;
  remaining_ = effective_[k];
  available_.clear();
  for (std::size_t slot = 0; slot < conditions_->size(); ++slot) {
    const auto& c = (*conditions_)[slot];
    for (std::size_t j = 0; j <= k; ++j) {
      if (!c.batches[j].empty()) {
        available_.push_back(slot);
        break;
      }
    }
  }
}

std::size_t CurriculumSampler::total_iterations() const {
  return static_cast<std::size_t>(std::accumulate(effective_.begin(), effective_.end(), 0LL));
}

std::optional<CurriculumDraw> CurriculumSampler::next() {
  auto batch = next_batch(1);
  if (!batch) return std::nullopt;
  return batch->front();
}

std::optional<std::vector<CurriculumDraw>> CurriculumSampler::next_batch(std::size_t count) {
  require(count >= 1, "CurriculumSampler: count must be >= 1");
  while (remaining_ == 0) {
    if (phase_ + 1 >= effective_.size()) return std::nullopt;
    enter_phase(phase_ + 1);
  }
  --remaining_;
  std::vector<CurriculumDraw> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(draw());
  return out;
}

CurriculumDraw CurriculumSampler::draw() {
  const auto pick = static_cast<std::size_t>(rng_->uniform_int(0, static_cast<std::int64_t>(available_.size()) - 1));
  const std::size_t slot = available_[pick];
  const auto& batches = (*conditions_)[slot].batches;
  std::size_t count = 0;
  for (std::size_t j = 0; j <= phase_; ++j) count += batches[j].size();
  auto r = static_cast<std::size_t>(rng_->uniform_int(0, static_cast<std::int64_t>(count) - 1));
  for (std::size_t j = 0; j <= phase_; ++j) {
    if (r < batches[j].size()) return CurriculumDraw{&batches[j][r], phase_, slot};
    r -= batches[j].size();
  }
  throw std::logic_error("CurriculumSampler: draw out of range");
}

bool CurriculumSampler::in_accumulated(const CurriculumDraw& draw) const {
  if (draw.condition_slot >= conditions_->size()) return false;
  const auto& batches = (*conditions_)[draw.condition_slot].batches;
  for (std::size_t j = 0; j <= draw.phase && j < batches.size(); ++j) {
    const auto& b = batches[j];
    if (!b.empty() && draw.pair >= b.data() && draw.pair < b.data() + b.size()) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------

double bt_prob(double r_w, double r_l) { return sigmoid(r_w - r_l); }

RewardNet::RewardNet(std::size_t dim, std::vector<std::size_t> hidden, std::size_t n_conditions,
                     std::size_t cond_embed) {
  MlpSpec spec;
  spec.dim = dim;
  spec.out_dim = 1;
  spec.hidden = std::move(hidden);
  spec.time_embed = 0;
  spec.cond_embed = cond_embed;
  spec.n_conditions = n_conditions;
  mlp_ = Mlp(spec);
}

double RewardNet::score(std::span<const double> x, Condition c, MlpCache* cache) const {
  return mlp_.forward(x, 0.0, c, cache)[0];
}

RewardFn RewardNet::as_reward_fn() const {
  return {"reward_net", [net = *this](std::span<const double> x, Condition c) { return net.score(x, c); }};
}

double loss_bt(const RewardNet& net, std::span<const PreferencePair> pairs, std::span<double> grad) {
  require(!pairs.empty(), "loss_bt: no pairs");
  const double inv_n = 1.0 / static_cast<double>(pairs.size());
  double total = 0.0;
  MlpCache cw, cl;
  for (const auto& p : pairs) {
    const bool want_grad = !grad.empty();
    const double rw = net.score(p.winner, p.condition, want_grad ? &cw : nullptr);
    const double rl = net.score(p.loser, p.condition, want_grad ? &cl : nullptr);
    const double z = rw - rl;
    total += neg_log_sigmoid(z);
    if (want_grad) {
      const double g = -sigmoid(-z) * inv_n;
      const double dw[1] = {g};
      const double dl[1] = {-g};
      net.mlp().backward(cw, dw, grad);
      net.mlp().backward(cl, dl, grad);
    }
  }
  return total * inv_n;
}

}  // namespace cdpo
