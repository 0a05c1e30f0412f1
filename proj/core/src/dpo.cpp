#include "cdpo/dpo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "cdpo/diffusion.hpp"

namespace cdpo {

double DpoConfig::default_beta(DpoVariant variant) {
  switch (variant) {
    case DpoVariant::diffusion:
      return 5000.0;
    case DpoVariant::consistency:
      return 200.0;
    case DpoVariant::discrete:
      return 1.0;
  }
  return 1.0;
}

DiscretePolicy::DiscretePolicy(std::size_t n_conditions, std::size_t n_outcomes)
    : n_conditions_(n_conditions), n_outcomes_(n_outcomes), logits_(n_conditions * n_outcomes, 0.0) {
  require(n_conditions >= 1 && n_outcomes >= 2, "DiscretePolicy: need >= 1 condition and >= 2 outcomes");
}

DiscretePolicy DiscretePolicy::from_probs(const std::vector<Vec>& probs) {
  require(!probs.empty(), "DiscretePolicy::from_probs: no conditions");
  DiscretePolicy p(probs.size(), probs.front().size());
  for (std::size_t c = 0; c < probs.size(); ++c) {
    require(probs[c].size() == p.n_outcomes_, "DiscretePolicy::from_probs: ragged table");
    for (std::size_t i = 0; i < p.n_outcomes_; ++i) {
      require(probs[c][i] >= 0.0, "DiscretePolicy::from_probs: negative probability");
      p.logits_[c * p.n_outcomes_ + i] =
          probs[c][i] > 0.0 ? std::log(probs[c][i]) : -std::numeric_limits<double>::infinity();
    }
  }
  return p;
}

double DiscretePolicy::log_normalizer(Condition c) const {
  require(c < n_conditions_, "DiscretePolicy: condition out of range");
  const auto row = std::span<const double>(logits_).subspan(c * n_outcomes_, n_outcomes_);
  const double m = *std::max_element(row.begin(), row.end());
  double s = 0.0;
  for (const double l : row) s += std::exp(l - m);
  return m + std::log(s);
}

double DiscretePolicy::log_prob(Condition c, std::size_t outcome) const {
  require(outcome < n_outcomes_, "DiscretePolicy: outcome out of range");
  return logits_[c * n_outcomes_ + outcome] - log_normalizer(c);
}

double DiscretePolicy::prob(Condition c, std::size_t outcome) const { return std::exp(log_prob(c, outcome)); }

Vec DiscretePolicy::probs(Condition c) const {
  const double lz = log_normalizer(c);
  Vec out(n_outcomes_);
  for (std::size_t i = 0; i < n_outcomes_; ++i) out[i] = std::exp(logits_[c * n_outcomes_ + i] - lz);
  return out;
}

namespace {

double ref_log_prob(const DiscretePolicy& ref, Condition c, std::size_t outcome) {
  const double lp = ref.log_prob(c, outcome);
  if (!std::isfinite(lp)) throw std::domain_error("DPO: reference assigns zero probability to an outcome");
  return lp;
}

}  // namespace

double loss_dpo_discrete(const DiscretePolicy& policy, const DiscretePolicy& ref, const DiscretePair& pair,
                         double beta, std::span<double> grad) {
  require(beta > 0.0, "loss_dpo_discrete: beta must be positive");
  require(policy.n_outcomes() == ref.n_outcomes() && policy.n_conditions() == ref.n_conditions(),
          "loss_dpo_discrete: policy and reference shapes differ");
  const Condition c = pair.condition;
  const double ratio_w = policy.log_prob(c, pair.winner) - ref_log_prob(ref, c, pair.winner);
  const double ratio_l = policy.log_prob(c, pair.loser) - ref_log_prob(ref, c, pair.loser);
  const double z = beta * (ratio_w - ratio_l);
  if (!grad.empty()) {
    require(grad.size() == policy.logits().size(), "loss_dpo_discrete: gradient buffer has wrong size");
    // d log p_i / d logit_j = [i == j] - p_j; the p_j terms cancel between winner and loser.
    const double g = -sigmoid(-z) * beta;
    grad[c * policy.n_outcomes() + pair.winner] += g;
    grad[c * policy.n_outcomes() + pair.loser] -= g;
  }
  return neg_log_sigmoid(z);
}

double implied_reward(const DiscretePolicy& policy, const DiscretePolicy& ref, std::size_t outcome, Condition c,
                      double beta) {
  return beta * (policy.log_prob(c, outcome) - ref_log_prob(ref, c, outcome));
}

DiscretePolicy optimal_policy_oracle(const DiscretePolicy& ref, const DiscreteReward& reward, double beta) {
  require(beta > 0.0, "optimal_policy_oracle: beta must be positive");
  DiscretePolicy out = ref;
  for (Condition c = 0; c < ref.n_conditions(); ++c) {
    for (std::size_t i = 0; i < ref.n_outcomes(); ++i) {
      const double r = reward(i, c);
      require(std::isfinite(r), "optimal_policy_oracle: non-finite reward");
      out.logits()[c * ref.n_outcomes() + i] = ref.log_prob(c, i) + r / beta;
    }
    const double lz = out.log_normalizer(c);
    for (std::size_t i = 0; i < ref.n_outcomes(); ++i) out.logits()[c * ref.n_outcomes() + i] -= lz;
  }
  return out;
}

double total_variation(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size(), "total_variation: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

// ---------------------------------------------------------------------------

double diffusion_dpo_from_deltas(double delta_w, double delta_l, double beta, int T) {
  return neg_log_sigmoid(-beta * static_cast<double>(T) * (delta_w - delta_l));
}

double loss_diffusion_dpo(const DenoiserNet& net, const NoisePredictor& ref, const DiffusionDpoInput& in,
                          double beta, const NoiseSchedule& schedule, std::span<double> grad,
                          DiffusionDpoTerms* terms) {
  require(beta > 0.0, "loss_diffusion_dpo: beta must be positive");
  if (in.t < 1 || in.t > schedule.T()) throw std::out_of_range("loss_diffusion_dpo: t outside [1, T]");
  const std::size_t D = net.dim();
  if (in.winner.size() != D || in.loser.size() != D || in.eps_w.size() != D || in.eps_l.size() != D) {
    throw std::invalid_argument("loss_diffusion_dpo: dimension mismatch");
  }

  const Vec xw = forward_noise(schedule, in.winner, in.t, in.eps_w);
  const Vec xl = forward_noise(schedule, in.loser, in.t, in.eps_l);
  MlpCache cw, cl;
  const bool want_grad = !grad.empty();
  const Vec pw = net.forward(xw, in.t, in.condition, want_grad ? &cw : nullptr);
  const Vec pl = net.forward(xl, in.t, in.condition, want_grad ? &cl : nullptr);
  const Vec rw = ref.predict_noise(xw, in.t, in.condition);
  const Vec rl = ref.predict_noise(xl, in.t, in.condition);

  const double delta_w = squared_distance(in.eps_w, pw) - squared_distance(in.eps_w, rw);
  const double delta_l = squared_distance(in.eps_l, pl) - squared_distance(in.eps_l, rl);
  const double scale = beta * static_cast<double>(schedule.T());
  const double u = scale * (delta_w - delta_l);
  const double loss = softplus(u);

  if (want_grad) {
    // dL/d delta_w = scale * sigma(u), dL/d delta_l = -scale * sigma(u)
    const double g = scale * sigmoid(u);
    Vec dw(D), dl(D);
    for (std::size_t k = 0; k < D; ++k) {
      dw[k] = g * 2.0 * (pw[k] - in.eps_w[k]);
      dl[k] = -g * 2.0 * (pl[k] - in.eps_l[k]);
    }
    net.mlp().backward(cw, dw, grad);
    net.mlp().backward(cl, dl, grad);
  }
  if (terms) *terms = {delta_w, delta_l, loss};
  return loss;
}

// ---------------------------------------------------------------------------

namespace {

void check_times(double t_next, double t_cur) {
  if (!(t_cur < t_next)) throw std::invalid_argument("d_star: need t_cur < t_next");
}

}  // namespace

double d_star(const ConsistencyFunction& student, const ConsistencyFunction& ref, std::span<const double> x_next,
              std::span<const double> x_hat, double t_next, double t_cur, Condition c) {
  check_times(t_next, t_cur);
  const Vec target = ref.apply(x_hat, t_cur, c);
  return squared_distance(student.apply(x_next, t_next, c), target) -
         squared_distance(ref.apply(x_next, t_next, c), target);
}

double consistency_dpo_from_d(double d_w, double d_l, double beta) {
  return neg_log_sigmoid(-beta * (d_w - d_l));
}

double loss_consistency_dpo(const ConsistencyNet& student, const ConsistencyFunction& ref,
                            const NoisePredictor& teacher, const ConsistencyDpoInput& in, double beta,
                            const NoiseSchedule& schedule, const TimeGrid& grid, std::span<double> grad,
                            ConsistencyDpoTerms* terms, TargetMode mode) {
  require(beta > 0.0, "loss_consistency_dpo: beta must be positive");
  if (in.n < 1 || in.n >= grid.N()) throw std::out_of_range("loss_consistency_dpo: n outside [1, N-1]");
  const std::size_t D = student.dim();
  if (in.winner.size() != D || in.loser.size() != D || in.eps.size() != D) {
    throw std::invalid_argument("loss_consistency_dpo: dimension mismatch");
  }
  const bool want_grad = !grad.empty();

  struct Branch {
    Vec out;     // f_phi(x_next)
    Vec target;  // target at x_hat
    double d = 0.0;
    MlpCache cache;
    double t_next = 0.0;
  };
  auto branch = [&](std::span<const double> x0) {
    const auto p = trajectory_pair(teacher, x0, in.condition, in.n, in.eps, grid, schedule);
    check_times(p.t_next, p.t_cur);
    Branch b;
    b.t_next = p.t_next;
    const Vec ref_target = ref.apply(p.x_hat, p.t_cur, in.condition);
    b.target = mode == TargetMode::reference ? ref_target : student.apply(p.x_hat, p.t_cur, in.condition);
    b.out = student.forward(p.x_next, p.t_next, in.condition, want_grad ? &b.cache : nullptr);
    b.d = squared_distance(b.out, b.target) -
          squared_distance(ref.apply(p.x_next, p.t_next, in.condition), ref_target);
    return b;
  };
  Branch w = branch(in.winner);
  Branch l = branch(in.loser);

  const double u = beta * (w.d - l.d);
  const double loss = softplus(u);
  if (want_grad) {
    // dL/d d_w = beta * sigma(beta (d_w - d_l)) = -dL/d d_l
    const double g = beta * sigmoid(u);
    Vec dw(D), dl(D);
    for (std::size_t k = 0; k < D; ++k) {
      dw[k] = g * 2.0 * (w.out[k] - w.target[k]);
      dl[k] = -g * 2.0 * (l.out[k] - l.target[k]);
    }
    student.backward(w.cache, w.t_next, dw, grad);
    student.backward(l.cache, l.t_next, dl, grad);
  }
  if (terms) *terms = {w.d, l.d, loss};
  return loss;
}

}  // namespace cdpo
