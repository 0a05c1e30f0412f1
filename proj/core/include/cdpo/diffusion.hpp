#pragma once

#include <span>
#include <vector>

#include "cdpo/common.hpp"
#include "cdpo/nets.hpp"
#include "cdpo/schedule.hpp"

namespace cdpo {

/// A clean training sample and its condition.
struct Example {
  Vec x0;
  Condition condition = 0;
};

/// x_t = alpha_t x0 + sigma_t eps together with the pieces that produced it.
struct NoisedSample {
  Vec x_t;
  double t = 0.0;
  Vec eps;
  Vec x0;
  Condition condition = 0;
};

Vec forward_noise(double alpha, double sigma, std::span<const double> x0, std::span<const double> eps);
/// Forward process at (possibly fractional) time t in [0, T].
Vec forward_noise(const NoiseSchedule& schedule, std::span<const double> x0, double t,
                  std::span<const double> eps);
NoisedSample make_noised(const NoiseSchedule& schedule, const Example& example, double t, Vec eps);

/// Timestep and injected noise for one term of the denoising objective.
struct SimpleDraw {
  int t = 1;
  Vec eps;
};

/// t ~ U{1..T}, eps ~ N(0, I) for each item.
std::vector<SimpleDraw> draw_simple_noise(std::size_t count, std::size_t dim, const NoiseSchedule& schedule,
                                          Rng& rng);

/// Mean over the batch of ||eps - eps_hat(x_t, t, c)||^2 for fixed draws.
double loss_simple(const NoisePredictor& predictor, std::span<const Example> batch,
                   std::span<const SimpleDraw> draws, const NoiseSchedule& schedule);
/// Same, accumulating d loss / d params into `grad` when non-empty.
double loss_simple(const DenoiserNet& net, std::span<const Example> batch, std::span<const SimpleDraw> draws,
                   const NoiseSchedule& schedule, std::span<double> grad);
/// Draws its own noise from `rng`.
double loss_simple(const DenoiserNet& net, std::span<const Example> batch, const NoiseSchedule& schedule,
                   Rng& rng, std::span<double> grad = {});

/// Coefficients of one ancestral step t -> t - 1.
struct ReverseCoeffs {
  double alpha_ts = 1.0;  ///< alpha_{t|t-1} = alpha_t / alpha_{t-1}
  double sigma_t = 1.0;
  double sigma_prev = 0.0;

  double sigma2_ts() const;
  double variance() const;
  static ReverseCoeffs at(const NoiseSchedule& schedule, int t);
};

/// mu = (x_t - eps_hat * sigma^2_{t|t-1} / sigma_t) / alpha_{t|t-1}
Vec reverse_mean(std::span<const double> x_t, std::span<const double> eps_hat, const ReverseCoeffs& k);

/// One stochastic reverse step x_t -> x_{t-1}. At t = 1 the posterior mean is
/// returned without noise. `zero_variance` forces the mean at any t.
Vec reverse_step(const NoisePredictor& net, std::span<const double> x_t, int t, Condition c,
                 const NoiseSchedule& schedule, Rng& rng, bool zero_variance = false);

/// Deterministic DDIM update from (alpha_src, sigma_src) to (alpha_dst, sigma_dst)
/// given a noise estimate.
Vec ddim_update(std::span<const double> x_src, std::span<const double> eps_hat, double alpha_src,
                double sigma_src, double alpha_dst, double sigma_dst);

/// One PF-ODE solver step t_src -> t_dst < t_src using the teacher's noise estimate.
Vec ddim_solver_step(const NoisePredictor& teacher, std::span<const double> x_src, double t_src, double t_dst,
                     Condition c, const NoiseSchedule& schedule);

/// Descending integer timesteps from T to 1 used by `sample_ddim`.
std::vector<int> ddim_timesteps(int T, int steps);

/// x_T ~ N(0, I), then DDIM steps along `ddim_timesteps`; returns the final
/// clean estimate.
Vec sample_ddim(const NoisePredictor& net, Condition c, const NoiseSchedule& schedule, int steps, Rng& rng,
                std::size_t dim);

}  // namespace cdpo
