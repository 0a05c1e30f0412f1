#pragma once

#include <cstddef>
#include <vector>

#include "cdpo/common.hpp"

namespace cdpo {

/// Discrete variance-preserving noise schedule with linear beta.
///
/// Steps are 1-based: `alpha(t)` for t in [1, T]. A virtual node at t = 0
/// (alpha = 1, sigma = 0) closes the interval used by the continuous-time
/// interpolants, which are piecewise-linear in log(alpha) and sigma^2.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  int T() const { return static_cast<int>(alphas_.size()); }
  double beta_min() const { return beta_min_; }
  double beta_max() const { return beta_max_; }

  /// Grid value at integer step t (0 <= t <= T; t = 0 is the clean endpoint).
  double alpha(int t) const;
  double sigma(int t) const;

  /// Continuous interpolants on [0, T]. Exact grid values at integer t.
  double alpha_at(double t) const;
  double sigma_at(double t) const;

  /// Transition coefficients of q(x_t | x_{t-1}).
  double alpha_transition(int t) const;
  double sigma2_transition(int t) const;

  /// True when alpha_1 >= 0.99 and sigma_T >= 0.99.
  bool reaches_noise() const;

  /// Interpolation nodes, index 0 being the clean endpoint.
  double log_alpha_node(int i) const { return log_alpha_.at(static_cast<std::size_t>(i)); }
  double sigma2_node(int i) const { return sigma2_.at(static_cast<std::size_t>(i)); }

  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& sigmas() const { return sigmas_; }

 private:
  friend NoiseSchedule build_vp_schedule(int T, double beta_min, double beta_max);

  // Index 0 holds the t = 0 node; index t holds step t.
  std::vector<double> log_alpha_;
  std::vector<double> sigma2_;
  std::vector<double> alphas_;
  std::vector<double> sigmas_;
  double beta_min_ = 0.0;
  double beta_max_ = 0.0;
};

struct SdeCoefficients {
  double f = 0.0;
  double g_sq = 0.0;
};

/// Grid of times delta = t_1 < ... < t_N = T used for consistency distillation.
struct TimeGrid {
  std::vector<double> times;
  double delta = 1.0;

  std::size_t N() const { return times.size(); }
  /// 1-based access to match the discretization index n.
  double at(std::size_t n) const { return times.at(n - 1); }
};

NoiseSchedule build_vp_schedule(int T, double beta_min, double beta_max);

/// Drift f(t) = d log alpha / dt and squared diffusion
/// g^2(t) = d sigma^2/dt - 2 f(t) sigma^2(t) of the forward SDE.
/// At grid nodes the derivative is the symmetric (two-sided average) slope.
SdeCoefficients sde_coeffs(const NoiseSchedule& schedule, double t);

/// Uniformly spaced grid on [delta, T] with N points.
TimeGrid discretize(const NoiseSchedule& schedule, std::size_t N, double delta);

}  // namespace cdpo
