#pragma once

#include <span>
#include <vector>

#include "cdpo/common.hpp"
#include "cdpo/diffusion.hpp"
#include "cdpo/nets.hpp"
#include "cdpo/schedule.hpp"

namespace cdpo {

/// Maps a point on a PF-ODE trajectory to the trajectory origin.
class ConsistencyFunction {
 public:
  virtual ~ConsistencyFunction() = default;
  virtual Vec apply(std::span<const double> x, double t, Condition c) const = 0;
};

/// c_skip(t) = s^2 / ((t - delta)^2 + s^2), c_out(t) = (t - delta) s / sqrt((t - delta)^2 + s^2)
struct BoundaryScaling {
  double delta = 1.0;
  double sigma_data = 0.5;
  /// Test hook: c_out = 0 everywhere, making the model the identity map.
  bool skip_only = false;

  double c_skip(double t) const;
  double c_out(double t) const;
};

/// f_phi(x, t, c) = c_skip(t) x + c_out(t) F_phi(x, t, c), exact identity at t = delta.
class ConsistencyNet : public ConsistencyFunction {
 public:
  ConsistencyNet() = default;
  ConsistencyNet(Mlp raw, BoundaryScaling boundary);

  /// Student initialised from a teacher denoiser's weights.
  static ConsistencyNet from_teacher(const DenoiserNet& teacher, BoundaryScaling boundary);

  const BoundaryScaling& boundary() const { return boundary_; }
  BoundaryScaling& boundary() { return boundary_; }
  double t_max() const { return raw_.spec().time_horizon; }
  std::size_t dim() const { return raw_.spec().dim; }
  Mlp& raw() { return raw_; }
  const Mlp& raw() const { return raw_; }
  ParamVector& params() { return raw_.params(); }
  const ParamVector& params() const { return raw_.params(); }

  Vec forward(std::span<const double> x, double t, Condition c, MlpCache* cache = nullptr) const;
  /// Accumulates d<f(x, t, c), dout>/d phi. `cache` must come from forward at the same t.
  void backward(const MlpCache& cache, double t, std::span<const double> dout, std::span<double> grad) const;

  Vec apply(std::span<const double> x, double t, Condition c) const override { return forward(x, t, c); }

 private:
  Mlp raw_;
  BoundaryScaling boundary_;
};

/// Discretization index n (1-based, pairs t_n < t_{n+1}) and shared noise.
struct CdDraw {
  std::size_t n = 1;
  Vec eps;
};

/// Adjacent trajectory points: x_{t_{n+1}} from the forward process and
/// x_hat_{t_n} one teacher DDIM step below it.
struct TrajectoryPair {
  Vec x_next;
  Vec x_hat;
  double t_next = 0.0;
  double t_cur = 0.0;
};

TrajectoryPair trajectory_pair(const NoisePredictor& teacher, std::span<const double> x0, Condition c,
                               std::size_t n, std::span<const double> eps, const TimeGrid& grid,
                               const NoiseSchedule& schedule);

/// n ~ U{1..N-1}, eps ~ N(0, I).
std::vector<CdDraw> draw_cd_noise(std::size_t count, std::size_t dim, const TimeGrid& grid, Rng& rng);

/// Mean over the batch of ||f_student(x_{t_{n+1}}) - f_target(x_hat_{t_n})||^2 where
/// x_hat is one teacher DDIM step from x_{t_{n+1}}.
double loss_cd(const ConsistencyFunction& student, const ConsistencyFunction& target,
               const NoisePredictor& teacher, std::span<const Example> batch, std::span<const CdDraw> draws,
               const TimeGrid& grid, const NoiseSchedule& schedule);
double loss_cd(const ConsistencyNet& student, const ConsistencyFunction& target, const NoisePredictor& teacher,
               std::span<const Example> batch, std::span<const CdDraw> draws, const TimeGrid& grid,
               const NoiseSchedule& schedule, std::span<double> grad);
double loss_cd(const ConsistencyNet& student, const ConsistencyFunction& target, const NoisePredictor& teacher,
               std::span<const Example> batch, const TimeGrid& grid, const NoiseSchedule& schedule, Rng& rng,
               std::span<double> grad = {});

/// Descending sampling times T = tau_0 > ... > tau_{n-1} > delta.
std::vector<double> multistep_times(double T, double delta, int n_steps);

/// x ~ sigma_T N(0, I) at T; alternate x0_hat = f(x, tau_k) with re-noising to tau_{k+1}.
Vec multistep_sample(const ConsistencyFunction& net, Condition c, const NoiseSchedule& schedule, double delta,
                     int n_steps, Rng& rng, std::size_t dim);

/// Mean over data and every grid interval of ||f(x_{t_{n+1}}) - f(x_hat_{t_n})||^2.
double self_consistency_gap(const ConsistencyFunction& net, const NoisePredictor& teacher,
                            std::span<const Example> data, const TimeGrid& grid, const NoiseSchedule& schedule,
                            Rng& rng);

}  // namespace cdpo
