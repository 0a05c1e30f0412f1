#include "cdpo/consistency.hpp"

#include <cmath>
#include <stdexcept>

namespace cdpo {

double BoundaryScaling::c_skip(double t) const {
  if (skip_only) return 1.0;
  const double u = t - delta;
  const double s2 = sigma_data * sigma_data;
  return s2 / (u * u + s2);
}

double BoundaryScaling::c_out(double t) const {
  if (skip_only) return 0.0;
  const double u = t - delta;
  return u * sigma_data / std::sqrt(u * u + sigma_data * sigma_data);
}

ConsistencyNet::ConsistencyNet(Mlp raw, BoundaryScaling boundary) : raw_(std::move(raw)), boundary_(boundary) {
  require(raw_.spec().out_dim == raw_.spec().dim, "ConsistencyNet: output dimension must equal input dimension");
  require(boundary_.delta > 0.0 && boundary_.delta < raw_.spec().time_horizon,
          "ConsistencyNet: delta must lie in (0, T)");
  require(boundary_.sigma_data > 0.0, "ConsistencyNet: sigma_data must be positive");
}

ConsistencyNet ConsistencyNet::from_teacher(const DenoiserNet& teacher, BoundaryScaling boundary) {
  return ConsistencyNet(teacher.mlp(), boundary);
}

Vec ConsistencyNet::forward(std::span<const double> x, double t, Condition c, MlpCache* cache) const {
  if (!(t >= boundary_.delta && t <= t_max())) {
    throw std::out_of_range("ConsistencyNet: t outside [delta, T]");
  }
  if (x.size() != dim()) throw std::invalid_argument("ConsistencyNet: dimension mismatch");
  if (t == boundary_.delta) {
    if (cache) {
      // Keep backward() well defined; the raw output is weighted by c_out = 0.
      raw_.forward(x, t, c, cache);
    }
    return Vec(x.begin(), x.end());
  }
  const Vec F = raw_.forward(x, t, c, cache);
  const double skip = boundary_.c_skip(t);
  const double out = boundary_.c_out(t);
  Vec y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = skip * x[i] + out * F[i];
  return y;
}

void ConsistencyNet::backward(const MlpCache& cache, double t, std::span<const double> dout,
                              std::span<double> grad) const {
  const double out = boundary_.c_out(t);
  if (out == 0.0) return;
  Vec scaled(dout.begin(), dout.end());
  for (auto& v : scaled) v *= out;
  raw_.backward(cache, scaled, grad);
}

std::vector<CdDraw> draw_cd_noise(std::size_t count, std::size_t dim, const TimeGrid& grid, Rng& rng) {
  require(grid.N() >= 2, "draw_cd_noise: grid needs N >= 2");
  std::vector<CdDraw> draws(count);
  for (auto& d : draws) {
    d.n = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(grid.N()) - 1));
    d.eps = rng.normal_vec(dim);
  }
  return draws;
}

TrajectoryPair trajectory_pair(const NoisePredictor& teacher, std::span<const double> x0, Condition c,
                               std::size_t n, std::span<const double> eps, const TimeGrid& grid,
                               const NoiseSchedule& schedule) {
  require(n >= 1 && n < grid.N(), "trajectory_pair: n must lie in [1, N-1]");
  TrajectoryPair p;
  p.t_next = grid.at(n + 1);
  p.t_cur = grid.at(n);
  p.x_next = forward_noise(schedule, x0, p.t_next, eps);
  p.x_hat = ddim_solver_step(teacher, p.x_next, p.t_next, p.t_cur, c, schedule);
  return p;
}

namespace {

void check_batch(std::span<const Example> batch, std::size_t draws) {
  require(!batch.empty(), "loss_cd: empty batch");
  require(batch.size() == draws, "loss_cd: one draw per example required");
}

}  // namespace

double loss_cd(const ConsistencyFunction& student, const ConsistencyFunction& target,
               const NoisePredictor& teacher, std::span<const Example> batch, std::span<const CdDraw> draws,
               const TimeGrid& grid, const NoiseSchedule& schedule) {
  check_batch(batch, draws.size());
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto p = trajectory_pair(teacher, batch[i].x0, batch[i].condition, draws[i].n, draws[i].eps, grid, schedule);
    total += squared_distance(student.apply(p.x_next, p.t_next, batch[i].condition),
                              target.apply(p.x_hat, p.t_cur, batch[i].condition));
  }
  return total / static_cast<double>(batch.size());
}

double loss_cd(const ConsistencyNet& student, const ConsistencyFunction& target, const NoisePredictor& teacher,
               std::span<const Example> batch, std::span<const CdDraw> draws, const TimeGrid& grid,
               const NoiseSchedule& schedule, std::span<double> grad) {
  if (grad.empty()) {
    return loss_cd(static_cast<const ConsistencyFunction&>(student), target, teacher, batch, draws, grid, schedule);
  }
  check_batch(batch, draws.size());
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  MlpCache cache;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto p = trajectory_pair(teacher, batch[i].x0, batch[i].condition, draws[i].n, draws[i].eps, grid, schedule);
    const Vec tgt = target.apply(p.x_hat, p.t_cur, batch[i].condition);
    const Vec out = student.forward(p.x_next, p.t_next, batch[i].condition, &cache);
    Vec dout(out.size());
    for (std::size_t k = 0; k < out.size(); ++k) {
      const double r = out[k] - tgt[k];
      total += r * r;
      dout[k] = 2.0 * r * inv_n;
    }
    student.backward(cache, p.t_next, dout, grad);
  }
  return total * inv_n;
}

double loss_cd(const ConsistencyNet& student, const ConsistencyFunction& target, const NoisePredictor& teacher,
               std::span<const Example> batch, const TimeGrid& grid, const NoiseSchedule& schedule, Rng& rng,
               std::span<double> grad) {
  require(!batch.empty(), "loss_cd: empty batch");
  const auto draws = draw_cd_noise(batch.size(), student.dim(), grid, rng);
  return loss_cd(student, target, teacher, batch, draws, grid, schedule, grad);
}

std::vector<double> multistep_times(double T, double delta, int n_steps) {
  require(n_steps >= 1, "multistep_sample: n_steps must be >= 1");
  require(delta < T, "multistep_sample: delta must be below T");
  std::vector<double> ts(static_cast<std::size_t>(n_steps));
  for (int k = 0; k < n_steps; ++k) {
    ts[static_cast<std::size_t>(k)] = T - static_cast<double>(k) * (T - delta) / static_cast<double>(n_steps);
  }
  return ts;
}

Vec multistep_sample(const ConsistencyFunction& net, Condition c, const NoiseSchedule& schedule, double delta,
                     int n_steps, Rng& rng, std::size_t dim) {
  const double T = static_cast<double>(schedule.T());
  const auto ts = multistep_times(T, delta, n_steps);
  Vec x = rng.normal_vec(dim);
  const double sigma_T = schedule.sigma(schedule.T());
  for (auto& v : x) v *= sigma_T;
  Vec x0_hat;
  for (std::size_t k = 0; k < ts.size(); ++k) {
    x0_hat = net.apply(x, ts[k], c);
    if (k + 1 < ts.size()) {
      const Vec eps = rng.normal_vec(dim);
      x = forward_noise(schedule, x0_hat, ts[k + 1], eps);
    }
  }
  return x0_hat;
}

double self_consistency_gap(const ConsistencyFunction& net, const NoisePredictor& teacher,
                            std::span<const Example> data, const TimeGrid& grid, const NoiseSchedule& schedule,
                            Rng& rng) {
  require(!data.empty(), "self_consistency_gap: empty data");
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& ex : data) {
    for (std::size_t n = 1; n < grid.N(); ++n) {
      const CdDraw draw{n, rng.normal_vec(ex.x0.size())};
      const auto p = trajectory_pair(teacher, ex.x0, ex.condition, draw.n, draw.eps, grid, schedule);
      total += squared_distance(net.apply(p.x_next, p.t_next, ex.condition),
                                net.apply(p.x_hat, p.t_cur, ex.condition));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace cdpo
