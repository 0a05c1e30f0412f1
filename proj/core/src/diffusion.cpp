#include "cdpo/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cdpo {

namespace {

constexpr double kAlphaGuard = 1e-8;

void check_dims(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}

}  // namespace

Vec forward_noise(double alpha, double sigma, std::span<const double> x0, std::span<const double> eps) {
  check_dims(x0, eps, "forward_noise");
  Vec out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = alpha * x0[i] + sigma * eps[i];
  return out;
}

Vec forward_noise(const NoiseSchedule& schedule, std::span<const double> x0, double t,
                  std::span<const double> eps) {
  return forward_noise(schedule.alpha_at(t), schedule.sigma_at(t), x0, eps);
}

NoisedSample make_noised(const NoiseSchedule& schedule, const Example& example, double t, Vec eps) {
  NoisedSample s;
  s.x_t = forward_noise(schedule, example.x0, t, eps);
  s.t = t;
  s.eps = std::move(eps);
  s.x0 = example.x0;
  s.condition = example.condition;
  return s;
}

std::vector<SimpleDraw> draw_simple_noise(std::size_t count, std::size_t dim, const NoiseSchedule& schedule,
                                          Rng& rng) {
  std::vector<SimpleDraw> draws(count);
  for (auto& d : draws) {
    d.t = static_cast<int>(rng.uniform_int(1, schedule.T()));
    d.eps = rng.normal_vec(dim);
  }
  return draws;
}

double loss_simple(const NoisePredictor& predictor, std::span<const Example> batch,
                   std::span<const SimpleDraw> draws, const NoiseSchedule& schedule) {
  require(!batch.empty(), "loss_simple: empty batch");
  require(batch.size() == draws.size(), "loss_simple: one noise draw per example required");
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Vec x_t = forward_noise(schedule, batch[i].x0, draws[i].t, draws[i].eps);
    const Vec eps_hat = predictor.predict_noise(x_t, draws[i].t, batch[i].condition);
    total += squared_distance(draws[i].eps, eps_hat);
  }
  return total / static_cast<double>(batch.size());
}

double loss_simple(const DenoiserNet& net, std::span<const Example> batch, std::span<const SimpleDraw> draws,
                   const NoiseSchedule& schedule, std::span<double> grad) {
  if (grad.empty()) return loss_simple(static_cast<const NoisePredictor&>(net), batch, draws, schedule);
  require(!batch.empty(), "loss_simple: empty batch");
  require(batch.size() == draws.size(), "loss_simple: one noise draw per example required");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  MlpCache cache;
  Vec dout(net.dim());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Vec x_t = forward_noise(schedule, batch[i].x0, draws[i].t, draws[i].eps);
    const Vec eps_hat = net.forward(x_t, draws[i].t, batch[i].condition, &cache);
    for (std::size_t k = 0; k < dout.size(); ++k) {
      const double r = eps_hat[k] - draws[i].eps[k];
      total += r * r;
      dout[k] = 2.0 * r * inv_n;
    }
    net.mlp().backward(cache, dout, grad);
  }
  return total * inv_n;
}

double loss_simple(const DenoiserNet& net, std::span<const Example> batch, const NoiseSchedule& schedule,
                   Rng& rng, std::span<double> grad) {
  require(!batch.empty(), "loss_simple: empty batch");
  const auto draws = draw_simple_noise(batch.size(), net.dim(), schedule, rng);
  return loss_simple(net, batch, draws, schedule, grad);
}

// ---------------------------------------------------------------------------

double ReverseCoeffs::sigma2_ts() const {
  return std::max(0.0, sigma_t * sigma_t - alpha_ts * alpha_ts * sigma_prev * sigma_prev);
}

double ReverseCoeffs::variance() const {
  if (sigma_t == 0.0) return 0.0;
  return sigma2_ts() * sigma_prev * sigma_prev / (sigma_t * sigma_t);
}

ReverseCoeffs ReverseCoeffs::at(const NoiseSchedule& schedule, int t) {
  return {schedule.alpha_transition(t), schedule.sigma(t), schedule.sigma(t - 1)};
}

Vec reverse_mean(std::span<const double> x_t, std::span<const double> eps_hat, const ReverseCoeffs& k) {
  check_dims(x_t, eps_hat, "reverse_mean");
  const double s2 = k.sigma2_ts();
  const double eps_coef = k.sigma_t == 0.0 ? 0.0 : s2 / k.sigma_t;
  Vec mu(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) mu[i] = (x_t[i] - eps_hat[i] * eps_coef) / k.alpha_ts;
  return mu;
}

Vec reverse_step(const NoisePredictor& net, std::span<const double> x_t, int t, Condition c,
                 const NoiseSchedule& schedule, Rng& rng, bool zero_variance) {
  if (t < 1 || t > schedule.T()) throw std::out_of_range("reverse_step: t must lie in [1, T]");
  const auto k = ReverseCoeffs::at(schedule, t);
  const Vec eps_hat = net.predict_noise(x_t, t, c);
  Vec x = reverse_mean(x_t, eps_hat, k);
  if (t == 1 || zero_variance) return x;
  const double sd = std::sqrt(k.variance());
  for (auto& v : x) v += sd * rng.normal();
  return x;
}

Vec ddim_update(std::span<const double> x_src, std::span<const double> eps_hat, double alpha_src,
                double sigma_src, double alpha_dst, double sigma_dst) {
  check_dims(x_src, eps_hat, "ddim_update");
  if (alpha_src < kAlphaGuard) throw std::domain_error("ddim_update: alpha at source time is below 1e-8");
  Vec out(x_src.size());
  for (std::size_t i = 0; i < x_src.size(); ++i) {
    const double x0_hat = (x_src[i] - sigma_src * eps_hat[i]) / alpha_src;
    out[i] = alpha_dst * x0_hat + sigma_dst * eps_hat[i];
  }
  return out;
}

Vec ddim_solver_step(const NoisePredictor& teacher, std::span<const double> x_src, double t_src, double t_dst,
                     Condition c, const NoiseSchedule& schedule) {
  if (!(t_dst < t_src)) throw std::invalid_argument("ddim_solver_step: need t_dst < t_src");
  const double a_src = schedule.alpha_at(t_src);
  if (a_src < kAlphaGuard) throw std::domain_error("ddim_solver_step: alpha at source time is below 1e-8");
  const Vec eps_hat = teacher.predict_noise(x_src, t_src, c);
  return ddim_update(x_src, eps_hat, a_src, schedule.sigma_at(t_src), schedule.alpha_at(t_dst),
                     schedule.sigma_at(t_dst));
}

std::vector<int> ddim_timesteps(int T, int steps) {
  require(steps >= 1, "ddim_timesteps: steps must be >= 1");
  require(T >= 1, "ddim_timesteps: T must be >= 1");
  if (steps == 1) return {T};
  std::vector<int> ts;
  ts.reserve(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double v = static_cast<double>(T) - static_cast<double>(i) * static_cast<double>(T - 1) /
                                                  static_cast<double>(steps - 1);
    const int t = static_cast<int>(std::lround(v));
    if (ts.empty() || t < ts.back()) ts.push_back(t);
  }
  return ts;
}

Vec sample_ddim(const NoisePredictor& net, Condition c, const NoiseSchedule& schedule, int steps, Rng& rng,
                std::size_t dim) {
  const auto ts = ddim_timesteps(schedule.T(), steps);
  Vec x = rng.normal_vec(dim);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const Vec eps_hat = net.predict_noise(x, t, c);
    if (i + 1 == ts.size()) {
      // Final jump to the clean endpoint (alpha = 1, sigma = 0) is x0_hat.
      return ddim_update(x, eps_hat, schedule.alpha(t), schedule.sigma(t), 1.0, 0.0);
    }
    x = ddim_update(x, eps_hat, schedule.alpha(t), schedule.sigma(t), schedule.alpha(ts[i + 1]),
                    schedule.sigma(ts[i + 1]));
  }
  return x;
}

}  // namespace cdpo
