#include "cdpo/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cdpo {

namespace {

void check_step(const NoiseSchedule& s, int t) {
  if (t < 0 || t > s.T()) {
    throw std::out_of_range("schedule step " + std::to_string(t) + " outside [0, " +
                            std::to_string(s.T()) + "]");
  }
}

void check_time(const NoiseSchedule& s, double t) {
  if (!(t >= 0.0 && t <= static_cast<double>(s.T()))) {
    throw std::out_of_range("schedule time " + std::to_string(t) + " outside [0, " +
                            std::to_string(s.T()) + "]");
  }
}

// Left node index and fractional offset of t within [i, i + 1].
std::pair<int, double> locate(const NoiseSchedule& s, double t) {
  int i = static_cast<int>(std::floor(t));
  if (i >= s.T()) i = s.T() - 1;
  return {i, t - static_cast<double>(i)};
}

}  // namespace

NoiseSchedule build_vp_schedule(int T, double beta_min, double beta_max) {
  require(T >= 2, "build_vp_schedule: T must be >= 2");
  require(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0,
          "build_vp_schedule: need 0 < beta_min < beta_max < 1");

  NoiseSchedule s;
  s.beta_min_ = beta_min;
  s.beta_max_ = beta_max;
  s.log_alpha_.assign(static_cast<std::size_t>(T) + 1, 0.0);
  s.sigma2_.assign(static_cast<std::size_t>(T) + 1, 0.0);
  s.alphas_.resize(static_cast<std::size_t>(T));
  s.sigmas_.resize(static_cast<std::size_t>(T));

  double log_abar = 0.0;
  for (int t = 1; t <= T; ++t) {
    const double beta = beta_min + (beta_max - beta_min) * static_cast<double>(t - 1) /
                                       static_cast<double>(T - 1);
    log_abar += std::log1p(-beta);
    const double abar = std::exp(log_abar);
    s.alphas_[t - 1] = std::sqrt(abar);
    // -expm1 keeps sigma accurate when abar is close to one.
    s.sigmas_[t - 1] = std::sqrt(-std::expm1(log_abar));
    s.log_alpha_[t] = 0.5 * log_abar;
    s.sigma2_[t] = s.sigmas_[t - 1] * s.sigmas_[t - 1];
  }
  return s;
}

double NoiseSchedule::alpha(int t) const {
  check_step(*this, t);
  return t == 0 ? 1.0 : alphas_[t - 1];
}

double NoiseSchedule::sigma(int t) const {
  check_step(*this, t);
  return t == 0 ? 0.0 : sigmas_[t - 1];
}

double NoiseSchedule::alpha_at(double t) const {
  check_time(*this, t);
  if (t == std::floor(t)) return alpha(static_cast<int>(t));
  const auto [i, w] = locate(*this, t);
  return std::exp((1.0 - w) * log_alpha_[i] + w * log_alpha_[i + 1]);
}

double NoiseSchedule::sigma_at(double t) const {
  check_time(*this, t);
  if (t == std::floor(t)) return sigma(static_cast<int>(t));
  const auto [i, w] = locate(*this, t);
  return std::sqrt((1.0 - w) * sigma2_[i] + w * sigma2_[i + 1]);
}

double NoiseSchedule::alpha_transition(int t) const {
  require(t >= 1 && t <= T(), "alpha_transition: step out of range");
  return alpha(t) / alpha(t - 1);
}

double NoiseSchedule::sigma2_transition(int t) const {
  const double a = alpha_transition(t);
  const double sp = sigma(t - 1);
  const double st = sigma(t);
  return std::max(0.0, st * st - a * a * sp * sp);
}

bool NoiseSchedule::reaches_noise() const {
  return !alphas_.empty() && alphas_.front() >= 0.99 && sigmas_.back() >= 0.99;
}

SdeCoefficients sde_coeffs(const NoiseSchedule& schedule, double t) {
  const double T = static_cast<double>(schedule.T());
  if (!(t > 0.0 && t <= T)) {
    throw std::out_of_range("sde_coeffs: t must lie in (0, T]");
  }
  auto slope_log_alpha = [&](int i) {
    return schedule.log_alpha_node(i + 1) - schedule.log_alpha_node(i);
  };
  auto slope_sigma2 = [&](int i) { return schedule.sigma2_node(i + 1) - schedule.sigma2_node(i); };

  double f = 0.0;
  double ds2 = 0.0;
  const int n = static_cast<int>(std::floor(t));
  if (t == static_cast<double>(n) && n < schedule.T()) {
    // Node: average of the left and right segment slopes.
    f = 0.5 * (slope_log_alpha(n - 1) + slope_log_alpha(n));
    ds2 = 0.5 * (slope_sigma2(n - 1) + slope_sigma2(n));
  } else {
    const int i = std::min(n, schedule.T() - 1);
    f = slope_log_alpha(i);
    ds2 = slope_sigma2(i);
  }
  const double s = schedule.sigma_at(t);
  return {f, ds2 - 2.0 * f * s * s};
}

TimeGrid discretize(const NoiseSchedule& schedule, std::size_t N, double delta) {
  const double T = static_cast<double>(schedule.T());
  require(N >= 2, "discretize: N must be >= 2");
  require(delta > 0.0 && delta < T, "discretize: need 0 < delta < T");
  TimeGrid grid;
  grid.delta = delta;
  grid.times.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    grid.times[i] = delta + (T - delta) * static_cast<double>(i) / static_cast<double>(N - 1);
  }
  grid.times.front() = delta;
  grid.times.back() = T;
  return grid;
}

}  // namespace cdpo
