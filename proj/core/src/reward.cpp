#include "cdpo/reward.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace cdpo {

Vec reward_target(const std::vector<Mode>& modes, Condition c, double angle) {
  require(c < modes.size(), "reward_target: condition out of range");
  Vec t = modes[c].center;
  const double x = t[0];
  const double y = t[1];
  t[0] = std::cos(angle) * x - std::sin(angle) * y;
  t[1] = std::sin(angle) * x + std::cos(angle) * y;
  return t;
}

namespace {

double gaussian_log_density(std::span<const double> x, const Mode& m) {
  const double var = m.std * m.std;
  const double d = static_cast<double>(x.size());
  return -0.5 * squared_distance(x, m.center) / var - 0.5 * d * std::log(2.0 * std::numbers::pi * var);
}

}  // namespace

RewardFn analytic_reward(const std::string& id, const std::vector<Mode>& modes, double radius, double target_angle) {
  if (id == "target_distance") {
    std::vector<Vec> targets;
    for (Condition c = 0; c < modes.size(); ++c) targets.push_back(reward_target(modes, c, target_angle));
    return {id, [targets](std::span<const double> x, Condition c) {
              require(c < targets.size(), "target_distance: condition out of range");
              return -std::sqrt(squared_distance(x, targets[c]));
            }};
  }
  if (id == "norm_appeal") {
    return {id, [radius](std::span<const double> x, Condition) { return -std::abs(norm(x) - radius); }};
  }
  if (id == "label_align") {
    require(modes.size() >= 2, "label_align: needs at least two modes");
    return {id, [modes](std::span<const double> x, Condition c) {
              require(c < modes.size(), "label_align: condition out of range");
              double best_other = -std::numeric_limits<double>::infinity();
              for (Condition j = 0; j < modes.size(); ++j) {
                if (j != c) best_other = std::max(best_other, gaussian_log_density(x, modes[j]));
              }
              return gaussian_log_density(x, modes[c]) - best_other;
            }};
  }
  throw ConfigError("unknown reward id '" + id + "'");
}

}  // namespace cdpo
