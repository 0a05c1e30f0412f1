#pragma once

#include <string>
#include <vector>

#include "cdpo/data.hpp"
#include "cdpo/preference.hpp"

namespace cdpo {

struct RewardConfig {
  std::string id = "target_distance";
  double target_angle = 0.25;  ///< radians past each mode center
};

/// Mode center of condition c rotated by `angle` in the first two coordinates.
Vec reward_target(const std::vector<Mode>& modes, Condition c, double angle);

/// target_distance: -||x - target(c)||
/// norm_appeal:     -| ||x|| - radius |
/// label_align:     log N(x; mode c) - max over other modes j of log N(x; mode j)
RewardFn analytic_reward(const std::string& id, const std::vector<Mode>& modes, double radius,
                         double target_angle = 0.25);

}  // namespace cdpo
