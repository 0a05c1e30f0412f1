#include "cdpo/data.hpp"

#include <cmath>
#include <numbers>

namespace cdpo {

std::vector<Mode> ring_modes(const DataConfig& config) {
  if (config.dim < 2) throw ConfigError("data.dim must be >= 2");
  if (config.modes < 2) throw ConfigError("data.modes must be >= 2");
  if (!(config.std > 0.0)) throw ConfigError("data.std must be positive");
  if (!(config.radius > 0.0)) throw ConfigError("data.radius must be positive");
  std::vector<Mode> modes(config.modes);
  for (std::size_t k = 0; k < config.modes; ++k) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(config.modes);
    modes[k].center.assign(config.dim, 0.0);
    modes[k].center[0] = config.radius * std::cos(theta);
    modes[k].center[1] = config.radius * std::sin(theta);
    modes[k].std = config.std;
  }
  return modes;
}

ToyDataset gen_toy_data(const DataConfig& config, Rng& rng) {
  return gen_toy_data(ring_modes(config), config.n_per_condition, rng);
}

ToyDataset gen_toy_data(std::vector<Mode> modes, std::size_t n_per_condition, Rng& rng) {
  if (modes.empty()) throw ConfigError("toy data needs at least one mode");
  if (n_per_condition == 0) throw ConfigError("data.n_per_condition must be >= 1");
  ToyDataset ds;
  ds.dim = modes.front().center.size();
  for (const auto& m : modes) {
    if (m.center.size() != ds.dim) throw ConfigError("toy data modes have different dimensions");
    if (!(m.std >= 0.0)) throw ConfigError("toy data mode std must be non-negative");
  }
  ds.modes = std::move(modes);
  ds.n_per_condition = n_per_condition;
  ds.samples.reserve(ds.modes.size() * n_per_condition);
  for (std::size_t c = 0; c < ds.modes.size(); ++c) {
    const auto& m = ds.modes[c];
    for (std::size_t i = 0; i < n_per_condition; ++i) {
      Example ex;
      ex.condition = c;
      ex.x0 = rng.normal_vec(ds.dim);
      for (std::size_t d = 0; d < ds.dim; ++d) ex.x0[d] = m.center[d] + m.std * ex.x0[d];
      ds.samples.push_back(std::move(ex));
    }
  }
  return ds;
}

}  // namespace cdpo
