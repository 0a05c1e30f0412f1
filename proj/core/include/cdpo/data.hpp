#pragma once

#include <cstddef>
#include <vector>

#include "cdpo/common.hpp"
#include "cdpo/diffusion.hpp"

namespace cdpo {

struct Mode {
  Vec center;
  double std = 0.1;
};

struct DataConfig {
  std::size_t modes = 8;
  double radius = 2.0;
  double std = 0.12;
  std::size_t n_per_condition = 256;
  std::size_t dim = 2;

  bool operator==(const DataConfig&) const = default;
};

/// Gaussian mixture with one condition per mode.
struct ToyDataset {
  std::size_t dim = 2;
  std::vector<Mode> modes;
  std::size_t n_per_condition = 0;
  std::vector<Example> samples;  ///< grouped by condition

  std::size_t n_conditions() const { return modes.size(); }
};

/// Mode centers evenly spaced on a circle in the first two coordinates.
std::vector<Mode> ring_modes(const DataConfig& config);

ToyDataset gen_toy_data(const DataConfig& config, Rng& rng);
ToyDataset gen_toy_data(std::vector<Mode> modes, std::size_t n_per_condition, Rng& rng);

}  // namespace cdpo
