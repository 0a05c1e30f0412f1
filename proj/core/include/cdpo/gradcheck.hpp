#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace cdpo {

/// Loss evaluated at `params`. When `grad` is non-empty the callee must
/// write (not accumulate) the analytic gradient into it.
using LossFunction = std::function<double(std::span<const double> params, std::span<double> grad)>;

struct GradCheckReport {
  std::vector<double> rel_errors;  ///< one per coordinate, or per probe direction
  double max_rel_error = 0.0;
  double h = 0.0;
  bool used_probes = false;
};

struct GradCheckOptions {
  /// Coordinate-wise above this count switches to random probe directions.
  std::size_t max_coordinates = 2000;
  std::size_t probes = 64;
  std::uint64_t probe_seed = 0x5eed;
  /// Denominator floor so coordinates with near-zero gradient are judged on
  /// absolute error.
  double floor = 1e-6;
};

/// Compares the analytic gradient against central differences
/// (L(p + h e_i) - L(p - h e_i)) / 2h.
GradCheckReport grad_check(const LossFunction& loss, std::span<const double> params, double h,
                           const GradCheckOptions& options = {});

}  // namespace cdpo
