#include "cdpo/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cdpo/common.hpp"

namespace cdpo {

namespace {

double checked(double v) {
  if (!std::isfinite(v)) throw std::domain_error("grad_check: loss is not finite");
  return v;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace

GradCheckReport grad_check(const LossFunction& loss, std::span<const double> params, double h,
                           const GradCheckOptions& options) {
  require(h > 0.0, "grad_check: step h must be positive");
  const std::size_t n = params.size();
  Vec analytic(n, 0.0);
  checked(loss(params, analytic));

  GradCheckReport report;
  report.h = h;
  Vec probe(params.begin(), params.end());
  auto at = [&](std::span<const double> p) { return checked(loss(p, {})); };

  if (n <= options.max_coordinates) {
    report.rel_errors.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double saved = probe[i];
      probe[i] = saved + h;
      const double up = at(probe);
      probe[i] = saved - h;
      const double down = at(probe);
      probe[i] = saved;
      report.rel_errors[i] = relative_error(analytic[i], (up - down) / (2.0 * h), options.floor);
    }
  } else {
    report.used_probes = true;
    Rng rng(options.probe_seed);
    report.rel_errors.resize(options.probes);
    for (std::size_t k = 0; k < options.probes; ++k) {
      Vec dir = rng.normal_vec(n);
      const double len = norm(dir);
      for (auto& d : dir) d /= len;
      for (std::size_t i = 0; i < n; ++i) probe[i] = params[i] + h * dir[i];
      const double up = at(probe);
      for (std::size_t i = 0; i < n; ++i) probe[i] = params[i] - h * dir[i];
      const double down = at(probe);
      report.rel_errors[k] = relative_error(dot(analytic, dir), (up - down) / (2.0 * h), options.floor);
    }
  }
  report.max_rel_error =
      report.rel_errors.empty() ? 0.0 : *std::max_element(report.rel_errors.begin(), report.rel_errors.end());
  return report;
}

}  // namespace cdpo
