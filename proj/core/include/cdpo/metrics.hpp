#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdpo/common.hpp"
#include "cdpo/trainer.hpp"

namespace cdpo {

struct RunSummary {
  std::string strategy;
  double beta = 0.0;
  std::size_t B = 1;
  int K = 0;
  std::size_t M = 0;
  double final_mean_reward = 0.0;
  std::uint64_t seed = 0;
};

/// {iter, phase, loss, mean_reward, wallclock_ms}; wallclock is written as 0
/// unless `wallclock` is set, keeping files byte-reproducible.
std::string metrics_record(const LogEntry& entry, bool wallclock);
/// {strategy, beta, B, K, M, final_mean_reward, seed}
std::string summary_record(const RunSummary& summary);

void emit_metrics(const TrainLog& log, const std::optional<RunSummary>& summary, const std::string& path,
                  bool wallclock = false);
void append_line(const std::string& path, const std::string& line);

double mean(std::span<const double> xs);
/// Sample standard deviation / sqrt(n); 0 for fewer than two values.
double standard_error(std::span<const double> xs);

/// Biased kernel MMD between two point sets with a sum of Gaussian kernels.
double mmd(const std::vector<Vec>& a, const std::vector<Vec>& b, std::span<const double> bandwidths);

}  // namespace cdpo
