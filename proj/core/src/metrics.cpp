#include "cdpo/metrics.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace cdpo {

using nlohmann::json;

std::string metrics_record(const LogEntry& e, bool wallclock) {
  json j;
  j["iter"] = e.iter;
  j["phase"] = e.phase;
  j["loss"] = e.loss;
  j["mean_reward"] = e.mean_reward ? json(*e.mean_reward) : json(nullptr);
  j["wallclock_ms"] = wallclock ? e.wallclock_ms : 0.0;
  return j.dump();
}

std::string summary_record(const RunSummary& s) {
  json j;
  j["strategy"] = s.strategy;
  j["beta"] = s.beta;
  j["B"] = s.B;
  j["K"] = s.K;
  j["M"] = s.M;
  j["final_mean_reward"] = s.final_mean_reward;
  j["seed"] = s.seed;
  return j.dump();
}

void emit_metrics(const TrainLog& log, const std::optional<RunSummary>& summary, const std::string& path,
                  bool wallclock) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write metrics file '" + path + "'");
  for (const auto& e : log.entries) out << metrics_record(e, wallclock) << '\n';
  if (summary) out << summary_record(*summary) << '\n';
  if (!out) throw std::runtime_error("failed writing metrics file '" + path + "'");
}

void append_line(const std::string& path, const std::string& line) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to '" + path + "'");
  out << line << '\n';
}

double mean(std::span<const double> xs) {
  require(!xs.empty(), "mean: empty input");
  double s = 0.0;
  for (const double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double standard_error(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (const double x : xs) ss += (x - m) * (x - m);
  const double n = static_cast<double>(xs.size());
  return std::sqrt(ss / (n - 1.0) / n);
}

double mmd(const std::vector<Vec>& a, const std::vector<Vec>& b, std::span<const double> bandwidths) {
  require(!a.empty() && !b.empty(), "mmd: empty sample set");
  require(!bandwidths.empty(), "mmd: no bandwidths");
  auto k = [&](const Vec& x, const Vec& y) {
    const double d2 = squared_distance(x, y);
    double s = 0.0;
    for (const double h : bandwidths) s += std::exp(-d2 / (2.0 * h * h));
    return s;
  };
  auto avg = [&](const std::vector<Vec>& p, const std::vector<Vec>& q) {
    double s = 0.0;
    for (const auto& x : p)
      for (const auto& y : q) s += k(x, y);
    return s / (static_cast<double>(p.size()) * static_cast<double>(q.size()));
  };
  const double m2 = avg(a, a) + avg(b, b) - 2.0 * avg(a, b);
  return std::sqrt(std::max(m2, 0.0));
}

}  // namespace cdpo
