#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdpo {

using Vec = std::vector<double>;
using Condition = std::size_t;

/// Raised when a training loop produces a non-finite value or diverges.
/// The CLI maps this to exit code 2.
class NumericalAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for malformed or out-of-schema experiment configuration (exit code 1).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Seeded random stream. Substreams derived with `split` are independent of
/// how many draws the parent has made, so per-condition work can fan out
/// without changing results.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);
  Rng(std::uint64_t seed, std::uint64_t stream);

  double normal();
  Vec normal_vec(std::size_t n);
  double uniform01();
  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  std::uint64_t next_u64();

  Rng split(std::uint64_t stream) const;
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

double sigmoid(double z);
/// log(1 + exp(z)) without overflow.
double softplus(double z);
/// -log(sigmoid(z)) == softplus(-z).
double neg_log_sigmoid(double z);

double dot(std::span<const double> a, std::span<const double> b);
double squared_distance(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

void require(bool condition, const std::string& message);

}  // namespace cdpo
