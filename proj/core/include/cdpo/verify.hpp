#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cdpo {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  std::uint64_t seed = 20240531;
  std::size_t identity_inputs = 100;
  std::size_t curriculum_cases = 1000;
  std::size_t policy_instances = 20;
  std::string scratch_dir;  ///< empty: system temp directory
};

/// Trainable == reference gives ln 2 for all three preference losses.
CheckResult check_reference_identity(const VerifyOptions& options);
/// Analytic vs central-difference gradients of every training loss, plus the
/// factored Consistency-DPO gradient.
CheckResult check_gradients(const VerifyOptions& options);
/// Fuzzed batch limits, batch assignment and iteration schedules.
CheckResult check_curriculum_structure(const VerifyOptions& options);
/// Expected DPO loss under Bradley-Terry pair weights is minimised at p_ref exp(r / beta).
CheckResult check_optimal_policy(const VerifyOptions& options);
/// Save/load is bit-exact and corrupted files are rejected.
CheckResult check_checkpoints(const VerifyOptions& options);
/// f(x, delta, c) == x exactly and config print/parse round-trips.
CheckResult check_boundary_and_config(const VerifyOptions& options);

std::vector<CheckResult> run_verify_suite(const VerifyOptions& options = {});

}  // namespace cdpo
