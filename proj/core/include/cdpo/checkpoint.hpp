#pragma once

#include <stdexcept>
#include <string>

#include "cdpo/consistency.hpp"
#include "cdpo/nets.hpp"

namespace cdpo {

class CheckpointError : public std::runtime_error {
 public:
  enum class Reason { io, malformed_header, length_mismatch, checksum_mismatch, layout_mismatch };

  CheckpointError(Reason reason, const std::string& message) : std::runtime_error(message), reason_(reason) {}
  Reason reason() const { return reason_; }

 private:
  Reason reason_;
};

struct Checkpoint {
  std::string kind;  ///< "denoiser", "consistency", ...
  std::string arch;  ///< JSON text describing the network
  ParamVector params;
};

/// One JSON header line (layout, count, crc32 of the blob) followed by the raw
/// little-endian float64 values.
void save_checkpoint(const ParamVector& params, const std::string& path, const std::string& kind = "params",
                     const std::string& arch = "{}");
Checkpoint load_checkpoint(const std::string& path);

std::string arch_json(const MlpSpec& spec);
std::string arch_json(const MlpSpec& spec, const BoundaryScaling& boundary);
MlpSpec mlp_spec_from_arch(const std::string& arch);
BoundaryScaling boundary_from_arch(const std::string& arch);

void save_denoiser(const DenoiserNet& net, const std::string& path);
DenoiserNet load_denoiser(const std::string& path);
void save_consistency(const ConsistencyNet& net, const std::string& path);
ConsistencyNet load_consistency(const std::string& path);

}  // namespace cdpo
