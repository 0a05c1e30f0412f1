#pragma once

#include <string>
#include <vector>

namespace cdpo {

/// Entry point of the `cdpo` tool. Returns 0 on success, 1 on configuration or
/// input errors, 2 on numerical aborts.
int run_cli(int argc, char** argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace cdpo
