#pragma once

#include <string>
#include <vector>

namespace efs {

struct SelfCheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Built-in micro checks: finite-difference gradient checks for every
/// primitive, voxel-grid partition of unity, and event-simulator agreement
/// with the dense threshold scanner. `inject_fault` names a primitive whose
/// backward pass is deliberately corrupted, for verifying the harness
/// detects broken gradients.
std::vector<SelfCheckResult> run_selfcheck(const std::string& inject_fault = "");

}  // namespace efs
