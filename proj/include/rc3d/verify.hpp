#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rc3d/ops.hpp"
#include "rc3d/tensor.hpp"

// Self-checks runnable from the command line: gradient checks, brute-force
// equivalences, projection consistency, permutation equivariance and
// structural counts.
namespace rc3d::verify {

enum class Level { fast, full };
Level level_from_string(const std::string& name);

struct CheckResult {
  std::string name;
  bool passed = false;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct Report {
  std::vector<CheckResult> checks;
  double seconds = 0.0;
  [[nodiscard]] bool all_passed() const;
};

// Axis profile of u [C,H,W,D]: keep = h gives [C,H,1,1], and so on.
using ProjectFn = std::function<Tensor<double>(const Tensor<double>& u, ops::KeepAxis keep)>;

struct Hooks {
  // Projection under test; defaults to the library's average pooling.
  ProjectFn project;
};

Report run(Level level, const Hooks& hooks = {});
std::string format_report(const Report& report);

}  // namespace rc3d::verify
