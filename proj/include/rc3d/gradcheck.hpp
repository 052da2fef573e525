#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rc3d/tape.hpp"
#include "rc3d/tensor.hpp"

// Central finite-difference gradient checks in double precision.
namespace rc3d::gradcheck {

// Builds the output from leaves bound to `inputs`, in order.
using Function = std::function<Var<double>(Tape<double>& tape, const std::vector<Var<double>>& inputs)>;

struct Options {
  double step = 1e-5;
  // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  // Probe at most this many entries per input (0 = all), chosen by seed.
  std::size_t max_entries = 0;
  std::uint64_t seed = 1;
};

struct Result {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "input i, entry k"
};

// Non-scalar outputs are reduced to sum(R (.) f) with a fixed random R, so
// every output element contributes.
Result check(const Function& f, const std::vector<Tensor<double>>& inputs, const Options& options = {});

}  // namespace rc3d::gradcheck
