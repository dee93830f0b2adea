#pragma once

// Finite-difference gradient suite over every differentiable op, the model
// blocks, the heads and a small end-to-end model, all in 64-bit.

#include <string>
#include <vector>

#include "unispoof/tensor.hpp"

namespace unispoof {

constexpr double kGradTolerance = 1e-4;

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0;
  std::size_t checked = 0;
  bool pass() const { return max_rel_error <= kGradTolerance; }
};

std::vector<GradCheckEntry> gradcheck_suite(std::uint64_t seed = 0);

}  // namespace unispoof
