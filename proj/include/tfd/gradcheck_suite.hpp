#pragma once

// Finite-difference verification of every differentiable building block:
// each autodiff op, both attention blocks, the task losses and the joint loss
// through a tiny encoder + decoder.

#include <cstdint>
#include <string>
#include <vector>

#include "tfd/grad_check.hpp"

namespace tfd {

struct GradCheckCase {
  std::string name;
  std::uint64_t seed = 0;
  GradCheckReport report;
};

/// Names of the registered cases, in run order.
std::vector<std::string> gradcheck_case_names();

/// Runs one case; throws ContractError for an unknown name.
GradCheckReport run_gradcheck_case(const std::string& name, std::uint64_t seed, double eps = 1e-5,
                                   double tol = 1e-4);

/// Every case for `repeats` sub-seeds derived from `seed`.
std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed, std::size_t repeats = 3,
                                               double eps = 1e-5, double tol = 1e-4);

}  // namespace tfd
