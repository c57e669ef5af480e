#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tfd/autodiff.hpp"

namespace tfd {

struct GradCheckEntry {
  std::string name;
  std::size_t count = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tol = 0.0;

  bool all_passed() const;
  double max_rel_error() const;
};

struct GradCheckInput {
  std::string name;
  Tensor* tensor;
};

/// Builds a scalar loss on the given graph. Must be deterministic and must bind
/// every checked tensor through Graph::param.
using LossBuilder = std::function<Var(Graph&)>;

/// Compares analytic gradients against central differences
/// (f(x+eps) - f(x-eps)) / 2eps, element by element. The relative error of an
/// element is |a - n| / max(|a|, |n|, 1e-8). Checked tensors are restored
/// bit-exactly and have requires_grad enabled.
GradCheckReport grad_check(const LossBuilder& f, const std::vector<GradCheckInput>& inputs,
                           double eps = 1e-5, double tol = 1e-4);

}  // namespace tfd
