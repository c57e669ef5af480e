#include "tfd/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace tfd {

bool GradCheckReport::all_passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

namespace {

double evaluate(const LossBuilder& f) {
  Graph g;
  return f(g).item();
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& f, const std::vector<GradCheckInput>& inputs,
                           double eps, double tol) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw ContractError("grad_check: eps must lie in [1e-7, 1e-3]");
  }
  for (const auto& in : inputs) {
    in.tensor->set_requires_grad(true);
    in.tensor->zero_grad();
  }
  {
    Graph g;
    Var loss = f(g);
    g.backward(loss);
  }
  GradCheckReport report;
  report.tol = tol;
  for (const auto& in : inputs) {
    Tensor& t = *in.tensor;
    GradCheckEntry entry{in.name, t.size(), 0.0, true};
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + eps;
      const double up = evaluate(f);
      t[i] = orig - eps;
      const double down = evaluate(f);
      t[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(a - numeric) / denom;
      if (std::isnan(rel) || rel > entry.max_rel_error) entry.max_rel_error = rel;
    }
    entry.passed = entry.max_rel_error <= tol;
    report.entries.push_back(std::move(entry));
  }
  for (const auto& in : inputs) in.tensor->zero_grad();
  return report;
}

}  // namespace tfd
