#pragma once

#include <functional>
#include <string>
#include <vector>

#include "prosograph/param_store.hpp"
#include "prosograph/tensor.hpp"

namespace prosograph {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  bool passed = false;
  bool nondeterministic = false;
  double max_rel_err = 0.0;
  std::vector<GradCheckEntry> per_param;
  std::string worst_param;
};

// Central-difference check of analytic gradients for a deterministic scalar
// function of the store's parameters. f must rebuild its graph from the
// current parameter values on every call (dropout disabled). The optional
// filter restricts the check to matching parameter names; parameters upstream
// of a gradient-reversal layer carry -lambda times the true derivative on
// purpose and must be excluded from central-difference comparison.
inline GradCheckReport finite_difference_check(const std::function<DiffTensor()>& f,
                                               ParamStore& params, double eps = 1e-5,
                                               double tol = 1e-4,
                                               const std::function<bool(const std::string&)>& filter = {}) {
  GradCheckReport report;

  DiffTensor loss = f();
  if (loss.numel() != 1) throw std::invalid_argument("finite_difference_check: f must be scalar");
  const double base = loss.value();
  if (f().value() != base) {
    report.nondeterministic = true;
    return report;
  }

  params.zero_grad();
  backprop(loss);

  for (auto& [name, p] : params) {
    if (filter && !filter(name)) continue;
    GradCheckEntry entry{name, 0.0};
    auto& values = p.mutable_values();
    const auto analytic = p.grad();  // copy; perturbed evals rebuild the tape
    for (int i = 0; i < p.numel(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double fp = f().value();
      values[i] = saved - eps;
      const double fm = f().value();
      values[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[i];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    if (entry.max_rel_err > report.max_rel_err) {
      report.max_rel_err = entry.max_rel_err;
      report.worst_param = name;
    }
    report.per_param.push_back(std::move(entry));
  }
  report.passed = report.max_rel_err < tol;
  return report;
}

}  // namespace prosograph
