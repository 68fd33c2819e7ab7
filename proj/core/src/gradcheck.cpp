#include "mtdoc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mtdoc/rng.hpp"

namespace mtdoc {

std::size_t GradCheckReport::parameters_covered() const {
  std::set<std::string> names;
  for (const auto& e : entries) names.insert(e.parameter);
  return names.size();
}

GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn, std::span<const Parameter> params,
                                  const GradCheckOptions& options) {
  zero_grad(params);
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    analytic.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
  }

  GradCheckReport report;
  report.rel_tol = options.rel_tol;
  Rng rng(options.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor handle = params[pi].tensor;
    const auto& grads = analytic[pi];
    std::vector<std::size_t> nonzero;
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (grads[i] != 0.0) nonzero.push_back(i);
    }
    const std::size_t count = std::max<std::size_t>(1, options.per_parameter);
    for (std::size_t s = 0; s < count; ++s) {
      // Alternate between coordinates the loss touches and arbitrary ones;
      // large embedding tables are mostly untouched rows.
      std::size_t index;
      if (!nonzero.empty() && (s % 2 == 0 || s + 1 == count)) {
        index = nonzero[rng.uniform_index(nonzero.size())];
      } else {
        index = rng.uniform_index(grads.size());
      }
      auto w = handle.mutable_data();
      const double original = w[index];
      w[index] = original + options.step;
      const double up = loss_fn().item();
      w[index] = original - options.step;
      const double down = loss_fn().item();
      w[index] = original;

      GradCheckEntry e;
      e.parameter = params[pi].name;
      e.index = index;
      e.analytic = grads[index];
      e.numeric = (up - down) / (2.0 * options.step);
      const double denom = std::max({std::abs(e.analytic), std::abs(e.numeric), options.abs_floor});
      e.rel_error = std::abs(e.analytic - e.numeric) / denom;
      if (e.rel_error > options.rel_tol) ++report.failures;
      if (report.entries.empty() || e.rel_error > report.max_rel_error) {
        report.max_rel_error = e.rel_error;
        report.worst_parameter = e.parameter;
        report.worst_index = e.index;
      }
      report.entries.push_back(std::move(e));
    }
  }
  zero_grad(params);
  return report;
}

}  // namespace mtdoc
