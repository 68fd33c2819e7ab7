#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mtdoc/optim.hpp"

namespace mtdoc {

struct GradCheckOptions {
  double step = 1e-5;
  double rel_tol = 1e-3;
  // Denominator floor of the relative error, so that coordinates whose true
  // gradient is ~0 are judged on absolute agreement instead.
  double abs_floor = 1e-6;
  // Coordinates checked per parameter tensor (at least one each).
  std::size_t per_parameter = 2;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t failures = 0;
  double rel_tol = 0.0;

  bool passed() const { return failures == 0; }
  std::size_t parameters_covered() const;
};

// Compares reverse-mode gradients of `loss_fn` against central differences on
// sampled coordinates. `loss_fn` must rebuild the loss from the current
// parameter values on each call. Failures are reported, not thrown.
GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn,
                                  std::span<const Parameter> params,
                                  const GradCheckOptions& options = {});

}  // namespace mtdoc
