#include "mtdoc/optim.hpp"

#include <cmath>

#include "mtdoc/error.hpp"

namespace mtdoc {

void adam_step(AdamState& state, std::span<const Parameter> params) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) {
      throw ContractError("adam_step: parameter '" + p.name + "' has no gradient");
    }
    check_finite(p.tensor.grad(), "gradient of " + p.name);
  }
  ++state.step_count;
  const auto& h = state.hyper;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (const auto& p : params) {
    auto& mom = state.moments[p.name];
    const std::size_t n = p.tensor.numel();
    if (mom.first.size() != n) {
      mom.first.assign(n, 0.0);
      mom.second.assign(n, 0.0);
    }
    const auto g = p.tensor.grad();
    Tensor handle = p.tensor;
    auto w = handle.mutable_data();
    for (std::size_t i = 0; i < n; ++i) {
      mom.first[i] = h.beta1 * mom.first[i] + (1.0 - h.beta1) * g[i];
      mom.second[i] = h.beta2 * mom.second[i] + (1.0 - h.beta2) * g[i] * g[i];
      if (h.lr != 0.0) {
        const double m_hat = mom.first[i] / c1;
        const double v_hat = mom.second[i] / c2;
        w[i] -= h.lr * m_hat / (std::sqrt(v_hat) + h.epsilon);
      }
    }
  }
}

void zero_grad(std::span<const Parameter> params) {
  for (const auto& p : params) {
    Tensor handle = p.tensor;
    handle.zero_grad();
  }
}

double grad_norm(std::span<const Parameter> params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(std::span<const Parameter> params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (const auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      Tensor handle = p.tensor;
      for (auto& g : handle.mutable_grad()) g *= f;
    }
  }
  return norm;
}

std::uint64_t LrSchedule::warmup_steps() const {
  return static_cast<std::uint64_t>(std::llround(warmup_ratio * static_cast<double>(total_steps)));
}

double LrSchedule::at(std::uint64_t step) const {
  const std::uint64_t warm = warmup_steps();
  if (step < warm) {
    return base * static_cast<double>(step) / static_cast<double>(warm);
  }
  if (!linear_decay || step >= total_steps) {
    return linear_decay ? 0.0 : base;
  }
  const auto remaining = static_cast<double>(total_steps - step);
  const auto span = static_cast<double>(total_steps - warm);
  return base * remaining / span;
}

}  // namespace mtdoc
