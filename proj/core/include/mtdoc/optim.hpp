#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mtdoc/tensor.hpp"

namespace mtdoc {

// A named trainable tensor. Names are dotted paths, unique within a model.
struct Parameter {
  std::string name;
  Tensor tensor;
};

struct AdamHyperparams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  struct Moments {
    std::vector<double> first;
    std::vector<double> second;
  };

  AdamHyperparams hyper;
  std::uint64_t step_count = 0;
  std::map<std::string, Moments> moments;
};

// One bias-corrected Adam update with learning rate `state.hyper.lr`.
// Every parameter must carry a gradient; gradients are left untouched.
// Throws NumericError on a non-finite gradient before modifying anything.
void adam_step(AdamState& state, std::span<const Parameter> params);

void zero_grad(std::span<const Parameter> params);

// Global L2 norm of all gradients.
double grad_norm(std::span<const Parameter> params);

// Rescales gradients so their global norm is at most max_norm. Returns the
// norm before clipping.
double clip_grad_norm(std::span<const Parameter> params, double max_norm);

// Constant rate, optionally with linear warmup over the first
// warmup_ratio * total_steps steps and linear decay to zero afterwards.
struct LrSchedule {
  double base = 1e-3;
  std::uint64_t total_steps = 1;
  double warmup_ratio = 0.0;
  bool linear_decay = false;

  std::uint64_t warmup_steps() const;
  double at(std::uint64_t step) const;
};

}  // namespace mtdoc
