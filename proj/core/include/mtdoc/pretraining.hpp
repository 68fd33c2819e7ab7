#pragma once

// Span masking, the mixed-role batch composer and the collective objective.

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "mtdoc/backbone.hpp"
#include "mtdoc/embeddings.hpp"
#include "mtdoc/gradcheck.hpp"
#include "mtdoc/optim.hpp"
#include "mtdoc/rng.hpp"
#include "mtdoc/synthetic.hpp"

namespace mtdoc {

// Samples drawn per role for every batch.
struct MixtureSpec {
  std::array<std::size_t, kRoleCount> counts = {8, 2, 2, 2, 2, 8, 8};

  std::size_t total() const;
  std::size_t count(DatasetRole role) const { return counts[static_cast<std::size_t>(role)]; }
  void validate() const;
  bool operator==(const MixtureSpec&) const = default;
};

struct TaskToggles {
  std::array<bool, 7> on = {true, true, true, true, true, true, true};  // indexed by Task

  bool enabled(Task task) const { return on[static_cast<std::size_t>(task)]; }
  void set(Task task, bool value) { on[static_cast<std::size_t>(task)] = value; }
  // Enabled tasks in canonical order (mlm, dc, lsc, roils, re, gtsls, vqa).
  std::vector<Task> enabled_tasks() const;
  // Pre-training requires MLM whenever anything is on.
  void validate() const;

  static TaskToggles none();
  static TaskToggles only(std::span<const Task> tasks);
  // "ablation1" = MLM+DC+LSC, "ablation2" adds RE+VQA, "full" adds ROILS+GTSLS;
  // "mlm" is MLM alone. Unknown names raise ConfigError.
  static TaskToggles named(std::string_view name);
  bool operator==(const TaskToggles&) const = default;
};

struct MaskingOptions {
  double rate = 0.30;
  double span_mean = 3.0;
  int span_min = 1;
  int span_max = 5;

  void validate() const;
};

struct MaskingPlan {
  std::vector<std::size_t> positions;   // ascending text positions
  std::vector<TokenId> original;        // ids at those positions
  std::vector<std::size_t> span_starts;
  std::vector<TokenId> corrupted;       // full sequence with MASK substituted
};

// Draws span starts uniformly among unmasked eligible positions and span
// lengths from Poisson(span_mean) clamped to [span_min, span_max], masking
// whole spans until the masked fraction reaches `rate`. PAD and CLS ids are
// never eligible.
MaskingPlan span_mask(std::span<const TokenId> tokens, const MaskingOptions& options, Rng& rng);

// Summed cross-entropy of the original ids at the plan's positions, read from
// memory rows with the word-table-tied projection. Empty plans give 0.
Tensor mlm_loss_sum(const ModelState& state, const Memory& memory, const MaskingPlan& plan);
// Mean over the plan's positions (0 for an empty plan).
Tensor mlm_loss(const ModelState& state, const Memory& memory, const MaskingPlan& plan);

using RoleStores = std::map<DatasetRole, std::vector<PreparedDocument>>;

struct BatchItem {
  DatasetRole role;
  std::size_t index;
  bool operator==(const BatchItem&) const = default;
};

struct TaskBatch {
  std::vector<BatchItem> items;  // grouped by role in canonical role order
  std::array<std::size_t, kRoleCount> role_counts() const;
};

// Uniform sampling with replacement within each role. Empty stores for a role
// with a positive count raise ConfigError.
TaskBatch compose_batch(const std::array<std::size_t, kRoleCount>& store_sizes, const MixtureSpec& mixture, Rng& rng);
TaskBatch compose_batch(const RoleStores& stores, const MixtureSpec& mixture, Rng& rng);

struct ObjectiveOptions {
  TaskToggles toggles;
  MaskingOptions masking;
  std::array<double, 7> weights = {1, 1, 1, 1, 1, 1, 1};  // indexed by Task
  // Fine-tuning trains single heads without MLM.
  bool require_mlm = true;
};

// One plan per batch item (empty plans when MLM is off).
std::vector<MaskingPlan> plan_masks(const RoleStores& stores, const TaskBatch& batch, const ObjectiveOptions& options,
                                    Rng& rng);

struct LossReport {
  Tensor total;
  std::map<Task, double> terms;  // unweighted, one per enabled task
};

// Weighted sum of the enabled task terms. MLM is summed over every masked
// position in the batch and divided by their count; every other task is its
// per-sample loss averaged over the batch samples supporting it.
LossReport collective_loss(const ModelState& state, const RoleStores& stores, const TaskBatch& batch,
                           std::span<const MaskingPlan> plans, const ObjectiveOptions& options);

// One task's term computed on its own (fresh forward passes).
Tensor task_loss(const ModelState& state, const RoleStores& stores, const TaskBatch& batch,
                 std::span<const MaskingPlan> plans, Task task);

// Loss of a single task on one document whose memory is already encoded.
Tensor sample_task_loss(const ModelState& state, const PreparedDocument& doc, const Memory& memory, Task task);

struct PretrainOptions {
  MixtureSpec mixture;
  ObjectiveOptions objective;
  LrSchedule lr;
  AdamHyperparams adam;
  std::uint64_t steps = 2000;
  std::uint64_t seed = 0;
  double clip_norm = 0.0;  // 0 disables clipping
  // Early stop once the mean total over the last stop_window steps is below
  // stop_below (disabled when stop_below <= 0).
  double stop_below = 0.0;
  std::size_t stop_window = 20;
};

struct StepRecord {
  std::uint64_t step = 0;  // 1-based
  double total = 0.0;
  std::map<Task, double> terms;
};

// `step,total,<enabled task columns>`.
void write_loss_header(std::ostream& out, const TaskToggles& toggles);
void write_loss_row(std::ostream& out, const StepRecord& record, const TaskToggles& toggles);

struct PretrainHooks {
  std::function<void(const StepRecord&)> on_step;
  // Called after the optimizer update of `step`.
  std::function<void(std::uint64_t step, const ModelState&, const AdamState&)> after_step;
};

// Runs steps optimizer.step_count + 1 .. options.steps. Batches and masks for
// step s come from streams derived from (seed, s), so a resumed run repeats
// the unbroken one exactly. Non-finite losses raise NumericError.
std::vector<StepRecord> pretrain(ModelState& state, AdamState& optimizer, const RoleStores& stores,
                                 const PretrainOptions& options, const PretrainHooks& hooks = {});

// Finite-difference check of the collective loss on one batch drawn from
// (seed, mixture) with fixed masks; every parameter tensor is sampled.
GradCheckReport collective_gradcheck(const ModelState& state, const RoleStores& stores, const ObjectiveOptions& objective,
                                     const MixtureSpec& mixture, std::uint64_t seed, const GradCheckOptions& options = {});

}  // namespace mtdoc
