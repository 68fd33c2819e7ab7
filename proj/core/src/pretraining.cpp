#include "mtdoc/pretraining.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <ostream>

#include "mtdoc/error.hpp"
#include "mtdoc/heads.hpp"

namespace mtdoc {

std::size_t MixtureSpec::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

void MixtureSpec::validate() const {
  if (total() == 0) throw ConfigError("mixture draws no samples");
}

std::vector<Task> TaskToggles::enabled_tasks() const {
  std::vector<Task> out;
  for (Task t : kAllTasks) {
    if (enabled(t)) out.push_back(t);
  }
  return out;
}

void TaskToggles::validate() const {
  const auto tasks = enabled_tasks();
  if (tasks.empty()) throw ConfigError("no task is enabled");
  if (!enabled(Task::mlm)) throw ConfigError("MLM must be enabled whenever another task is");
}

TaskToggles TaskToggles::none() {
  TaskToggles t;
  t.on.fill(false);
  return t;
}

TaskToggles TaskToggles::only(std::span<const Task> tasks) {
  TaskToggles t = none();
  for (Task task : tasks) t.set(task, true);
  return t;
}

TaskToggles TaskToggles::named(std::string_view name) {
  static constexpr std::array<Task, 3> ablation1 = {Task::mlm, Task::dc, Task::lsc};
  static constexpr std::array<Task, 5> ablation2 = {Task::mlm, Task::dc, Task::lsc, Task::re, Task::vqa};
  static constexpr std::array<Task, 1> mlm = {Task::mlm};
  if (name == "ablation1") return only(ablation1);
  if (name == "ablation2") return only(ablation2);
  if (name == "full") return TaskToggles{};
  if (name == "mlm") return only(mlm);
  throw ConfigError("unknown task set '" + std::string(name) + "' (expected ablation1, ablation2, full or mlm)");
}

void MaskingOptions::validate() const {
  if (!(rate > 0.0 && rate < 1.0)) throw ConfigError("mask rate must lie in (0, 1)");
  if (!(span_mean > 0.0)) throw ConfigError("span mean must be positive");
  if (span_min < 1 || span_max < span_min) throw ConfigError("span length bounds must satisfy 1 <= min <= max");
}

MaskingPlan span_mask(std::span<const TokenId> tokens, const MaskingOptions& options, Rng& rng) {
  options.validate();
  MaskingPlan plan;
  plan.corrupted.assign(tokens.begin(), tokens.end());
  const auto eligible = [&](std::size_t i) { return tokens[i] != special::kPad && tokens[i] != special::kCls; };
  std::vector<bool> masked(tokens.size(), false);
  std::size_t n_eligible = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) n_eligible += eligible(i) ? 1 : 0;

  std::size_t n_masked = 0;
  std::vector<std::size_t> candidates;
  while (static_cast<double>(n_masked) < options.rate * static_cast<double>(n_eligible)) {
    candidates.clear();
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (eligible(i) && !masked[i]) candidates.push_back(i);
    }
    if (candidates.empty()) break;
    const std::size_t start = candidates[rng.uniform_index(candidates.size())];
    const int len = std::clamp(rng.poisson(options.span_mean), options.span_min, options.span_max);
    plan.span_starts.push_back(start);
    for (std::size_t i = start; i < tokens.size() && i < start + static_cast<std::size_t>(len); ++i) {
      if (eligible(i) && !masked[i]) {
        masked[i] = true;
        ++n_masked;
      }
    }
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!masked[i]) continue;
    plan.positions.push_back(i);
    plan.original.push_back(tokens[i]);
    plan.corrupted[i] = special::kMask;
  }
  return plan;
}

Tensor mlm_loss_sum(const ModelState& state, const Memory& memory, const MaskingPlan& plan) {
  if (plan.positions.empty()) return Tensor::scalar(0.0);
  const Tensor rows = gather_rows(memory.states, plan.positions);
  const Tensor logits = add_bias(matmul_nt(rows, state.param("embed.word")), state.param("mlm.bias"));
  const std::vector<std::size_t> targets(plan.original.begin(), plan.original.end());
  return cross_entropy(logits, targets, Reduction::sum);
}

Tensor mlm_loss(const ModelState& state, const Memory& memory, const MaskingPlan& plan) {
  if (plan.positions.empty()) return Tensor::scalar(0.0);
  return scale(mlm_loss_sum(state, memory, plan), 1.0 / static_cast<double>(plan.positions.size()));
}

std::array<std::size_t, kRoleCount> TaskBatch::role_counts() const {
  std::array<std::size_t, kRoleCount> c{};
  for (const auto& item : items) ++c[static_cast<std::size_t>(item.role)];
  return c;
}

TaskBatch compose_batch(const std::array<std::size_t, kRoleCount>& store_sizes, const MixtureSpec& mixture,
                        Rng& rng) {
  mixture.validate();
  TaskBatch batch;
  batch.items.reserve(mixture.total());
  for (std::size_t r = 0; r < kRoleCount; ++r) {
    if (mixture.counts[r] == 0) continue;
    if (store_sizes[r] == 0) {
      throw ConfigError("role '" + std::string(role_name(kAllRoles[r])) + "' has no documents to sample");
    }
    for (std::size_t i = 0; i < mixture.counts[r]; ++i) {
      batch.items.push_back({kAllRoles[r], static_cast<std::size_t>(rng.uniform_index(store_sizes[r]))});
    }
  }
  return batch;
}

TaskBatch compose_batch(const RoleStores& stores, const MixtureSpec& mixture, Rng& rng) {
  std::array<std::size_t, kRoleCount> sizes{};
  for (const auto& [role, docs] : stores) sizes[static_cast<std::size_t>(role)] = docs.size();
  return compose_batch(sizes, mixture, rng);
}

namespace {

const PreparedDocument& doc_of(const RoleStores& stores, const BatchItem& item) {
  const auto it = stores.find(item.role);
  if (it == stores.end() || item.index >= it->second.size()) {
    throw IndexError("batch item " + std::string(role_name(item.role)) + "[" + std::to_string(item.index) +
                     "] has no document");
  }
  return it->second[item.index];
}

Memory encode_item(const ModelState& state, const PreparedDocument& doc, const MaskingPlan* plan) {
  std::span<const TokenId> ids;
  if (plan && !plan->corrupted.empty()) ids = plan->corrupted;
  const AssembledInput in = assemble_input(state, doc, ids);
  return encode(state, in.embeddings, in.key_valid);
}

Tensor mean_of(const std::vector<Tensor>& terms) {
  return scale(add_n(terms), 1.0 / static_cast<double>(terms.size()));
}

void check_plans(const TaskBatch& batch, std::span<const MaskingPlan> plans) {
  if (plans.size() != batch.items.size()) {
    throw ContractError(std::to_string(plans.size()) + " masking plans for " + std::to_string(batch.items.size()) +
                        " batch items");
  }
}

}  // namespace

std::vector<MaskingPlan> plan_masks(const RoleStores& stores, const TaskBatch& batch, const ObjectiveOptions& options,
                                    Rng& rng) {
  std::vector<MaskingPlan> plans;
  plans.reserve(batch.items.size());
  for (const auto& item : batch.items) {
    if (!options.toggles.enabled(Task::mlm)) {
      plans.emplace_back();
      continue;
    }
    const auto& doc = doc_of(stores, item);
    std::vector<TokenId> ids;
    ids.reserve(doc.tokens.size());
    for (const auto& t : doc.tokens) ids.push_back(t.id);
    plans.push_back(span_mask(ids, options.masking, rng));
  }
  return plans;
}

Tensor sample_task_loss(const ModelState& state, const PreparedDocument& doc, const Memory& memory, Task task) {
  switch (task) {
    case Task::dc: {
      if (!doc.labels.doc_class) throw ValidationError(doc.id + ": no document class label");
      const std::array<std::size_t, 1> target = {static_cast<std::size_t>(*doc.labels.doc_class)};
      return cross_entropy(dc_logits(state, memory), target);
    }
    case Task::lsc:
      return cross_entropy(lsc_logits(state, memory, doc.segment_boxes), doc.segment_categories);
    case Task::roils:
      return roils_loss(roils_scores(state, memory, doc.segment_boxes), doc.reading_order);
    case Task::gtsls: {
      std::vector<DecoderExample> examples;
      for (std::size_t s = 0; s < doc.segment_boxes.size(); ++s) {
        examples.push_back({segment_query(doc.segment_boxes[s]), doc.segment_targets[s]});
      }
      if (examples.empty()) throw ValidationError(doc.id + ": no layout segments");
      return mean_of(teacher_forced_losses(state, DecoderHead::gtsls, examples, memory));
    }
    case Task::re: {
      std::vector<DecoderExample> examples;
      for (const auto& r : doc.relations) examples.push_back({r.query, r.target});
      if (examples.empty()) throw ValidationError(doc.id + ": no relation labels");
      return mean_of(teacher_forced_losses(state, DecoderHead::re, examples, memory));
    }
    case Task::vqa: {
      std::vector<DecoderExample> examples;
      for (const auto& q : doc.questions) examples.push_back({q.query, q.target});
      if (examples.empty()) throw ValidationError(doc.id + ": no question labels");
      return mean_of(teacher_forced_losses(state, DecoderHead::vqa, examples, memory));
    }
    case Task::mlm:
      break;
  }
  throw ContractError("sample_task_loss does not handle MLM; use mlm_loss");
}

LossReport collective_loss(const ModelState& state, const RoleStores& stores, const TaskBatch& batch,
                           std::span<const MaskingPlan> plans, const ObjectiveOptions& options) {
  if (options.require_mlm) {
    options.toggles.validate();
  } else if (options.toggles.enabled_tasks().empty()) {
    throw ConfigError("no task is enabled");
  }
  check_plans(batch, plans);
  const auto tasks = options.toggles.enabled_tasks();
  std::map<Task, std::vector<Tensor>> per_task;
  std::vector<Tensor> mlm_sums;
  std::size_t masked = 0;
  for (std::size_t k = 0; k < batch.items.size(); ++k) {
    const auto& doc = doc_of(stores, batch.items[k]);
    const Memory memory = encode_item(state, doc, &plans[k]);
    for (Task task : tasks) {
      if (task == Task::mlm) {
        if (!plans[k].positions.empty()) {
          mlm_sums.push_back(mlm_loss_sum(state, memory, plans[k]));
          masked += plans[k].positions.size();
        }
      } else if (doc.labels.supports(task)) {
        per_task[task].push_back(sample_task_loss(state, doc, memory, task));
      }
    }
  }

  LossReport report;
  std::vector<Tensor> weighted;
  for (Task task : tasks) {
    Tensor term;
    if (task == Task::mlm) {
      term = masked == 0 ? Tensor::scalar(0.0) : scale(add_n(mlm_sums), 1.0 / static_cast<double>(masked));
    } else {
      const auto it = per_task.find(task);
      if (it == per_task.end()) {
        throw ConfigError("task " + std::string(task_name(task)) + " is enabled but the batch has no sample for it");
      }
      term = mean_of(it->second);
    }
    report.terms[task] = term.item();
    const double w = options.weights[static_cast<std::size_t>(task)];
    weighted.push_back(w == 1.0 ? term : scale(term, w));
  }
  report.total = add_n(weighted);
  return report;
}

Tensor task_loss(const ModelState& state, const RoleStores& stores, const TaskBatch& batch,
                 std::span<const MaskingPlan> plans, Task task) {
  check_plans(batch, plans);
  std::vector<Tensor> terms;
  std::size_t masked = 0;
  for (std::size_t k = 0; k < batch.items.size(); ++k) {
    const auto& doc = doc_of(stores, batch.items[k]);
    if (task == Task::mlm) {
      if (plans[k].positions.empty()) continue;
      terms.push_back(mlm_loss_sum(state, encode_item(state, doc, &plans[k]), plans[k]));
      masked += plans[k].positions.size();
    } else if (doc.labels.supports(task)) {
      terms.push_back(sample_task_loss(state, doc, encode_item(state, doc, &plans[k]), task));
    }
  }
  if (task == Task::mlm) {
    return masked == 0 ? Tensor::scalar(0.0) : scale(add_n(terms), 1.0 / static_cast<double>(masked));
  }
  if (terms.empty()) {
    throw ConfigError("task " + std::string(task_name(task)) + " has no supporting sample in the batch");
  }
  return mean_of(terms);
}

void write_loss_header(std::ostream& out, const TaskToggles& toggles) {
  out << "step,total";
  for (Task t : toggles.enabled_tasks()) out << ',' << task_name(t);
  out << '\n';
}

void write_loss_row(std::ostream& out, const StepRecord& record, const TaskToggles& toggles) {
  const auto old = out.precision(17);
  out << record.step << ',' << record.total;
  for (Task t : toggles.enabled_tasks()) out << ',' << record.terms.at(t);
  out << '\n';
  out.precision(old);
}

std::vector<StepRecord> pretrain(ModelState& state, AdamState& optimizer, const RoleStores& stores,
                                 const PretrainOptions& options, const PretrainHooks& hooks) {
  options.mixture.validate();
  options.objective.masking.validate();
  if (options.objective.require_mlm) options.objective.toggles.validate();
  const auto params = state.parameters();
  optimizer.hyper = options.adam;  // lr is replaced by the schedule each step
  std::vector<StepRecord> records;
  std::deque<double> window;
  double window_sum = 0.0;
  for (std::uint64_t step = optimizer.step_count + 1; step <= options.steps; ++step) {
    Rng batch_rng = Rng::derive(options.seed, 2 * step);
    Rng mask_rng = Rng::derive(options.seed, 2 * step + 1);
    const TaskBatch batch = compose_batch(stores, options.mixture, batch_rng);
    const auto plans = plan_masks(stores, batch, options.objective, mask_rng);

    zero_grad(params);
    const LossReport report = collective_loss(state, stores, batch, plans, options.objective);
    const double total = report.total.item();
    if (!std::isfinite(total)) {
      std::string detail;
      for (const auto& [t, v] : report.terms) detail += " " + std::string(task_name(t)) + "=" + std::to_string(v);
      throw NumericError("non-finite loss at step " + std::to_string(step) + ":" + detail);
    }
    backward(report.total);
    if (options.clip_norm > 0.0) clip_grad_norm(params, options.clip_norm);
    optimizer.hyper.lr = options.lr.at(step - 1);
    adam_step(optimizer, params);

    StepRecord rec{step, total, report.terms};
    if (hooks.on_step) hooks.on_step(rec);
    if (hooks.after_step) hooks.after_step(step, state, optimizer);
    records.push_back(std::move(rec));

    if (options.stop_below > 0.0) {
      window.push_back(total);
      window_sum += total;
      if (window.size() > options.stop_window) {
        window_sum -= window.front();
        window.pop_front();
      }
      if (window.size() == options.stop_window && window_sum / static_cast<double>(window.size()) < options.stop_below) {
        break;
      }
    }
  }
  return records;
}

GradCheckReport collective_gradcheck(const ModelState& state, const RoleStores& stores, const ObjectiveOptions& objective,
                                     const MixtureSpec& mixture, std::uint64_t seed, const GradCheckOptions& options) {
  Rng batch_rng = Rng::derive(seed, 0);
  Rng mask_rng = Rng::derive(seed, 1);
  const TaskBatch batch = compose_batch(stores, mixture, batch_rng);
  const auto plans = plan_masks(stores, batch, objective, mask_rng);
  const auto params = state.parameters();
  return finite_diff_check([&] { return collective_loss(state, stores, batch, plans, objective).total; }, params,
                           options);
}

}  // namespace mtdoc
