#pragma once

// Single-task fine-tuning schedules and evaluation reports.

#include <cstdint>
#include <functional>
#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>
#include <vector>

#include "mtdoc/pretraining.hpp"

namespace mtdoc {

struct FinetuneConfig {
  Task task = Task::dc;
  std::optional<std::uint64_t> steps;
  std::optional<std::uint64_t> epochs;
  std::size_t batch_size = 32;
  double lr = 2e-5;
  double warmup_ratio = 0.0;
  bool linear_decay = false;
  std::vector<DatasetRole> roles;
  std::uint64_t seed = 0;
  double clip_norm = 0.0;

  // Published schedules: DC 50,000 steps at 2e-5; RE 100 epochs at 3e-5;
  // VQA 500,000 steps at 2e-5 with 5% warmup and linear decay. All batch 32.
  static FinetuneConfig defaults(Task task);
  // Throws ConfigError unless exactly one of steps/epochs is set and every
  // role supports the task.
  void validate() const;
  // Total optimizer steps given the size of the training pool.
  std::uint64_t total_steps(std::size_t pool_size) const;
};

void to_json(nlohmann::json& j, const FinetuneConfig& c);
void from_json(const nlohmann::json& j, FinetuneConfig& c);

struct FinetuneRecord {
  std::uint64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

// Trains with the task loss only. Each epoch visits the pooled role documents
// in a fresh seeded permutation, batch_size at a time.
std::vector<FinetuneRecord> finetune(ModelState& state, AdamState& optimizer, const RoleStores& stores,
                                     const FinetuneConfig& config,
                                     const std::function<void(const FinetuneRecord&)>& on_step = {});

struct EvalItem {
  std::string id;
  std::string pred;
  std::vector<std::string> gold;
  double score = 0.0;
};

struct EvalReport {
  std::string task;
  std::string metric;
  double value = 0.0;
  std::vector<EvalItem> items;
};

void to_json(nlohmann::json& j, const EvalReport& r);

// dc and lsc: accuracy; roils: exact order accuracy per document; re: entity
// micro-F1; vqa and gtsls: ANLS. Never modifies the model.
EvalReport evaluate(const ModelState& state, const Tokenizer& tokenizer, std::span<const PreparedDocument> docs,
                    Task task);

// Predictions in the evaluation file format, one JSON object per item.
std::vector<nlohmann::json> prediction_rows(const EvalReport& report);

}  // namespace mtdoc
