#include "mtdoc/finetune.hpp"

#include <nlohmann/json.hpp>

#include "mtdoc/error.hpp"
#include "mtdoc/heads.hpp"
#include "mtdoc/metrics.hpp"

namespace mtdoc {

namespace {

std::vector<DatasetRole> default_roles(Task task) {
  switch (task) {
    case Task::dc: return {DatasetRole::classification};
    case Task::re:
      return {DatasetRole::relations_a, DatasetRole::relations_b, DatasetRole::relations_c, DatasetRole::relations_d};
    case Task::vqa: return {DatasetRole::vqa};
    case Task::lsc:
    case Task::roils:
    case Task::gtsls: return {DatasetRole::layout};
    case Task::mlm: break;
  }
  throw ConfigError("fine-tuning needs a supervised task, not mlm");
}

}  // namespace

FinetuneConfig FinetuneConfig::defaults(Task task) {
  FinetuneConfig c;
  c.task = task;
  c.roles = default_roles(task);
  switch (task) {
    case Task::re:
      c.epochs = 100;
      c.lr = 3e-5;
      break;
    case Task::vqa:
      c.steps = 500000;
      c.lr = 2e-5;
      c.warmup_ratio = 0.05;
      c.linear_decay = true;
      break;
    default:
      c.steps = 50000;
      c.lr = 2e-5;
      break;
  }
  return c;
}

void FinetuneConfig::validate() const {
  if (task == Task::mlm) throw ConfigError("fine-tuning needs a supervised task, not mlm");
  if (steps.has_value() == epochs.has_value()) throw ConfigError("fine-tuning needs exactly one of steps or epochs");
  if ((steps && *steps == 0) || (epochs && *epochs == 0)) throw ConfigError("fine-tuning length must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) throw ConfigError("warmup ratio must lie in [0, 1]");
  if (roles.empty()) throw ConfigError("fine-tuning needs at least one dataset role");
  for (auto role : roles) {
    if (!role_tasks(role).contains(task)) {
      throw ConfigError("role " + std::string(role_name(role)) + " carries no " + std::string(task_name(task)) +
                        " labels");
    }
  }
}

std::uint64_t FinetuneConfig::total_steps(std::size_t pool_size) const {
  if (steps) return *steps;
  const std::uint64_t per_epoch = (pool_size + batch_size - 1) / batch_size;
  return epochs.value_or(0) * per_epoch;
}

void to_json(nlohmann::json& j, const FinetuneConfig& c) {
  j = nlohmann::json{{"task", task_name(c.task)},
                     {"batch_size", c.batch_size},
                     {"lr", c.lr},
                     {"warmup_ratio", c.warmup_ratio},
                     {"linear_decay", c.linear_decay},
                     {"seed", c.seed},
                     {"clip_norm", c.clip_norm}};
  if (c.steps) j["steps"] = *c.steps;
  if (c.epochs) j["epochs"] = *c.epochs;
  auto roles = nlohmann::json::array();
  for (auto r : c.roles) roles.push_back(role_name(r));
  j["roles"] = roles;
}

void from_json(const nlohmann::json& j, FinetuneConfig& c) {
  if (j.contains("task")) {
    const auto name = j.at("task").get<std::string>();
    const auto task = parse_task(name);
    if (!task) throw ConfigError("unknown task '" + name + "'");
    c = FinetuneConfig::defaults(*task);
  }
  if (j.contains("steps")) {
    c.steps = j.at("steps").get<std::uint64_t>();
    if (!j.contains("epochs")) c.epochs.reset();
  }
  if (j.contains("epochs")) {
    c.epochs = j.at("epochs").get<std::uint64_t>();
    if (!j.contains("steps")) c.steps.reset();
  }
  if (j.contains("batch_size")) j.at("batch_size").get_to(c.batch_size);
  if (j.contains("lr")) j.at("lr").get_to(c.lr);
  if (j.contains("warmup_ratio")) j.at("warmup_ratio").get_to(c.warmup_ratio);
  if (j.contains("linear_decay")) j.at("linear_decay").get_to(c.linear_decay);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("clip_norm")) j.at("clip_norm").get_to(c.clip_norm);
  if (j.contains("roles")) {
    c.roles.clear();
    for (const auto& r : j.at("roles")) {
      const auto name = r.get<std::string>();
      const auto role = parse_role(name);
      if (!role) throw ConfigError("unknown dataset role '" + name + "'");
      c.roles.push_back(*role);
    }
  }
}

std::vector<FinetuneRecord> finetune(ModelState& state, AdamState& optimizer, const RoleStores& stores,
                                     const FinetuneConfig& config,
                                     const std::function<void(const FinetuneRecord&)>& on_step) {
  config.validate();
  std::vector<BatchItem> pool;
  for (auto role : config.roles) {
    const auto it = stores.find(role);
    if (it == stores.end() || it->second.empty()) {
      throw ConfigError("role " + std::string(role_name(role)) + " has no documents to fine-tune on");
    }
    for (std::size_t i = 0; i < it->second.size(); ++i) pool.push_back({role, i});
  }
  const std::uint64_t total = config.total_steps(pool.size());
  const LrSchedule schedule{config.lr, total, config.warmup_ratio, config.linear_decay};
  ObjectiveOptions objective;
  const std::array<Task, 1> only = {config.task};
  objective.toggles = TaskToggles::only(only);
  objective.require_mlm = false;

  const auto params = state.parameters();
  std::vector<FinetuneRecord> records;
  std::vector<BatchItem> order;
  std::size_t cursor = 0;
  std::uint64_t epoch = 0;
  for (std::uint64_t step = 0; step < total; ++step) {
    if (cursor >= order.size()) {
      order = pool;
      Rng rng = Rng::derive(config.seed, epoch++);
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
      cursor = 0;
    }
    TaskBatch batch;
    const std::size_t take = std::min(config.batch_size, order.size() - cursor);
    batch.items.assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                       order.begin() + static_cast<std::ptrdiff_t>(cursor + take));
    cursor += take;
    const std::vector<MaskingPlan> plans(batch.items.size());

    zero_grad(params);
    const LossReport report = collective_loss(state, stores, batch, plans, objective);
    const double loss = report.total.item();
    if (!std::isfinite(loss)) throw NumericError("non-finite fine-tuning loss at step " + std::to_string(step + 1));
    backward(report.total);
    if (config.clip_norm > 0.0) clip_grad_norm(params, config.clip_norm);
    optimizer.hyper.lr = schedule.at(step);
    adam_step(optimizer, params);
    FinetuneRecord rec{step + 1, loss, optimizer.hyper.lr};
    if (on_step) on_step(rec);
    records.push_back(rec);
  }
  return records;
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  auto items = nlohmann::json::array();
  for (const auto& it : r.items) {
    items.push_back({{"id", it.id}, {"pred", it.pred}, {"gold", it.gold}, {"score", it.score}});
  }
  j = nlohmann::json{{"task", r.task}, {"metric", r.metric}, {"value", r.value}, {"items", items}};
}

std::vector<nlohmann::json> prediction_rows(const EvalReport& report) {
  std::vector<nlohmann::json> rows;
  for (const auto& it : report.items) rows.push_back({{"id", it.id}, {"task", report.task}, {"pred", it.pred}});
  return rows;
}

namespace {

std::string join_order(std::span<const std::size_t> order) {
  std::string s;
  for (auto i : order) {
    if (!s.empty()) s += ' ';
    s += std::to_string(i);
  }
  return s;
}

Memory encode_clean(const ModelState& state, const PreparedDocument& doc) {
  const AssembledInput in = assemble_input(state, doc);
  return encode(state, in.embeddings, in.key_valid);
}

}  // namespace

EvalReport evaluate(const ModelState& state, const Tokenizer& tokenizer, std::span<const PreparedDocument> docs,
                    Task task) {
  NoGradGuard no_grad;
  EvalReport report;
  report.task = std::string(task_name(task));
  std::vector<EntityMap> pred_maps, gold_maps;
  for (const auto& doc : docs) {
    if (!doc.labels.supports(task)) continue;
    const Memory memory = encode_clean(state, doc);
    switch (task) {
      case Task::dc: {
        const std::size_t pred = argmax(dc_logits(state, memory).data());
        const auto gold = static_cast<std::size_t>(doc.labels.doc_class.value());
        report.items.push_back({doc.id, std::to_string(pred), {std::to_string(gold)}, pred == gold ? 1.0 : 0.0});
        break;
      }
      case Task::lsc: {
        const Tensor logits = lsc_logits(state, memory, doc.segment_boxes);
        for (std::size_t s = 0; s < doc.segment_boxes.size(); ++s) {
          const std::size_t pred = argmax(logits.data().subspan(s * logits.cols(), logits.cols()));
          const std::size_t gold = doc.segment_categories[s];
          report.items.push_back({doc.id + "#" + std::to_string(s),
                                  std::string(category_name(static_cast<SegmentCategory>(pred))),
                                  {std::string(category_name(static_cast<SegmentCategory>(gold)))},
                                  pred == gold ? 1.0 : 0.0});
        }
        break;
      }
      case Task::roils: {
        const auto pred = decode_reading_order(roils_scores(state, memory, doc.segment_boxes));
        report.items.push_back({doc.id, join_order(pred), {join_order(doc.reading_order)},
                                pred == doc.reading_order ? 1.0 : 0.0});
        break;
      }
      case Task::re: {
        EntityMap pred, gold;
        for (const auto& r : doc.relations) {
          const std::string value = re_head(state, tokenizer, memory, r.key);
          pred[r.key] = value;
          gold[r.key] = r.value;
          report.items.push_back({doc.id + "#" + r.key, value, {r.value},
                                  normalize_answer(value) == normalize_answer(r.value) ? 1.0 : 0.0});
        }
        pred_maps.push_back(std::move(pred));
        gold_maps.push_back(std::move(gold));
        break;
      }
      case Task::vqa: {
        for (std::size_t q = 0; q < doc.questions.size(); ++q) {
          const auto& qa = doc.questions[q];
          const std::string pred = vqa_head(state, tokenizer, memory, qa.question);
          report.items.push_back({doc.id + "#" + std::to_string(q), pred, qa.answers, anls_item(pred, qa.answers)});
        }
        break;
      }
      case Task::gtsls: {
        for (std::size_t s = 0; s < doc.segment_boxes.size(); ++s) {
          const std::string pred = gtsls_head(state, tokenizer, memory, doc.segment_boxes[s]);
          const std::vector<std::string> gold = {normalize_text(doc.segment_texts[s])};
          report.items.push_back({doc.id + "#" + std::to_string(s), pred, gold, anls_item(pred, gold)});
        }
        break;
      }
      case Task::mlm:
        throw ContractError("evaluation covers the supervised tasks only");
    }
  }
  if (report.items.empty()) {
    throw ContractError("no document supports task " + report.task + " in the evaluation set");
  }
  if (task == Task::re) {
    report.metric = "entity_f1";
    report.value = entity_f1(pred_maps, gold_maps);
  } else {
    report.metric = task == Task::vqa || task == Task::gtsls ? "anls" : "accuracy";
    double sum = 0.0;
    for (const auto& it : report.items) sum += it.score;
    report.value = sum / static_cast<double>(report.items.size());
  }
  return report;
}

}  // namespace mtdoc
