#include "mtdoc/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "mtdoc/error.hpp"

namespace mtdoc {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

Task task_or_throw(const std::string& name) {
  const auto t = parse_task(name);
  if (!t) throw ConfigError("unknown task '" + name + "'");
  return *t;
}

}  // namespace

RunConfig RunConfig::from_json(const json& j, const std::filesystem::path& base) {
  reject_unknown(j,
                 {"seed", "model", "vocab", "data", "mixture", "tasks", "masking", "weights", "optimizer", "steps",
                  "checkpoint_every", "out_dir", "stop_below", "stop_window", "finetune"},
                 "config");
  RunConfig c;
  try {
    if (j.contains("seed") && !j.at("seed").is_null()) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("model")) {
      reject_unknown(j.at("model"),
                     {"d", "layers", "heads", "ffn", "vocab_size", "num_classes", "channels", "re_layers",
                      "gtsls_layers", "vqa_layers", "global_pos", "max_positions", "max_text_tokens", "max_patches",
                      "dropout", "init_std", "re_max_len", "gtsls_max_len", "vqa_max_len"},
                     "model");
      c.model = j.at("model").get<ModelConfig>();
    }
    if (j.contains("vocab")) c.vocab = resolve(base, j.at("vocab").get<std::string>());
    if (j.contains("data")) {
      const auto& d = j.at("data");
      reject_unknown(d, {"dir", "synthetic", "synthetic_seed"}, "data");
      if (d.contains("dir")) c.data.dir = resolve(base, d.at("dir").get<std::string>());
      if (d.contains("synthetic")) c.data.synthetic = d.at("synthetic").get<SyntheticSpec>();
      if (d.contains("synthetic_seed")) c.data.synthetic_seed = d.at("synthetic_seed").get<std::uint64_t>();
    }
    if (j.contains("mixture")) {
      for (const auto& [name, value] : j.at("mixture").items()) {
        const auto role = parse_role(name);
        if (!role) throw ConfigError("mixture: unknown role '" + name + "'");
        c.mixture.counts[static_cast<std::size_t>(*role)] = value.get<std::size_t>();
      }
    }
    if (j.contains("tasks")) {
      const auto& t = j.at("tasks");
      if (t.is_string()) {
        c.task_set = t.get<std::string>();
        c.tasks = TaskToggles::named(c.task_set);
      } else {
        std::vector<Task> list;
        for (const auto& name : t) list.push_back(task_or_throw(name.get<std::string>()));
        c.task_set = "custom";
        c.tasks = TaskToggles::only(list);
      }
    }
    if (j.contains("masking")) {
      const auto& m = j.at("masking");
      reject_unknown(m, {"rate", "span_mean", "span_min", "span_max"}, "masking");
      c.masking.rate = m.value("rate", c.masking.rate);
      c.masking.span_mean = m.value("span_mean", c.masking.span_mean);
      c.masking.span_min = m.value("span_min", c.masking.span_min);
      c.masking.span_max = m.value("span_max", c.masking.span_max);
    }
    if (j.contains("weights")) {
      for (const auto& [name, value] : j.at("weights").items()) {
        c.weights[static_cast<std::size_t>(task_or_throw(name))] = value.get<double>();
      }
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      reject_unknown(o, {"lr", "beta1", "beta2", "epsilon", "warmup_ratio", "linear_decay", "clip_norm"}, "optimizer");
      c.adam.lr = o.value("lr", c.adam.lr);
      c.adam.beta1 = o.value("beta1", c.adam.beta1);
      c.adam.beta2 = o.value("beta2", c.adam.beta2);
      c.adam.epsilon = o.value("epsilon", c.adam.epsilon);
      c.warmup_ratio = o.value("warmup_ratio", c.warmup_ratio);
      c.linear_decay = o.value("linear_decay", c.linear_decay);
      c.clip_norm = o.value("clip_norm", c.clip_norm);
    }
    if (j.contains("steps")) j.at("steps").get_to(c.steps);
    if (j.contains("checkpoint_every")) j.at("checkpoint_every").get_to(c.checkpoint_every);
    if (j.contains("out_dir")) c.out_dir = resolve(base, j.at("out_dir").get<std::string>());
    if (j.contains("stop_below")) j.at("stop_below").get_to(c.stop_below);
    if (j.contains("stop_window")) j.at("stop_window").get_to(c.stop_window);
    if (j.contains("finetune")) {
      FinetuneConfig f;
      if (j.at("finetune").contains("task")) f = FinetuneConfig::defaults(task_or_throw(j.at("finetune").at("task")));
      j.at("finetune").get_to(f);
      c.finetune = f;
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

json RunConfig::to_json() const {
  json j;
  if (seed) j["seed"] = *seed;
  j["model"] = model;
  if (vocab) j["vocab"] = vocab->string();
  json data{{"synthetic", this->data.synthetic}};
  if (this->data.dir) data["dir"] = this->data.dir->string();
  if (this->data.synthetic_seed) data["synthetic_seed"] = *this->data.synthetic_seed;
  j["data"] = data;
  json mix;
  for (std::size_t r = 0; r < kRoleCount; ++r) mix[std::string(role_name(kAllRoles[r]))] = mixture.counts[r];
  j["mixture"] = mix;
  if (task_set == "custom") {
    auto list = json::array();
    for (Task t : tasks.enabled_tasks()) list.push_back(task_name(t));
    j["tasks"] = list;
  } else {
    j["tasks"] = task_set;
  }
  j["masking"] = {{"rate", masking.rate},
                  {"span_mean", masking.span_mean},
                  {"span_min", masking.span_min},
                  {"span_max", masking.span_max}};
  json w;
  for (Task t : kAllTasks) w[std::string(task_name(t))] = weights[static_cast<std::size_t>(t)];
  j["weights"] = w;
  j["optimizer"] = {{"lr", adam.lr},           {"beta1", adam.beta1},
                    {"beta2", adam.beta2},     {"epsilon", adam.epsilon},
                    {"warmup_ratio", warmup_ratio}, {"linear_decay", linear_decay},
                    {"clip_norm", clip_norm}};
  j["steps"] = steps;
  j["checkpoint_every"] = checkpoint_every;
  j["out_dir"] = out_dir.string();
  j["stop_below"] = stop_below;
  j["stop_window"] = stop_window;
  if (finetune) j["finetune"] = *finetune;
  return j;
}

std::uint64_t RunConfig::require_seed() const {
  if (!seed) throw ConfigError("config has no seed; every run must name one");
  return *seed;
}

void RunConfig::validate() const {
  require_seed();
  if (data.dir && !std::filesystem::is_directory(*data.dir)) {
    throw ConfigError("data directory " + data.dir->string() + " does not exist");
  }
  if (vocab && !std::filesystem::is_regular_file(*vocab)) {
    throw ConfigError("vocabulary " + vocab->string() + " does not exist");
  }
  if (!data.dir) data.synthetic.validate();
  mixture.validate();
  masking.validate();
  tasks.validate();
  if (steps == 0) throw ConfigError("steps must be positive");
  if (!(adam.lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (stop_below > 0.0 && stop_window == 0) throw ConfigError("stop_window must be positive");
  if (finetune) finetune->validate();
}

PretrainOptions RunConfig::pretrain_options() const {
  PretrainOptions o;
  o.mixture = mixture;
  o.objective.toggles = tasks;
  o.objective.masking = masking;
  o.objective.weights = weights;
  o.lr = LrSchedule{adam.lr, steps, warmup_ratio, linear_decay};
  o.adam = adam;
  o.steps = steps;
  o.seed = require_seed();
  o.clip_norm = clip_norm;
  o.stop_below = stop_below;
  o.stop_window = stop_window;
  return o;
}

Corpus load_corpus(const RunConfig& config) {
  if (!config.data.dir) {
    return generate_synthetic_corpus(config.data.synthetic_seed.value_or(config.require_seed()),
                                     config.data.synthetic);
  }
  Corpus corpus;
  for (auto role : kAllRoles) {
    const auto path = *config.data.dir / (std::string(role_name(role)) + ".jsonl");
    if (std::filesystem::exists(path)) corpus[role] = load_jsonl(path);
  }
  if (corpus.empty()) throw ConfigError("data directory " + config.data.dir->string() + " has no <role>.jsonl files");
  return corpus;
}

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::filesystem::create_directories(dir);
  for (const auto& [role, docs] : corpus) {
    write_jsonl(dir / (std::string(role_name(role)) + ".jsonl"), docs, dir / "pixels");
  }
}

std::vector<std::string> corpus_texts(const Corpus& corpus) {
  std::vector<std::string> texts;
  for (const auto& [role, docs] : corpus) {
    for (const auto& doc : docs) {
      for (const auto& line : doc.lines) texts.push_back(line.text);
      if (doc.labels.relations) {
        for (const auto& [k, v] : *doc.labels.relations) {
          texts.push_back(k);
          texts.push_back(v);
        }
      }
      if (doc.labels.qa) {
        for (const auto& qa : *doc.labels.qa) {
          texts.push_back(qa.question);
          for (const auto& a : qa.answers) texts.push_back(a);
        }
      }
    }
  }
  return texts;
}

Vocab build_vocab(const Corpus& corpus) { return Vocab::build(corpus_texts(corpus)); }

RoleStores prepare_stores(const Corpus& corpus, const Tokenizer& tokenizer, const ModelConfig& model) {
  RoleStores stores;
  for (const auto& [role, docs] : corpus) {
    auto& out = stores[role];
    out.reserve(docs.size());
    for (const auto& doc : docs) out.push_back(prepare_document(doc, tokenizer, model));
  }
  return stores;
}

std::size_t thread_cap() {
  const char* v = std::getenv("MTDOC_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("MTDOC_THREADS must be a positive integer, got '") + v + "'");
  return static_cast<std::size_t>(n);
}

}  // namespace mtdoc
