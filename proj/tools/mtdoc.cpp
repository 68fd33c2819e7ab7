// mtdoc: data generation, pre-training, fine-tuning, evaluation and checks.
//
// Exit codes: 0 ok, 1 other failure, 2 configuration/usage, 3 numeric failure,
// 4 validation failure (bad data or checkpoint).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "mtdoc/checkpoint.hpp"
#include "mtdoc/config.hpp"
#include "mtdoc/error.hpp"
#include "mtdoc/finetune.hpp"
#include "mtdoc/pretraining.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mtdoc;

namespace {

constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitValidation = 4;

std::vector<std::string> task_names() {
  std::vector<std::string> out;
  for (Task t : kAllTasks) out.emplace_back(task_name(t));
  return out;
}

Task task_arg(const std::string& name) {
  const auto t = parse_task(name);
  if (!t) throw ConfigError("unknown task '" + name + "'");
  return *t;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

void write_json(const fs::path& path, const json& j) { open_out(path) << j.dump(2) << '\n'; }

// Vocabulary next to a checkpoint, or an explicit override.
Vocab checkpoint_vocab(const fs::path& checkpoint, const std::string& override_path) {
  const fs::path p = override_path.empty() ? checkpoint.parent_path() / "vocab.txt" : fs::path(override_path);
  if (!fs::is_regular_file(p)) throw ConfigError("vocabulary " + p.string() + " not found (pass --vocab)");
  return Vocab::load(p);
}

ModelConfig sized_model(ModelConfig model, const Vocab& vocab) {
  if (model.vocab_size != 0 && model.vocab_size != vocab.size()) {
    throw ConfigError("model.vocab_size " + std::to_string(model.vocab_size) + " disagrees with the vocabulary (" +
                      std::to_string(vocab.size()) + " tokens)");
  }
  model.vocab_size = vocab.size();
  return model;
}

// ----------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::uint64_t seed = 0;
  std::string out;
  std::string spec;
};

int cmd_gen_data(const GenDataArgs& a) {
  SyntheticSpec spec;
  if (!a.spec.empty()) {
    std::ifstream in(a.spec);
    if (!in) throw ConfigError("cannot open spec " + a.spec);
    try {
      spec = json::parse(in).get<SyntheticSpec>();
    } catch (const json::exception& e) {
      throw ConfigError(a.spec + ": " + e.what());
    }
  }
  spec.validate();
  const Corpus corpus = generate_synthetic_corpus(a.seed, spec);
  write_corpus(a.out, corpus);
  json summary{{"seed", a.seed}, {"spec", spec}};
  for (const auto& [role, docs] : corpus) summary["records"][std::string(role_name(role))] = docs.size();
  write_json(fs::path(a.out) / "spec.json", summary);
  std::cout << summary.dump() << '\n';
  return 0;
}

// ----------------------------------------------------------------- pretrain

struct PretrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> steps;
  std::string tasks;
  std::string out;
  std::optional<double> lr;
  bool resume = false;
  bool quiet = false;
};

// Keeps the header and rows up to `last_step` of an existing loss trace.
void truncate_trace(const fs::path& csv, std::uint64_t last_step) {
  std::ifstream in(csv);
  if (!in) throw ValidationError("cannot resume: " + csv.string() + " is missing");
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (keep.empty()) {
      keep.push_back(line);
      continue;
    }
    if (line.empty()) continue;
    if (std::stoull(line.substr(0, line.find(','))) <= last_step) keep.push_back(line);
  }
  in.close();
  auto out = open_out(csv);
  for (const auto& l : keep) out << l << '\n';
}

int cmd_pretrain(const PretrainArgs& a) {
  RunConfig cfg = RunConfig::load(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.steps) cfg.steps = *a.steps;
  if (!a.tasks.empty()) {
    cfg.task_set = a.tasks;
    cfg.tasks = TaskToggles::named(a.tasks);
  }
  if (!a.out.empty()) cfg.out_dir = a.out;
  if (a.lr) cfg.adam.lr = *a.lr;
  cfg.validate();

  const Corpus corpus = load_corpus(cfg);
  const Vocab vocab = cfg.vocab ? Vocab::load(*cfg.vocab) : build_vocab(corpus);
  const WordCharTokenizer tokenizer(vocab);
  cfg.model = sized_model(cfg.model, vocab);
  const RoleStores stores = prepare_stores(corpus, tokenizer, cfg.model);
  for (const auto& [role, docs] : stores) {
    for (const auto& d : docs) {
      for (const auto& w : d.warnings) std::cerr << "warning: " << w << '\n';
    }
  }

  const fs::path dir = cfg.out_dir;
  fs::create_directories(dir);
  const fs::path model_path = dir / "model.mtdm";
  const fs::path optim_path = dir / "optimizer.mtdm";
  const fs::path csv_path = dir / "loss.csv";

  std::optional<ModelState> state;
  AdamState optimizer;
  if (a.resume) {
    state.emplace(load_checkpoint(model_path));
    if (!(state->config() == cfg.model)) throw ConfigError("checkpoint model configuration differs from the config");
    optimizer = load_optimizer(optim_path);
    truncate_trace(csv_path, optimizer.step_count);
  } else {
    state.emplace(cfg.model, cfg.require_seed());
    auto out = open_out(csv_path);
    write_loss_header(out, cfg.tasks);
  }
  vocab.save(dir / "vocab.txt");
  write_json(dir / "config.json", cfg.to_json());

  const PretrainOptions options = cfg.pretrain_options();
  auto csv = open_out(csv_path, std::ios::app);
  PretrainHooks hooks;
  hooks.on_step = [&](const StepRecord& r) {
    write_loss_row(csv, r, cfg.tasks);
    csv.flush();
    if (!a.quiet && (r.step % 50 == 0 || r.step == 1)) {
      std::cerr << "step " << r.step << " total " << std::setprecision(6) << r.total << '\n';
    }
  };
  hooks.after_step = [&](std::uint64_t step, const ModelState& s, const AdamState& o) {
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
      save_checkpoint(dir / ("model-" + std::to_string(step) + ".mtdm"), s);
      save_optimizer(dir / ("optimizer-" + std::to_string(step) + ".mtdm"), o);
      save_checkpoint(model_path, s);
      save_optimizer(optim_path, o);
    }
  };
  const auto records = pretrain(*state, optimizer, stores, options, hooks);
  save_checkpoint(model_path, *state);
  save_optimizer(optim_path, optimizer);

  json summary{{"out_dir", dir.string()}, {"steps", optimizer.step_count}};
  if (!records.empty()) summary["final_total"] = records.back().total;
  std::cout << summary.dump() << '\n';
  return 0;
}

// ----------------------------------------------------------------- finetune

struct FinetuneArgs {
  std::string config;
  std::string checkpoint;
  std::string task;
  std::string out;
  std::string vocab;
  std::optional<std::uint64_t> steps;
  std::optional<std::uint64_t> epochs;
  std::optional<double> lr;
};

int cmd_finetune(const FinetuneArgs& a) {
  RunConfig cfg = RunConfig::load(a.config);
  cfg.validate();
  const Task task = task_arg(a.task);
  FinetuneConfig ft = cfg.finetune && cfg.finetune->task == task ? *cfg.finetune : FinetuneConfig::defaults(task);
  if (a.steps) {
    ft.steps = a.steps;
    ft.epochs.reset();
  }
  if (a.epochs) {
    ft.epochs = a.epochs;
    ft.steps.reset();
  }
  if (a.lr) ft.lr = *a.lr;
  if (!cfg.finetune) ft.seed = cfg.require_seed();
  ft.validate();

  ModelState state = load_checkpoint(a.checkpoint);
  const Vocab vocab = checkpoint_vocab(a.checkpoint, a.vocab);
  const WordCharTokenizer tokenizer(vocab);
  if (state.config().vocab_size != vocab.size()) throw ConfigError("vocabulary does not match the checkpoint");
  const RoleStores stores = prepare_stores(load_corpus(cfg), tokenizer, state.config());

  const fs::path dir = a.out.empty() ? cfg.out_dir / ("finetune-" + std::string(task_name(task))) : fs::path(a.out);
  fs::create_directories(dir);
  auto csv = open_out(dir / "finetune.csv");
  csv << "step,loss,lr\n" << std::setprecision(17);
  AdamState optimizer;
  finetune(state, optimizer, stores, ft, [&](const FinetuneRecord& r) {
    csv << r.step << ',' << r.loss << ',' << r.lr << '\n';
  });
  save_checkpoint(dir / "model.mtdm", state);
  vocab.save(dir / "vocab.txt");
  write_json(dir / "finetune.json", ft);
  std::cout << json{{"out_dir", dir.string()}, {"task", task_name(task)}, {"steps", optimizer.step_count}}.dump()
            << '\n';
  return 0;
}

// --------------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string task;
  std::string vocab;
  std::string report;
  std::string predictions;
};

std::vector<DocumentRecord> eval_records(const fs::path& data, Task task) {
  std::vector<DocumentRecord> docs;
  if (fs::is_regular_file(data)) {
    docs = load_jsonl(data);
  } else if (fs::is_directory(data)) {
    for (auto role : kAllRoles) {
      const auto path = data / (std::string(role_name(role)) + ".jsonl");
      if (!role_tasks(role).contains(task) || !fs::exists(path)) continue;
      auto part = load_jsonl(path);
      docs.insert(docs.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
  } else {
    throw ConfigError("data path " + data.string() + " does not exist");
  }
  std::erase_if(docs, [task](const DocumentRecord& d) { return !d.labels.supports(task); });
  if (docs.empty()) throw ConfigError("no document in " + data.string() + " carries " + std::string(task_name(task)) + " labels");
  return docs;
}

int cmd_eval(const EvalArgs& a) {
  const Task task = task_arg(a.task);
  if (task == Task::mlm) throw ConfigError("mlm has no evaluation metric");
  const ModelState state = load_checkpoint(a.checkpoint);
  const Vocab vocab = checkpoint_vocab(a.checkpoint, a.vocab);
  if (state.config().vocab_size != vocab.size()) throw ConfigError("vocabulary does not match the checkpoint");
  const WordCharTokenizer tokenizer(vocab);

  std::vector<PreparedDocument> docs;
  for (const auto& d : eval_records(a.data, task)) docs.push_back(prepare_document(d, tokenizer, state.config()));
  const EvalReport report = evaluate(state, tokenizer, docs, task);

  const json j = report;
  if (!a.report.empty()) write_json(a.report, j);
  if (!a.predictions.empty()) {
    auto out = open_out(a.predictions);
    for (const auto& row : prediction_rows(report)) out << row.dump() << '\n';
  }
  std::cout << json{{"task", report.task}, {"metric", report.metric}, {"value", report.value},
                    {"items", report.items.size()}}
                   .dump()
            << '\n';
  return 0;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  std::string config;
  std::size_t per_parameter = 2;
  double rel_tol = 1e-3;
  std::string report;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  RunConfig cfg = RunConfig::load(a.config);
  cfg.validate();
  const Corpus corpus = load_corpus(cfg);
  const Vocab vocab = cfg.vocab ? Vocab::load(*cfg.vocab) : build_vocab(corpus);
  const WordCharTokenizer tokenizer(vocab);
  cfg.model = sized_model(cfg.model, vocab);
  const RoleStores stores = prepare_stores(corpus, tokenizer, cfg.model);
  const ModelState state(cfg.model, cfg.require_seed());

  ObjectiveOptions objective;
  objective.toggles = cfg.tasks;
  objective.masking = cfg.masking;
  objective.weights = cfg.weights;
  // One sample per role keeps every head in the loss at minimal cost.
  MixtureSpec one_each;
  one_each.counts.fill(1);
  GradCheckOptions opts;
  opts.per_parameter = a.per_parameter;
  opts.rel_tol = a.rel_tol;
  opts.seed = cfg.require_seed();
  const GradCheckReport r = collective_gradcheck(state, stores, objective, one_each, cfg.require_seed(), opts);

  json j{{"passed", r.passed()},
         {"coordinates", r.entries.size()},
         {"parameters", r.parameters_covered()},
         {"failures", r.failures},
         {"rel_tol", r.rel_tol},
         {"max_rel_error", r.max_rel_error},
         {"worst_parameter", r.worst_parameter},
         {"worst_index", r.worst_index}};
  if (!a.report.empty()) {
    json full = j;
    for (const auto& e : r.entries) {
      full["entries"].push_back({{"parameter", e.parameter},
                                 {"index", e.index},
                                 {"analytic", e.analytic},
                                 {"numeric", e.numeric},
                                 {"rel_error", e.rel_error}});
    }
    write_json(a.report, full);
  }
  std::cout << j.dump() << '\n';
  if (!r.passed()) {
    std::cerr << "gradcheck failed: " << r.failures << " coordinates above " << r.rel_tol << "; worst "
              << r.worst_parameter << "[" << r.worst_index << "] rel error " << r.max_rel_error << '\n';
    return kExitNumeric;
  }
  return 0;
}

// ------------------------------------------------------------------ inspect

int cmd_inspect(const std::string& path, bool as_json) {
  const CheckpointManifest m = inspect_checkpoint(path);
  if (as_json) {
    json j{{"version", m.version}, {"tensors", m.entries.size()}, {"scalars", m.scalars}, {"digest", m.digest},
           {"trailer", m.trailer}};
    for (const auto& e : m.entries) j["entries"].push_back({{"name", e.name}, {"shape", e.shape}});
    std::cout << j.dump(2) << '\n';
    return 0;
  }
  std::ostringstream digest;
  digest << std::hex << std::setw(16) << std::setfill('0') << m.digest;
  std::cout << "format   MTDM1 v" << m.version << '\n'
            << "tensors  " << m.entries.size() << '\n'
            << "scalars  " << m.scalars << '\n'
            << "digest   " << digest.str() << '\n'
            << "trailer  " << m.trailer.dump() << '\n';
  for (const auto& e : m.entries) std::cout << "  " << e.name << ' ' << shape_string(e.shape) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mtdoc: multi-task document model"};
  app.require_subcommand(1);
  const auto tasks = task_names();

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write the synthetic corpus as one JSONL file per dataset role");
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->required();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--spec", gen.spec, "JSON file overriding the synthetic spec")->check(CLI::ExistingFile);

  PretrainArgs pre;
  auto* pre_cmd = app.add_subcommand("pretrain", "Collective multi-task pre-training");
  pre_cmd->add_option("--config", pre.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  pre_cmd->add_option("--seed", pre.seed, "Override the config seed");
  pre_cmd->add_option("--steps", pre.steps, "Override the step count");
  pre_cmd->add_option("--tasks", pre.tasks, "Named task set")
      ->check(CLI::IsMember({"mlm", "ablation1", "ablation2", "full"}));
  pre_cmd->add_option("--out", pre.out, "Override the output directory");
  pre_cmd->add_option("--lr", pre.lr, "Override the learning rate");
  pre_cmd->add_flag("--resume", pre.resume, "Continue from <out>/model.mtdm and optimizer.mtdm");
  pre_cmd->add_flag("--quiet", pre.quiet, "No progress lines");

  FinetuneArgs ft;
  auto* ft_cmd = app.add_subcommand("finetune", "Single-task fine-tuning from a checkpoint");
  ft_cmd->add_option("--config", ft.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  ft_cmd->add_option("--checkpoint", ft.checkpoint, "Pre-trained model")->required()->check(CLI::ExistingFile);
  ft_cmd->add_option("--task", ft.task, "Task to train")->required()->check(CLI::IsMember(tasks));
  ft_cmd->add_option("--out", ft.out, "Output directory");
  ft_cmd->add_option("--vocab", ft.vocab, "Vocabulary (default: next to the checkpoint)");
  auto* ft_steps = ft_cmd->add_option("--steps", ft.steps, "Override the step count");
  ft_cmd->add_option("--epochs", ft.epochs, "Override with an epoch count")->excludes(ft_steps);
  ft_cmd->add_option("--lr", ft.lr, "Override the learning rate");

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on labelled documents (read-only)");
  ev_cmd->add_option("--checkpoint", ev.checkpoint, "Model to evaluate")->required()->check(CLI::ExistingFile);
  ev_cmd->add_option("--data", ev.data, "JSONL file or directory of <role>.jsonl files")->required();
  ev_cmd->add_option("--task", ev.task, "Task to score")->required()->check(CLI::IsMember(tasks));
  ev_cmd->add_option("--vocab", ev.vocab, "Vocabulary (default: next to the checkpoint)");
  ev_cmd->add_option("--report", ev.report, "Write the full JSON report here");
  ev_cmd->add_option("--predictions", ev.predictions, "Write per-item predictions (JSONL) here");

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the collective loss gradient");
  gc_cmd->add_option("--config", gc.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  gc_cmd->add_option("--per-parameter", gc.per_parameter, "Coordinates sampled per parameter tensor");
  gc_cmd->add_option("--rel-tol", gc.rel_tol, "Relative tolerance");
  gc_cmd->add_option("--report", gc.report, "Write every checked coordinate (JSON) here");

  std::string inspect_path;
  bool inspect_json = false;
  auto* in_cmd = app.add_subcommand("inspect", "Print a checkpoint manifest");
  in_cmd->add_option("checkpoint", inspect_path, "Checkpoint or optimizer file")->required()->check(CLI::ExistingFile);
  in_cmd->add_flag("--json", inspect_json, "Machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    thread_cap();
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*pre_cmd) return cmd_pretrain(pre);
    if (*ft_cmd) return cmd_finetune(ft);
    if (*ev_cmd) return cmd_eval(ev);
    if (*gc_cmd) return cmd_gradcheck(gc);
    if (*in_cmd) return cmd_inspect(inspect_path, inspect_json);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const IndexError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitOther;
  }
  return kExitOther;
}
