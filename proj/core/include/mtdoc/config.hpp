#pragma once

// Run configuration shared by the command-line tools, plus the corpus and
// vocabulary plumbing every command needs.

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>

#include "mtdoc/finetune.hpp"
#include "mtdoc/model.hpp"
#include "mtdoc/pretraining.hpp"
#include "mtdoc/synthetic.hpp"
#include "mtdoc/tokenizer.hpp"

namespace mtdoc {

struct DataConfig {
  // Directory of <role>.jsonl files; otherwise a synthetic corpus is generated.
  std::optional<std::filesystem::path> dir;
  SyntheticSpec synthetic;
  std::optional<std::uint64_t> synthetic_seed;  // defaults to the run seed
};

struct RunConfig {
  std::optional<std::uint64_t> seed;
  ModelConfig model;
  std::optional<std::filesystem::path> vocab;
  DataConfig data;
  MixtureSpec mixture;
  std::string task_set = "full";  // name, or "custom" when listed explicitly
  TaskToggles tasks;
  MaskingOptions masking;
  std::array<double, 7> weights = {1, 1, 1, 1, 1, 1, 1};
  AdamHyperparams adam;
  double warmup_ratio = 0.0;
  bool linear_decay = false;
  double clip_norm = 0.0;
  std::uint64_t steps = 2000;
  std::uint64_t checkpoint_every = 0;  // 0 = final checkpoint only
  std::filesystem::path out_dir = "run";
  double stop_below = 0.0;
  std::size_t stop_window = 20;
  std::optional<FinetuneConfig> finetune;

  // Unknown keys and malformed values raise ConfigError. Relative paths are
  // resolved against `base_dir`.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  // Seed present, paths exist, sub-configurations consistent.
  void validate() const;
  std::uint64_t require_seed() const;
  PretrainOptions pretrain_options() const;
};

// Reads <dir>/<role>.jsonl for every role present, or generates the
// synthetic corpus.
Corpus load_corpus(const RunConfig& config);
// Writes one JSONL file per role with pixel sidecars under <dir>/pixels.
void write_corpus(const std::filesystem::path& dir, const Corpus& corpus);

// Every line, relation key/value, question and answer in the corpus.
std::vector<std::string> corpus_texts(const Corpus& corpus);
Vocab build_vocab(const Corpus& corpus);

RoleStores prepare_stores(const Corpus& corpus, const Tokenizer& tokenizer, const ModelConfig& model);

// Thread cap from MTDOC_THREADS (default 1); malformed values raise ConfigError.
std::size_t thread_cap();

}  // namespace mtdoc
