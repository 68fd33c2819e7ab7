#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "mtdoc/config.hpp"
#include "mtdoc/error.hpp"
#include "support.hpp"

using namespace mtdoc;
using nlohmann::json;

TEST(RunConfig, UnknownKeysAreRejected) {
  EXPECT_THROW(RunConfig::from_json(json{{"seed", 1}, {"sede", 2}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json{{"seed", 1}, {"model", {{"width", 8}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json{{"seed", 1}, {"optimizer", {{"momentum", 0.9}}}}), ConfigError);
}

TEST(RunConfig, MalformedValuesAreConfigErrors) {
  EXPECT_THROW(RunConfig::from_json(json{{"seed", "one"}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json{{"seed", 1}, {"mixture", {{"nowhere", 3}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json{{"seed", 1}, {"tasks", "most"}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json{{"seed", 1}, {"tasks", {"mlm", "ocr"}}}), ConfigError);
}

TEST(RunConfig, SeedIsRequired) {
  const RunConfig c = RunConfig::from_json(json{{"steps", 3}});
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(c.pretrain_options(), ConfigError);
  EXPECT_NO_THROW(RunConfig::from_json(json{{"seed", 0}}).validate());
}

TEST(RunConfig, TaskSelection) {
  const auto named = RunConfig::from_json(json{{"seed", 1}, {"tasks", "ablation2"}});
  EXPECT_EQ(named.task_set, "ablation2");
  EXPECT_EQ(named.tasks, TaskToggles::named("ablation2"));
  const auto listed = RunConfig::from_json(json{{"seed", 1}, {"tasks", {"mlm", "roils"}}});
  EXPECT_EQ(listed.task_set, "custom");
  EXPECT_EQ(listed.tasks.enabled_tasks(), (std::vector<Task>{Task::mlm, Task::roils}));
  EXPECT_THROW(RunConfig::from_json(json{{"seed", 1}, {"tasks", {"dc"}}}).validate(), ConfigError);
}

TEST(RunConfig, RelativePathsResolveAgainstConfigFile) {
  const auto dir = mtdoc::testing::scratch_dir("config_paths");
  std::filesystem::create_directories(dir / "data");
  {
    std::ofstream out(dir / "run.json");
    out << json{{"seed", 5}, {"out_dir", "runs/a"}, {"data", {{"dir", "data"}}}}.dump();
  }
  const RunConfig c = RunConfig::load(dir / "run.json");
  EXPECT_EQ(c.out_dir, dir / "runs/a");
  EXPECT_EQ(*c.data.dir, dir / "data");
  EXPECT_NO_THROW(c.validate());
  const RunConfig missing = RunConfig::from_json(json{{"seed", 5}, {"data", {{"dir", "nope"}}}}, dir);
  EXPECT_THROW(missing.validate(), ConfigError);
}

TEST(RunConfig, ParseErrorsAreConfigErrors) {
  const auto dir = mtdoc::testing::scratch_dir("config_parse");
  {
    std::ofstream out(dir / "bad.json");
    out << "{\"seed\": ";
  }
  EXPECT_THROW(RunConfig::load(dir / "bad.json"), ConfigError);
  EXPECT_THROW(RunConfig::load(dir / "absent.json"), ConfigError);
}

TEST(RunConfig, JsonRoundTrip) {
  const RunConfig a = RunConfig::from_json(
      json{{"seed", 9}, {"steps", 40}, {"tasks", "ablation1"}, {"optimizer", {{"lr", 2e-3}, {"warmup_ratio", 0.1}}}});
  const RunConfig b = RunConfig::from_json(a.to_json());
  EXPECT_EQ(b.seed, a.seed);
  EXPECT_EQ(b.steps, 40u);
  EXPECT_EQ(b.tasks, a.tasks);
  EXPECT_EQ(b.adam.lr, 2e-3);
  EXPECT_EQ(b.warmup_ratio, 0.1);
  EXPECT_EQ(b.model, a.model);
}

TEST(RunConfig, PretrainOptionsCarrySchedule) {
  const auto c = RunConfig::from_json(
      json{{"seed", 9}, {"steps", 40}, {"optimizer", {{"lr", 2e-3}, {"warmup_ratio", 0.1}, {"linear_decay", true}}}});
  const PretrainOptions o = c.pretrain_options();
  EXPECT_EQ(o.seed, 9u);
  EXPECT_EQ(o.lr.total_steps, 40u);
  EXPECT_EQ(o.lr.warmup_steps(), 4u);
  EXPECT_TRUE(o.lr.linear_decay);
}

TEST(ThreadCap, ReadsEnvironment) {
  unsetenv("MTDOC_THREADS");
  EXPECT_EQ(thread_cap(), 1u);
  setenv("MTDOC_THREADS", "3", 1);
  EXPECT_EQ(thread_cap(), 3u);
  setenv("MTDOC_THREADS", "two", 1);
  EXPECT_THROW(thread_cap(), ConfigError);
  setenv("MTDOC_THREADS", "0", 1);
  EXPECT_THROW(thread_cap(), ConfigError);
  unsetenv("MTDOC_THREADS");
}

TEST(Corpus, SyntheticByDefaultAndFromDirectory) {
  const auto dir = mtdoc::testing::scratch_dir("config_corpus");
  RunConfig c = RunConfig::from_json(json{{"seed", 2}});
  c.data.synthetic.counts.fill(2);
  const Corpus generated = load_corpus(c);
  EXPECT_EQ(generated.size(), kRoleCount);
  write_corpus(dir, generated);
  c.data.dir = dir;
  const Corpus loaded = load_corpus(c);
  ASSERT_EQ(loaded.size(), kRoleCount);
  EXPECT_EQ(build_vocab(loaded), build_vocab(generated));
  c.data.dir = mtdoc::testing::scratch_dir("config_corpus_empty");
  EXPECT_THROW(load_corpus(c), ConfigError);
}
