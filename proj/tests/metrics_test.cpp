#include <gtest/gtest.h>

#include <algorithm>
#include <functional>

#include "mtdoc/error.hpp"
#include "mtdoc/metrics.hpp"
#include "mtdoc/rng.hpp"

using namespace mtdoc;

namespace {

// Plain recursive definition; exponential, so only for short strings.
std::size_t edit_oracle(std::string_view a, std::string_view b) {
  if (a.empty()) return b.size();
  if (b.empty()) return a.size();
  const std::size_t sub = edit_oracle(a.substr(1), b.substr(1)) + (a[0] == b[0] ? 0 : 1);
  return std::min({sub, edit_oracle(a.substr(1), b) + 1, edit_oracle(a, b.substr(1)) + 1});
}

std::vector<std::string> all_strings(const std::string& alphabet, std::size_t max_len) {
  std::vector<std::string> out = {""};
  for (std::size_t begin = 0, len = 0; len < max_len; ++len) {
    const std::size_t end = out.size();
    for (std::size_t i = begin; i < end; ++i)
      for (char c : alphabet) out.push_back(out[i] + c);
    begin = end;
  }
  return out;
}

std::string random_string(Rng& rng, std::size_t max_len) {
  std::string s(rng.uniform_index(max_len + 1), ' ');
  for (auto& c : s) c = static_cast<char>('a' + rng.uniform_index(4));
  return s;
}

}  // namespace

TEST(Levenshtein, KnownPairs) {
  EXPECT_EQ(levenshtein("kitten", "sitting"), 3u);
  EXPECT_EQ(levenshtein("", ""), 0u);
  EXPECT_EQ(levenshtein("", "abc"), 3u);
  EXPECT_EQ(levenshtein("flaw", "lawn"), 2u);
}

TEST(Levenshtein, ExhaustiveAgainstRecursiveOracle) {
  // Every pair over {a, b} up to length 4, plus {a, b, c} up to length 3.
  for (const auto& [alphabet, len] : {std::pair<std::string, std::size_t>{"ab", 4}, {"abc", 3}}) {
    const auto strings = all_strings(alphabet, len);
    for (const auto& a : strings)
      for (const auto& b : strings) ASSERT_EQ(levenshtein(a, b), edit_oracle(a, b)) << a << " / " << b;
  }
}

TEST(Levenshtein, RandomPairsAgainstOracleProperty) {
  Rng rng(31);
  for (int i = 0; i < 300; ++i) {
    const auto a = random_string(rng, 6), b = random_string(rng, 6);
    ASSERT_EQ(levenshtein(a, b), edit_oracle(a, b)) << a << " / " << b;
  }
}

TEST(Levenshtein, MetricAxiomsProperty) {
  Rng rng(32);
  for (int i = 0; i < 500; ++i) {
    const auto a = random_string(rng, 12), b = random_string(rng, 12), c = random_string(rng, 12);
    EXPECT_EQ(levenshtein(a, b), levenshtein(b, a));
    EXPECT_EQ(levenshtein(a, a), 0u);
    EXPECT_LE(levenshtein(a, c), levenshtein(a, b) + levenshtein(b, c));
    EXPECT_LE(levenshtein(a, b), std::max(a.size(), b.size()));
  }
}

TEST(Anls, ItemScores) {
  const std::vector<std::string> hallo = {"hallo"};
  EXPECT_DOUBLE_EQ(anls_item("hello", hallo), 0.8);
  EXPECT_DOUBLE_EQ(anls_item("  HALLO ", hallo), 1.0);
  // NL = 3/5 is above the threshold, 2/4 sits exactly on it.
  EXPECT_EQ(anls_item("hxxxo", hallo), 0.0);
  EXPECT_DOUBLE_EQ(anls_item("abcd", std::vector<std::string>{"abxy"}), 0.5);
  EXPECT_EQ(anls_item("", std::vector<std::string>{""}), 1.0);
  // Best gold wins.
  EXPECT_DOUBLE_EQ(anls_item("hello", std::vector<std::string>{"zzzzz", "hello"}), 1.0);
}

TEST(Anls, MeanAndContracts) {
  const std::vector<std::string> preds = {"hello", "world"};
  const std::vector<std::vector<std::string>> golds = {{"hallo"}, {"world"}};
  EXPECT_DOUBLE_EQ(anls(preds, golds), 0.9);
  EXPECT_THROW(anls(std::vector<std::string>{}, std::vector<std::vector<std::string>>{}), ContractError);
  EXPECT_THROW(anls(preds, std::vector<std::vector<std::string>>{{"x"}}), ContractError);
  EXPECT_THROW(anls(preds, std::vector<std::vector<std::string>>{{"x"}, {}}), ContractError);
}

TEST(Accuracy, Fraction) {
  const std::vector<std::size_t> p = {1, 2, 3, 4}, g = {1, 0, 3, 0};
  EXPECT_DOUBLE_EQ(accuracy(p, g), 0.5);
  EXPECT_THROW(accuracy(std::vector<std::size_t>{}, std::vector<std::size_t>{}), ContractError);
  EXPECT_THROW(accuracy(p, std::vector<std::size_t>{1}), ContractError);
}

TEST(EntityF1, TwoOfThree) {
  const std::vector<EntityMap> golds = {{{"a", "1"}, {"b", "2"}, {"c", "3"}}};
  const std::vector<EntityMap> preds = {{{"a", "1"}, {"b", " 2 "}, {"d", "4"}}};
  const F1Counts c = entity_counts(preds, golds);
  EXPECT_EQ(c.tp, 2u);
  EXPECT_EQ(c.fp, 1u);
  EXPECT_EQ(c.fn, 1u);
  EXPECT_EQ(entity_f1(preds, golds), 2.0 / 3.0);
}

TEST(EntityF1, OneHitOneMiss) {
  const std::vector<EntityMap> golds = {{{"date", "2020"}, {"total", "12"}}}, preds = {{{"date", "2020"}}};
  const F1Counts c = entity_counts(preds, golds);
  EXPECT_EQ(c.tp, 1u);
  EXPECT_EQ(c.fp, 0u);
  EXPECT_EQ(c.fn, 1u);
  EXPECT_EQ(entity_f1(preds, golds), 2.0 / 3.0);
}

TEST(EntityF1, WrongValueIsBothFalsePositiveAndNegative) {
  const std::vector<EntityMap> golds = {{{"a", "1"}}}, preds = {{{"a", "2"}}};
  const F1Counts c = entity_counts(preds, golds);
  EXPECT_EQ(c.tp, 0u);
  EXPECT_EQ(c.fp, 1u);
  EXPECT_EQ(c.fn, 1u);
  EXPECT_EQ(entity_f1(preds, golds), 0.0);
}

TEST(EntityF1, ExactAndEmpty) {
  const std::vector<EntityMap> golds = {{{"a", "x"}}, {{"b", "y"}}};
  EXPECT_EQ(entity_f1(golds, golds), 1.0);
  const std::vector<EntityMap> none(2);
  EXPECT_EQ(entity_f1(none, golds), 0.0);
  EXPECT_THROW(entity_f1(none, std::vector<EntityMap>(1)), ContractError);
}

TEST(EntityF1, DocumentOrderDoesNotMatterProperty) {
  Rng rng(33);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<EntityMap> golds(5), preds(5);
    for (std::size_t d = 0; d < 5; ++d) {
      for (int k = 0; k < 4; ++k) {
        const std::string key = "k" + std::to_string(k);
        if (rng.bernoulli(0.7)) golds[d][key] = std::to_string(rng.uniform_index(3));
        if (rng.bernoulli(0.7)) preds[d][key] = std::to_string(rng.uniform_index(3));
      }
    }
    const double f = entity_f1(preds, golds);
    std::vector<std::size_t> perm = {4, 2, 0, 3, 1};
    std::vector<EntityMap> gp, pp;
    for (auto i : perm) {
      gp.push_back(golds[i]);
      pp.push_back(preds[i]);
    }
    EXPECT_EQ(entity_f1(pp, gp), f);
    EXPECT_GE(f, 0.0);
    EXPECT_LE(f, 1.0);
  }
}
