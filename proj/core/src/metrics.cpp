#include "mtdoc/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "mtdoc/error.hpp"
#include "mtdoc/tokenizer.hpp"

namespace mtdoc {

std::size_t levenshtein(std::string_view a, std::string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> row(b.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

std::string normalize_answer(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return to_lower(s.substr(first, last - first + 1));
}

double anls_item(std::string_view pred, std::span<const std::string> golds, double tau) {
  if (golds.empty()) throw ContractError("anls: an item has no gold answers");
  const std::string p = normalize_answer(pred);
  double best = 0.0;
  for (const auto& g : golds) {
    const std::string gn = normalize_answer(g);
    const double denom = static_cast<double>(std::max({p.size(), gn.size(), std::size_t{1}}));
    const double nl = static_cast<double>(levenshtein(p, gn)) / denom;
    best = std::max(best, nl <= tau ? 1.0 - nl : 0.0);
  }
  return best;
}

double anls(std::span<const std::string> preds, std::span<const std::vector<std::string>> golds, double tau) {
  if (preds.empty()) throw ContractError("anls: no items");
  if (preds.size() != golds.size()) throw ContractError("anls: predictions and golds differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) total += anls_item(preds[i], golds[i], tau);
  return total / static_cast<double>(preds.size());
}

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> golds) {
  if (preds.empty()) throw ContractError("accuracy: no items");
  if (preds.size() != golds.size()) throw ContractError("accuracy: predictions and golds differ in length");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == golds[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double F1Counts::precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp); }
double F1Counts::recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn); }

double F1Counts::f1() const {
  // 2PR / (P + R) written over counts so exact cases stay exact.
  const std::size_t denom = 2 * tp + fp + fn;
  return tp == 0 || denom == 0 ? 0.0 : static_cast<double>(2 * tp) / static_cast<double>(denom);
}

F1Counts entity_counts(std::span<const EntityMap> preds, std::span<const EntityMap> golds) {
  if (preds.size() != golds.size()) throw ContractError("entity_f1: predictions and golds differ in length");
  F1Counts c;
  for (std::size_t d = 0; d < golds.size(); ++d) {
    for (const auto& [key, value] : golds[d]) {
      const auto it = preds[d].find(key);
      if (it != preds[d].end() && normalize_answer(it->second) == normalize_answer(value)) {
        ++c.tp;
      } else {
        ++c.fn;
      }
    }
    for (const auto& [key, value] : preds[d]) {
      const auto it = golds[d].find(key);
      if (it == golds[d].end() || normalize_answer(it->second) != normalize_answer(value)) ++c.fp;
    }
  }
  return c;
}

double entity_f1(std::span<const EntityMap> preds, std::span<const EntityMap> golds) {
  return entity_counts(preds, golds).f1();
}

}  // namespace mtdoc
