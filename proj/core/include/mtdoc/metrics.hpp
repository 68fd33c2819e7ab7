#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mtdoc {

// Unit-cost insert/delete/substitute distance over bytes.
std::size_t levenshtein(std::string_view a, std::string_view b);

// Lowercase and trim surrounding whitespace.
std::string normalize_answer(std::string_view s);

inline constexpr double kAnlsThreshold = 0.5;

// max over golds of (1 - NL) when NL <= tau, else 0, with
// NL = levenshtein / max(|p|, |g|, 1) on normalized strings.
double anls_item(std::string_view pred, std::span<const std::string> golds, double tau = kAnlsThreshold);
// Mean of anls_item. Empty input or an empty gold set raises ContractError.
double anls(std::span<const std::string> preds, std::span<const std::vector<std::string>> golds,
            double tau = kAnlsThreshold);

// Fraction of equal pairs. Empty or unequal-length input raises ContractError.
double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> golds);

struct F1Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision() const;
  double recall() const;
  double f1() const;
};

using EntityMap = std::map<std::string, std::string>;

// Micro counts over (doc, key) entities; a predicted entity is a true
// positive when its key is gold and the normalized values agree.
F1Counts entity_counts(std::span<const EntityMap> preds, std::span<const EntityMap> golds);
double entity_f1(std::span<const EntityMap> preds, std::span<const EntityMap> golds);

}  // namespace mtdoc
