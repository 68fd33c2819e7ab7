#pragma once

// Synthetic stand-ins for the seven pre-training corpora.
//
// classification  keyword line naming the class plus a watermark block whose
//                 intensity encodes the class
// relations_a..d  key line followed by its value line, one pair per key
// vqa             "key value" fact lines with "what is the <key>" questions
// layout          two columns of categorized segments; reading order runs
//                 down the left column, then down the right one

#include <array>
#include <cstdint>
#include <map>
#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <set>
#include <string_view>
#include <vector>

#include "mtdoc/docdata.hpp"

namespace mtdoc {

enum class DatasetRole { classification, relations_a, relations_b, relations_c, relations_d, vqa, layout };
inline constexpr std::size_t kRoleCount = 7;
inline constexpr std::array<DatasetRole, kRoleCount> kAllRoles = {
    DatasetRole::classification, DatasetRole::relations_a, DatasetRole::relations_b, DatasetRole::relations_c,
    DatasetRole::relations_d,    DatasetRole::vqa,         DatasetRole::layout};

std::string_view role_name(DatasetRole role);
std::optional<DatasetRole> parse_role(std::string_view name);
// Tasks a record of this role supports (MLM always included).
std::set<Task> role_tasks(DatasetRole role);
// Relation keys used by a relations_* role.
std::vector<std::string> role_relation_keys(DatasetRole role);

struct SyntheticSpec {
  std::array<std::size_t, kRoleCount> counts = {8, 8, 8, 8, 8, 8, 8};
  std::size_t filler_words = 40;
  int num_classes = 16;
  int width = 256;  // a 256 x 32 page resizes to 512 x 64: a 16 x 2 patch grid
  int height = 32;
  int channels = 1;

  void validate() const;
  bool operator==(const SyntheticSpec&) const = default;
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);

using Corpus = std::map<DatasetRole, std::vector<DocumentRecord>>;

Corpus generate_synthetic_corpus(std::uint64_t seed, const SyntheticSpec& spec);

double watermark_intensity(int doc_class);
// Watermark rectangle in original pixels, [x1, x2) x [y1, y2); it covers the
// top-left patch of the resized page with margin to spare.
PixelBox watermark_box(int width, int height);

std::vector<std::string> class_keywords(int num_classes);

}  // namespace mtdoc
