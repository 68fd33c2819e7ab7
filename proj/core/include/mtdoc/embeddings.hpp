#pragma once

// Input vectors of the backbone. A text token contributes
//   word[id] + box(x1,y1,x2,y2) + seq[seqid]
// and an image patch contributes
//   patch_projection * pixels + bias + box(patch rectangle) + seq[0],
// where box() concatenates four learned per-coordinate tables of width d/4.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mtdoc/docdata.hpp"
#include "mtdoc/model.hpp"
#include "mtdoc/tokenizer.hpp"

namespace mtdoc {

// Patch rows with all-zero (blank) patches removed; projecting them only
// contributes the bias, so they are mapped to a shared zero row.
struct CompactPatches {
  Tensor values;                   // non-blank patches x patch_dim
  std::vector<std::size_t> row;    // per patch: its row in values, or values.rows() if blank
};

CompactPatches compact_patches(const Tensor& patch_matrix);

// A document tokenized and patchified once, with its task targets as ids.
struct PreparedDocument {
  struct Relation {
    std::string key;
    std::string value;
    std::vector<TokenInstance> query;
    std::vector<TokenId> target;
  };
  struct Question {
    std::string question;
    std::vector<std::string> answers;
    std::vector<TokenInstance> query;
    std::vector<TokenId> target;  // first answer
  };

  std::string id;
  std::vector<TokenInstance> tokens;     // document order, possibly truncated
  std::vector<std::size_t> token_line;   // source line of each token
  PatchGrid patches;                     // possibly truncated
  Tensor patch_matrix;                   // patches x patch_dim, constant
  CompactPatches compact;                // same rows with blank patches folded
  TaskLabels labels;
  std::vector<SegmentBox> segment_boxes;
  std::vector<std::size_t> segment_categories;
  std::vector<std::size_t> reading_order;  // segment indices by rank
  std::vector<std::string> segment_texts;
  std::vector<std::vector<TokenId>> segment_targets;
  std::vector<Relation> relations;
  std::vector<Question> questions;
  std::vector<std::string> warnings;
};

PreparedDocument prepare_document(const DocumentRecord& doc, const Tokenizer& tokenizer, const ModelConfig& config);

enum class PositionKind : std::uint8_t { text, patch, pad };

struct PositionInfo {
  PositionKind kind = PositionKind::text;
  std::size_t source = 0;  // token or patch index
  TokenId id = special::kPad;
  SegmentBox box;
  int seqid = 0;
};

struct AssembledInput {
  Tensor embeddings;                     // n x d
  std::vector<std::uint8_t> key_valid;   // 0 for PAD positions
  std::vector<PositionInfo> positions;
  std::size_t text_count = 0;
  std::size_t patch_count = 0;
  std::vector<std::string> warnings;
};

// Concatenated coordinate embeddings, one row per box. Coordinates outside
// [0, 512] raise IndexError.
Tensor encode_box(const ModelState& state, std::span<const SegmentBox> boxes);
Tensor encode_box(const ModelState& state, const SegmentBox& box);

// One row per token.
Tensor embed_text_tokens(const ModelState& state, std::span<const TokenInstance> tokens);

// One row per patch; patch_matrix is count x patch_dim.
Tensor embed_patches(const ModelState& state, const Tensor& patch_matrix, std::span<const SegmentBox> boxes);
Tensor embed_patches(const ModelState& state, const CompactPatches& patches, std::span<const SegmentBox> boxes);
Tensor embed_patch(const ModelState& state, std::span<const double> patch, const SegmentBox& box);

// Text tokens (document order) then patches, then `pad_to - n` masked PAD
// positions when pad_to exceeds the natural length. `token_ids`, when given,
// replaces the token ids (MLM corruption) position for position.
AssembledInput assemble_input(const ModelState& state, const PreparedDocument& doc,
                              std::span<const TokenId> token_ids = {}, std::size_t pad_to = 0);

}  // namespace mtdoc
