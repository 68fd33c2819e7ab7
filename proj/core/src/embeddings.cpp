#include "mtdoc/embeddings.hpp"

#include <algorithm>
#include <array>

#include "mtdoc/error.hpp"

namespace mtdoc {

namespace {

std::size_t coord_index(int v, const char* name) {
  if (v < 0 || v > kCanonicalSide) {
    throw IndexError(std::string("box coordinate ") + name + "=" + std::to_string(v) + " outside [0, 512]");
  }
  return static_cast<std::size_t>(v);
}

std::size_t seq_index(int seqid) {
  if (seqid < 0 || seqid > kMaxSeqId) {
    throw IndexError("seqid " + std::to_string(seqid) + " outside [0, 512]");
  }
  return static_cast<std::size_t>(seqid);
}

std::vector<TokenInstance> query_tokens(const Tokenizer& tokenizer, std::string_view text) {
  return tokenize_line(tokenizer, text, SegmentBox::null());
}

}  // namespace

PreparedDocument prepare_document(const DocumentRecord& doc, const Tokenizer& tokenizer, const ModelConfig& config) {
  PreparedDocument p;
  p.id = doc.id;
  for (std::size_t li = 0; li < doc.lines.size(); ++li) {
    for (const auto& t : tokenize_line(tokenizer, doc.lines[li].text, doc.lines[li].box)) {
      p.tokens.push_back(t);
      p.token_line.push_back(li);
    }
  }
  if (p.tokens.size() > config.max_text_tokens) {
    p.warnings.push_back(doc.id + ": " + std::to_string(p.tokens.size()) + " text tokens truncated to " +
                         std::to_string(config.max_text_tokens));
    p.tokens.resize(config.max_text_tokens);
    p.token_line.resize(config.max_text_tokens);
  }

  p.patches = resize_and_patchify(doc.pixels, doc.width, doc.height, doc.channels);
  if (static_cast<std::size_t>(p.patches.channels) != static_cast<std::size_t>(config.channels)) {
    throw ValidationError(doc.id + ": image has " + std::to_string(p.patches.channels) +
                          " channels, model expects " + std::to_string(config.channels));
  }
  std::size_t keep = std::min(p.patches.count(), config.max_patches);
  if (config.global_pos) {
    const std::size_t room = config.max_positions > p.tokens.size() ? config.max_positions - p.tokens.size() : 0;
    if (room == 0) {
      p.warnings.push_back(doc.id + ": text fills every global position; tokens truncated");
      p.tokens.resize(config.max_positions);
      p.token_line.resize(config.max_positions);
    }
    keep = std::min(keep, room);
  }
  if (keep < p.patches.count()) {
    p.warnings.push_back(doc.id + ": " + std::to_string(p.patches.count()) + " patches truncated to " +
                         std::to_string(keep));
    p.patches.boxes.resize(keep);
    p.patches.values.resize(keep * p.patches.patch_dim());
  }
  p.patch_matrix = Tensor::from_data({p.patches.count(), p.patches.patch_dim()}, p.patches.values);
  p.compact = compact_patches(p.patch_matrix);

  p.labels = doc.labels;
  for (const auto& s : doc.segments) {
    p.segment_boxes.push_back(s.box);
    p.segment_categories.push_back(static_cast<std::size_t>(s.category));
    p.segment_texts.push_back(doc.segment_text(s));
    p.segment_targets.push_back(tokenizer.encode(p.segment_texts.back()));
  }
  p.reading_order = doc.reading_order();
  if (doc.labels.relations) {
    for (const auto& [key, value] : *doc.labels.relations) {
      p.relations.push_back({key, value, query_tokens(tokenizer, key), tokenizer.encode(value)});
    }
  }
  if (doc.labels.qa) {
    for (const auto& qa : *doc.labels.qa) {
      p.questions.push_back({qa.question, qa.answers, query_tokens(tokenizer, qa.question),
                             qa.answers.empty() ? std::vector<TokenId>{} : tokenizer.encode(qa.answers.front())});
    }
  }
  return p;
}

Tensor encode_box(const ModelState& state, std::span<const SegmentBox> boxes) {
  std::array<std::vector<std::size_t>, 4> idx;
  for (auto& v : idx) v.reserve(boxes.size());
  for (const auto& b : boxes) {
    idx[0].push_back(coord_index(b.x1, "x1"));
    idx[1].push_back(coord_index(b.y1, "y1"));
    idx[2].push_back(coord_index(b.x2, "x2"));
    idx[3].push_back(coord_index(b.y2, "y2"));
  }
  const std::array<Tensor, 4> parts = {gather_rows(state.param("embed.coord_x1"), idx[0]),
                                       gather_rows(state.param("embed.coord_y1"), idx[1]),
                                       gather_rows(state.param("embed.coord_x2"), idx[2]),
                                       gather_rows(state.param("embed.coord_y2"), idx[3])};
  return concat_cols(parts);
}

Tensor encode_box(const ModelState& state, const SegmentBox& box) { return encode_box(state, std::span(&box, 1)); }

Tensor embed_text_tokens(const ModelState& state, std::span<const TokenInstance> tokens) {
  std::vector<std::size_t> ids, seq;
  std::vector<SegmentBox> boxes;
  ids.reserve(tokens.size());
  seq.reserve(tokens.size());
  boxes.reserve(tokens.size());
  for (const auto& t : tokens) {
    ids.push_back(t.id);
    seq.push_back(seq_index(t.seqid));
    boxes.push_back(t.box);
  }
  const Tensor word = gather_rows(state.param("embed.word"), ids);
  return add(add(word, encode_box(state, boxes)), gather_rows(state.param("embed.seq"), seq));
}

CompactPatches compact_patches(const Tensor& patch_matrix) {
  const std::size_t n = patch_matrix.rows(), dim = patch_matrix.cols();
  const auto v = patch_matrix.data();
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = v.subspan(i * dim, dim);
    if (std::any_of(row.begin(), row.end(), [](double x) { return x != 0.0; })) keep.push_back(i);
  }
  CompactPatches out;
  out.row.assign(n, keep.size());
  std::vector<double> values;
  values.reserve(keep.size() * dim);
  for (std::size_t r = 0; r < keep.size(); ++r) {
    out.row[keep[r]] = r;
    const auto row = v.subspan(keep[r] * dim, dim);
    values.insert(values.end(), row.begin(), row.end());
  }
  if (keep.empty()) {
    // Tensors cannot be empty; a single zero row projects to zero like the blank row.
    out.values = Tensor::zeros({1, dim});
    out.row.assign(n, 1);
    return out;
  }
  out.values = Tensor::from_data({keep.size(), dim}, std::move(values));
  return out;
}

Tensor embed_patches(const ModelState& state, const CompactPatches& patches, std::span<const SegmentBox> boxes) {
  if (patches.row.size() != boxes.size() || patches.values.cols() != state.config().patch_dim()) {
    throw DimensionError("patch matrix " + shape_string(patches.values.shape()) + " does not match " +
                         std::to_string(boxes.size()) + " patches of length " +
                         std::to_string(state.config().patch_dim()));
  }
  const Linear proj = linear_at(state, "embed.patch");
  const std::size_t d = state.config().d;
  Tensor visual;
  if (patches.values.rows() == boxes.size()) {
    visual = matmul(patches.values, proj.weight);
  } else {
    std::vector<Tensor> parts;
    if (patches.values.rows() > 0) parts.push_back(matmul(patches.values, proj.weight));
    parts.push_back(Tensor::zeros({1, d}));
    visual = gather_rows(concat_rows(parts), patches.row);
  }
  visual = add_bias(visual, proj.bias);
  const std::vector<std::size_t> zeros(boxes.size(), 0);
  return add(add(visual, encode_box(state, boxes)), gather_rows(state.param("embed.seq"), zeros));
}

Tensor embed_patches(const ModelState& state, const Tensor& patch_matrix, std::span<const SegmentBox> boxes) {
  if (patch_matrix.rank() != 2 || patch_matrix.rows() != boxes.size() ||
      patch_matrix.cols() != state.config().patch_dim()) {
    throw DimensionError("patch matrix " + shape_string(patch_matrix.shape()) + " does not match " +
                         std::to_string(boxes.size()) + " patches of length " +
                         std::to_string(state.config().patch_dim()));
  }
  return embed_patches(state, compact_patches(patch_matrix), boxes);
}

Tensor embed_patch(const ModelState& state, std::span<const double> patch, const SegmentBox& box) {
  if (patch.size() != state.config().patch_dim()) {
    throw DimensionError("patch has " + std::to_string(patch.size()) + " values, expected " +
                         std::to_string(state.config().patch_dim()));
  }
  const Tensor m = Tensor::from_data({1, patch.size()}, std::vector<double>(patch.begin(), patch.end()));
  return embed_patches(state, m, std::span(&box, 1));
}

AssembledInput assemble_input(const ModelState& state, const PreparedDocument& doc, std::span<const TokenId> token_ids,
                              std::size_t pad_to) {
  AssembledInput out;
  out.warnings = doc.warnings;
  std::vector<TokenInstance> tokens = doc.tokens;
  if (!token_ids.empty()) {
    if (token_ids.size() != tokens.size()) {
      throw ContractError("replacement ids cover " + std::to_string(token_ids.size()) + " positions, document has " +
                          std::to_string(tokens.size()) + " text tokens");
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i].id = token_ids[i];
  }
  out.text_count = tokens.size();
  out.patch_count = doc.patches.count();
  const std::size_t natural = out.text_count + out.patch_count;
  const std::size_t n = std::max(natural, pad_to);

  std::vector<Tensor> parts;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    out.positions.push_back({PositionKind::text, i, tokens[i].id, tokens[i].box, tokens[i].seqid});
  }
  if (!tokens.empty()) parts.push_back(embed_text_tokens(state, tokens));
  for (std::size_t i = 0; i < out.patch_count; ++i) {
    out.positions.push_back({PositionKind::patch, i, special::kPad, doc.patches.boxes[i], 0});
  }
  if (out.patch_count > 0) parts.push_back(embed_patches(state, doc.compact, doc.patches.boxes));
  if (n > natural) {
    const std::vector<TokenInstance> pads(n - natural, TokenInstance{special::kPad, SegmentBox::null(), 0});
    for (std::size_t i = 0; i < pads.size(); ++i) {
      out.positions.push_back({PositionKind::pad, i, special::kPad, SegmentBox::null(), 0});
    }
    parts.push_back(embed_text_tokens(state, pads));
  }
  if (parts.empty()) throw ContractError("document " + doc.id + " has neither text nor patches");

  out.embeddings = parts.size() == 1 ? parts.front() : concat_rows(parts);
  if (state.config().global_pos) {
    if (n > state.config().max_positions) {
      throw ContractError("sequence of " + std::to_string(n) + " exceeds max_positions " +
                          std::to_string(state.config().max_positions));
    }
    std::vector<std::size_t> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = i;
    out.embeddings = add(out.embeddings, gather_rows(state.param("embed.global_pos"), pos));
  }
  out.key_valid.assign(n, 1);
  std::fill(out.key_valid.begin() + static_cast<std::ptrdiff_t>(natural), out.key_valid.end(), 0);
  return out;
}

}  // namespace mtdoc
