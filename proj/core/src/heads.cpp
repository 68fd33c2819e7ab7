#include "mtdoc/heads.hpp"

#include <array>
#include <cmath>
#include <limits>

#include "mtdoc/embeddings.hpp"
#include "mtdoc/error.hpp"

namespace mtdoc {

CrossBlockWeights cross_block_at(const ModelState& state, const std::string& prefix) {
  return {mha_at(state, prefix + ".attn"), layer_norm_at(state, prefix + ".ln1"), ffn_at(state, prefix + ".ffn"),
          layer_norm_at(state, prefix + ".ln2")};
}

Tensor cross_block(const CrossBlockWeights& w, const Tensor& queries, const Memory& memory, std::size_t heads) {
  const AttentionMask mask = AttentionMask::key_padding(queries.rows(), memory.valid);
  const Tensor h = w.ln1(add(queries, multi_head_attention(w.attn, queries, memory.states, mask, heads)));
  return w.ln2(add(h, w.ffn(h)));
}

Tensor cls_queries(const ModelState& state, std::span<const SegmentBox> boxes) {
  std::vector<TokenInstance> q;
  q.reserve(boxes.size());
  for (const auto& b : boxes) q.push_back({special::kCls, b, 0});
  return embed_text_tokens(state, q);
}

Tensor dc_logits(const ModelState& state, const Memory& memory) {
  const SegmentBox null = SegmentBox::null();
  const Tensor h = cross_block(cross_block_at(state, "head.en1"), cls_queries(state, std::span(&null, 1)), memory,
                               state.config().heads);
  return linear_at(state, "head.en1.classifier")(h);
}

namespace {

void require_segment_boxes(std::span<const SegmentBox> boxes, const char* head) {
  if (boxes.empty()) throw ContractError(std::string(head) + " needs at least one segment box");
  for (const auto& b : boxes) {
    if (b.is_null() || !b.valid()) throw ContractError(std::string(head) + " needs valid non-null segment boxes");
  }
}

}  // namespace

Tensor lsc_logits(const ModelState& state, const Memory& memory, std::span<const SegmentBox> boxes) {
  require_segment_boxes(boxes, "layout segment categorization");
  const Tensor h =
      cross_block(cross_block_at(state, "head.en2"), cls_queries(state, boxes), memory, state.config().heads);
  return linear_at(state, "head.en2.classifier")(h);
}

Tensor roils_scores(const ModelState& state, const Memory& memory, std::span<const SegmentBox> boxes) {
  require_segment_boxes(boxes, "reading order");
  const Tensor h =
      cross_block(cross_block_at(state, "head.en3"), cls_queries(state, boxes), memory, state.config().heads);
  const std::array<Tensor, 2> from = {state.param("head.en3.start"), h};
  const std::array<Tensor, 2> to = {h, state.param("head.en3.stop")};
  const Tensor q = matmul(concat_rows(from), state.param("head.en3.score.wq"));
  const Tensor k = matmul(concat_rows(to), state.param("head.en3.score.wk"));
  return scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(state.config().d)));
}

Tensor roils_loss(const Tensor& scores, std::span<const std::size_t> order) {
  const std::size_t n = order.size();
  if (n == 0) throw ContractError("reading order loss needs at least one segment");
  if (scores.rank() != 2 || scores.rows() != n + 1 || scores.cols() != n + 1) {
    throw DimensionError("successor scores " + shape_string(scores.shape()) + " do not match " + std::to_string(n) +
                         " segments");
  }
  std::vector<std::size_t> targets(n + 1);
  targets[0] = order[0];
  for (std::size_t r = 0; r < n; ++r) {
    if (order[r] >= n) throw IndexError("reading order names segment " + std::to_string(order[r]));
    targets[order[r] + 1] = r + 1 < n ? order[r + 1] : n;
  }
  std::vector<double> bias((n + 1) * (n + 1), 0.0);
  bias[n] = kMaskBias;  // START -> STOP
  for (std::size_t i = 0; i < n; ++i) bias[(i + 1) * (n + 1) + i] = kMaskBias;
  return cross_entropy(add(scores, Tensor::from_data(scores.shape(), std::move(bias))), targets);
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<std::size_t> decode_reading_order(const Tensor& scores) {
  if (scores.rank() != 2 || scores.rows() != scores.cols() || scores.rows() < 2) {
    throw DimensionError("successor scores must be (n+1) x (n+1) with n >= 1, got " + shape_string(scores.shape()));
  }
  const std::size_t n = scores.rows() - 1;
  std::vector<std::size_t> order;
  std::vector<bool> visited(n, false);
  std::size_t row = 0;
  while (order.size() < n) {
    std::size_t best = n;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (!visited[j] && (best == n || scores.at(row, j) > best_score)) {
        best = j;
        best_score = scores.at(row, j);
      }
    }
    visited[best] = true;
    order.push_back(best);
    row = best + 1;
  }
  return order;
}

std::string decoder_prefix(DecoderHead head) {
  switch (head) {
    case DecoderHead::re: return "head.de1";
    case DecoderHead::gtsls: return "head.de2";
    case DecoderHead::vqa: return "head.de3";
  }
  throw ContractError("unknown decoder head");
}

std::size_t decoder_layers(const ModelConfig& config, DecoderHead head) {
  switch (head) {
    case DecoderHead::re: return config.re_layers;
    case DecoderHead::gtsls: return config.gtsls_layers;
    case DecoderHead::vqa: return config.vqa_layers;
  }
  throw ContractError("unknown decoder head");
}

std::size_t decoder_max_len(const ModelConfig& config, DecoderHead head) {
  switch (head) {
    case DecoderHead::re: return config.re_max_len;
    case DecoderHead::gtsls: return config.gtsls_max_len;
    case DecoderHead::vqa: return config.vqa_max_len;
  }
  throw ContractError("unknown decoder head");
}

namespace {

Tensor decoder_stack(const ModelState& state, DecoderHead head, Tensor x, const AttentionMask& self_mask,
                     const Memory& memory) {
  const std::string prefix = decoder_prefix(head);
  const std::size_t heads = state.config().heads;
  const AttentionMask cross = AttentionMask::key_padding(x.rows(), memory.valid);
  for (std::size_t i = 0; i < decoder_layers(state.config(), head); ++i) {
    const std::string l = prefix + ".layer" + std::to_string(i);
    x = layer_norm_at(state, l + ".ln1")(
        add(x, multi_head_attention(mha_at(state, l + ".self_attn"), x, x, self_mask, heads)));
    x = layer_norm_at(state, l + ".ln2")(
        add(x, multi_head_attention(mha_at(state, l + ".cross_attn"), x, memory.states, cross, heads)));
    x = layer_norm_at(state, l + ".ln3")(add(x, ffn_at(state, l + ".ffn")(x)));
  }
  return x;
}

std::vector<TokenInstance> teacher_inputs(const DecoderExample& ex) {
  if (ex.init.empty()) throw ContractError("teacher forcing needs a non-empty query");
  std::vector<TokenInstance> inputs = ex.init;
  for (std::size_t i = 0; i < ex.target.size(); ++i) inputs.push_back(generated_token(ex.target[i], i));
  return inputs;
}

std::vector<std::size_t> teacher_labels(const DecoderExample& ex) {
  std::vector<std::size_t> labels(ex.target.begin(), ex.target.end());
  labels.push_back(special::kEos);
  return labels;
}

}  // namespace

Tensor decoder_hidden(const ModelState& state, DecoderHead head, std::span<const TokenInstance> inputs,
                      const Memory& memory) {
  if (inputs.empty()) throw ContractError("decoder needs at least one input token");
  return decoder_stack(state, head, embed_text_tokens(state, inputs), AttentionMask::causal(inputs.size()), memory);
}

Tensor decoder_hidden_packed(const ModelState& state, DecoderHead head,
                             std::span<const std::vector<TokenInstance>> sequences, const Memory& memory) {
  std::vector<TokenInstance> all;
  std::vector<std::size_t> owner;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    if (sequences[s].empty()) throw ContractError("decoder needs at least one input token per sequence");
    all.insert(all.end(), sequences[s].begin(), sequences[s].end());
    owner.insert(owner.end(), sequences[s].size(), s);
  }
  if (all.empty()) throw ContractError("decoder needs at least one sequence");
  const std::size_t n = all.size();
  AttentionMask mask{n, n, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t k = 0; k <= q; ++k) mask.allowed[q * n + k] = owner[k] == owner[q] ? 1 : 0;
  }
  return decoder_stack(state, head, embed_text_tokens(state, all), mask, memory);
}

Tensor vocab_logits(const ModelState& state, DecoderHead head, const Tensor& hidden) {
  return add_bias(matmul_nt(hidden, state.param("embed.word")), state.param(decoder_prefix(head) + ".out_bias"));
}

TokenInstance generated_token(TokenId id, std::size_t index) {
  return {id, SegmentBox::null(), static_cast<int>(std::min<std::size_t>(index + 1, kMaxSeqId))};
}

Tensor teacher_forced_loss(const ModelState& state, DecoderHead head, std::span<const TokenInstance> init,
                           std::span<const TokenId> target, const Memory& memory) {
  const DecoderExample ex{{init.begin(), init.end()}, {target.begin(), target.end()}};
  const auto inputs = teacher_inputs(ex);
  const Tensor hidden = decoder_hidden(state, head, inputs, memory);
  const Tensor rows = slice_rows(hidden, ex.init.size() - 1, inputs.size());
  return cross_entropy(vocab_logits(state, head, rows), teacher_labels(ex));
}

std::vector<Tensor> teacher_forced_losses(const ModelState& state, DecoderHead head,
                                          std::span<const DecoderExample> examples, const Memory& memory) {
  std::vector<std::vector<TokenInstance>> sequences;
  for (const auto& ex : examples) sequences.push_back(teacher_inputs(ex));
  const Tensor hidden = decoder_hidden_packed(state, head, sequences, memory);
  // Project only the rows that predict a label.
  std::vector<std::size_t> rows;
  for (std::size_t s = 0, offset = 0; s < examples.size(); offset += sequences[s].size(), ++s) {
    for (std::size_t r = examples[s].init.size() - 1; r < sequences[s].size(); ++r) rows.push_back(offset + r);
  }
  const Tensor logits = vocab_logits(state, head, gather_rows(hidden, rows));
  std::vector<Tensor> losses;
  for (std::size_t s = 0, offset = 0; s < examples.size(); ++s) {
    const std::size_t count = examples[s].target.size() + 1;
    losses.push_back(cross_entropy(slice_rows(logits, offset, offset + count), teacher_labels(examples[s])));
    offset += count;
  }
  return losses;
}

std::vector<TokenId> generate(const ModelState& state, DecoderHead head, const Memory& memory,
                              std::span<const TokenInstance> init, std::size_t max_len) {
  if (init.empty()) throw ContractError("generation needs a non-empty query");
  NoGradGuard no_grad;
  std::vector<TokenInstance> inputs(init.begin(), init.end());
  std::vector<TokenId> out;
  while (out.size() < max_len) {
    const Tensor hidden = decoder_hidden(state, head, inputs, memory);
    const Tensor logits = vocab_logits(state, head, slice_rows(hidden, inputs.size() - 1, inputs.size()));
    const TokenId next = argmax(logits.data());
    if (next == special::kEos) break;
    inputs.push_back(generated_token(next, out.size()));
    out.push_back(next);
  }
  return out;
}

std::vector<TokenInstance> text_query(const Tokenizer& tokenizer, std::string_view text) {
  if (normalize_text(text).empty()) throw ContractError("query text is empty");
  auto q = tokenize_line(tokenizer, text, SegmentBox::null());
  if (q.empty()) throw ContractError("query text produced no tokens");
  return q;
}

std::vector<TokenInstance> segment_query(const SegmentBox& box) {
  if (box.is_null() || !box.valid()) throw ContractError("segment text generation needs a valid non-null box");
  return {TokenInstance{special::kSos, box, 0}};
}

std::string re_head(const ModelState& state, const Tokenizer& tokenizer, const Memory& memory,
                    std::string_view relation_key) {
  const auto ids = generate(state, DecoderHead::re, memory, text_query(tokenizer, relation_key),
                            state.config().re_max_len);
  return tokenizer.decode(ids);
}

std::string gtsls_head(const ModelState& state, const Tokenizer& tokenizer, const Memory& memory,
                       const SegmentBox& box) {
  const auto ids = generate(state, DecoderHead::gtsls, memory, segment_query(box), state.config().gtsls_max_len);
  return tokenizer.decode(ids);
}

std::string vqa_head(const ModelState& state, const Tokenizer& tokenizer, const Memory& memory,
                     std::string_view question) {
  const auto ids = generate(state, DecoderHead::vqa, memory, text_query(tokenizer, question),
                            state.config().vqa_max_len);
  return tokenizer.decode(ids);
}

}  // namespace mtdoc
