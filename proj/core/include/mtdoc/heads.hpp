#pragma once

// Task heads on top of the backbone memory.
//
// En1..En3 are single cross-attention blocks queried by CLS embeddings (null
// box for document classification, segment boxes otherwise). De1..De3 are
// causal decoders whose output projection is tied to the word table.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mtdoc/backbone.hpp"
#include "mtdoc/tokenizer.hpp"

namespace mtdoc {

struct CrossBlockWeights {
  MhaWeights attn;
  LayerNormWeights ln1;
  FfnWeights ffn;
  LayerNormWeights ln2;
};

CrossBlockWeights cross_block_at(const ModelState& state, const std::string& prefix);

// h = LN(q + CrossAttn(q, memory)); LN(h + FFN(h)).
Tensor cross_block(const CrossBlockWeights& w, const Tensor& queries, const Memory& memory, std::size_t heads);

// CLS query rows, one per box.
Tensor cls_queries(const ModelState& state, std::span<const SegmentBox> boxes);

// 1 x num_classes.
Tensor dc_logits(const ModelState& state, const Memory& memory);
// n x 5, one row per segment box. Null boxes raise ContractError.
Tensor lsc_logits(const ModelState& state, const Memory& memory, std::span<const SegmentBox> boxes);

// (n+1) x (n+1) successor scores. Row 0 is START and row i+1 is segment i;
// column j < n is segment j and column n is STOP.
Tensor roils_scores(const ModelState& state, const Memory& memory, std::span<const SegmentBox> boxes);
// Mean row cross-entropy against the immediate successors of `order`
// (segment indices in reading order). Self-loops and START -> STOP are masked.
Tensor roils_loss(const Tensor& scores, std::span<const std::size_t> order);
// Greedy chain from START over unvisited segments; lowest index wins ties.
std::vector<std::size_t> decode_reading_order(const Tensor& scores);

enum class DecoderHead { re, gtsls, vqa };

std::string decoder_prefix(DecoderHead head);
std::size_t decoder_layers(const ModelConfig& config, DecoderHead head);
std::size_t decoder_max_len(const ModelConfig& config, DecoderHead head);

// Final hidden states of the decoder, one row per input token.
Tensor decoder_hidden(const ModelState& state, DecoderHead head, std::span<const TokenInstance> inputs,
                      const Memory& memory);
// Several decoder inputs packed into one pass: rows are the sequences in
// order, and each position attends causally within its own sequence only.
Tensor decoder_hidden_packed(const ModelState& state, DecoderHead head,
                             std::span<const std::vector<TokenInstance>> sequences, const Memory& memory);

// Tied vocabulary projection of hidden rows.
Tensor vocab_logits(const ModelState& state, DecoderHead head, const Tensor& hidden);

// Generated token i (0-based) carries the null box and seqid i + 1.
TokenInstance generated_token(TokenId id, std::size_t index);

// Cross-entropy of target + EOS given init + target as decoder input.
Tensor teacher_forced_loss(const ModelState& state, DecoderHead head, std::span<const TokenInstance> init,
                           std::span<const TokenId> target, const Memory& memory);

struct DecoderExample {
  std::vector<TokenInstance> init;
  std::vector<TokenId> target;
};

// teacher_forced_loss for each example, sharing one packed decoder pass.
std::vector<Tensor> teacher_forced_losses(const ModelState& state, DecoderHead head,
                                          std::span<const DecoderExample> examples, const Memory& memory);

// Greedy decoding until EOS or max_len tokens; excludes init and EOS.
std::vector<TokenId> generate(const ModelState& state, DecoderHead head, const Memory& memory,
                              std::span<const TokenInstance> init, std::size_t max_len);

// Query token sequences. Empty text raises ContractError.
std::vector<TokenInstance> text_query(const Tokenizer& tokenizer, std::string_view text);
// Single SOS token at the segment box.
std::vector<TokenInstance> segment_query(const SegmentBox& box);

std::string re_head(const ModelState& state, const Tokenizer& tokenizer, const Memory& memory,
                    std::string_view relation_key);
std::string gtsls_head(const ModelState& state, const Tokenizer& tokenizer, const Memory& memory,
                       const SegmentBox& box);
std::string vqa_head(const ModelState& state, const Tokenizer& tokenizer, const Memory& memory,
                     std::string_view question);

// Lowest index among the maxima.
std::size_t argmax(std::span<const double> values);

}  // namespace mtdoc
