#pragma once

// Post-layer-norm transformer encoder shared by every task.

#include <cstdint>
#include <span>
#include <vector>

#include "mtdoc/model.hpp"

namespace mtdoc {

// Projects queries and keys/values, attends per head, concatenates heads and
// applies the output projection.
Tensor multi_head_attention(const MhaWeights& w, const Tensor& queries, const Tensor& keys_values,
                            const AttentionMask& mask, std::size_t heads, AttentionProbe* probe = nullptr);

struct EncoderLayerWeights {
  MhaWeights attn;
  LayerNormWeights ln1;
  FfnWeights ffn;
  LayerNormWeights ln2;
};

EncoderLayerWeights encoder_layer_at(const ModelState& state, std::size_t layer);

// x = LN(x + SelfAttn(x)); x = LN(x + FFN(x)).
Tensor encoder_layer(const EncoderLayerWeights& w, const Tensor& x, const AttentionMask& mask, std::size_t heads,
                     AttentionProbe* probe = nullptr);

// Backbone output together with the key mask the heads attend through.
struct Memory {
  Tensor states;                      // n x d
  std::vector<std::uint8_t> valid;    // 0 for PAD positions
};

// Runs every backbone layer. `probes`, when given, receives one entry per layer.
Memory encode(const ModelState& state, const Tensor& inputs, std::span<const std::uint8_t> key_valid,
              std::vector<AttentionProbe>* probes = nullptr);

}  // namespace mtdoc
