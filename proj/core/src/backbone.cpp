#include "mtdoc/backbone.hpp"

#include "mtdoc/error.hpp"

namespace mtdoc {

Tensor multi_head_attention(const MhaWeights& w, const Tensor& queries, const Tensor& keys_values,
                            const AttentionMask& mask, std::size_t heads, AttentionProbe* probe) {
  if (queries.rank() != 2 || keys_values.rank() != 2 || queries.cols() != keys_values.cols()) {
    throw DimensionError("attention inputs " + shape_string(queries.shape()) + " and " +
                         shape_string(keys_values.shape()) + " do not share a width");
  }
  if (mask.queries != queries.rows() || mask.keys != keys_values.rows()) {
    throw DimensionError("attention mask is " + std::to_string(mask.queries) + "x" + std::to_string(mask.keys) +
                         " for " + std::to_string(queries.rows()) + " queries and " +
                         std::to_string(keys_values.rows()) + " keys");
  }
  const Tensor ctx = scaled_dot_attention(w.q(queries), w.k(keys_values), w.v(keys_values), mask, heads, probe);
  return w.o(ctx);
}

EncoderLayerWeights encoder_layer_at(const ModelState& state, std::size_t layer) {
  const std::string p = "backbone.layer" + std::to_string(layer);
  return {mha_at(state, p + ".attn"), layer_norm_at(state, p + ".ln1"), ffn_at(state, p + ".ffn"),
          layer_norm_at(state, p + ".ln2")};
}

Tensor encoder_layer(const EncoderLayerWeights& w, const Tensor& x, const AttentionMask& mask, std::size_t heads,
                     AttentionProbe* probe) {
  const Tensor h = w.ln1(add(x, multi_head_attention(w.attn, x, x, mask, heads, probe)));
  return w.ln2(add(h, w.ffn(h)));
}

Memory encode(const ModelState& state, const Tensor& inputs, std::span<const std::uint8_t> key_valid,
              std::vector<AttentionProbe>* probes) {
  if (inputs.rank() != 2 || inputs.cols() != state.config().d) {
    throw DimensionError("backbone input " + shape_string(inputs.shape()) + " does not have width " +
                         std::to_string(state.config().d));
  }
  if (key_valid.size() != inputs.rows()) {
    throw DimensionError("key mask covers " + std::to_string(key_valid.size()) + " of " +
                         std::to_string(inputs.rows()) + " positions");
  }
  const AttentionMask mask = AttentionMask::key_padding(inputs.rows(), key_valid);
  Tensor x = inputs;
  for (std::size_t i = 0; i < state.config().layers; ++i) {
    AttentionProbe* probe = nullptr;
    if (probes) probe = &probes->emplace_back();
    x = encoder_layer(encoder_layer_at(state, i), x, mask, state.config().heads, probe);
  }
  return {x, std::vector<std::uint8_t>(key_valid.begin(), key_valid.end())};
}

}  // namespace mtdoc
