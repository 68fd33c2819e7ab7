#pragma once

#include <cstdint>
#include <map>
#include <nlohmann/json_fwd.hpp>
#include <string>
#include <string_view>
#include <vector>

#include "mtdoc/optim.hpp"
#include "mtdoc/tensor.hpp"

namespace mtdoc {

struct ModelConfig {
  std::size_t d = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn = 0;  // 0 means 4 * d
  std::size_t vocab_size = 0;
  std::size_t num_classes = 16;
  int channels = 1;
  std::size_t re_layers = 2;
  std::size_t gtsls_layers = 2;
  std::size_t vqa_layers = 3;
  bool global_pos = false;
  std::size_t max_positions = 1024;
  std::size_t max_text_tokens = 512;
  std::size_t max_patches = 256;
  double dropout = 0.0;
  double init_std = 0.02;
  std::size_t re_max_len = 32;
  std::size_t gtsls_max_len = 128;
  std::size_t vqa_max_len = 32;

  std::size_t ffn_width() const { return ffn == 0 ? 4 * d : ffn; }
  std::size_t patch_dim() const;
  // Throws ConfigError for inconsistent settings.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Named parameter tensors of the whole model. Tensors are shared handles, so
// the state is move-only; use clone() for an independent copy.
class ModelState {
 public:
  // Allocates every parameter and initializes it from `seed`.
  ModelState(ModelConfig config, std::uint64_t seed);
  // Takes ownership of already-built tensors (checkpoint loading).
  ModelState(ModelConfig config, std::map<std::string, Tensor> params);

  ModelState(ModelState&&) = default;
  ModelState& operator=(ModelState&&) = default;
  ModelState(const ModelState&) = delete;
  ModelState& operator=(const ModelState&) = delete;

  ModelState clone() const;

  const ModelConfig& config() const { return config_; }
  // Throws IndexError for unknown names.
  const Tensor& param(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.contains(name); }

  // Lexicographic by name.
  std::vector<Parameter> parameters() const;
  std::vector<Parameter> parameters_with_prefix(std::string_view prefix) const;
  std::size_t scalar_count() const;

 private:
  ModelConfig config_;
  std::map<std::string, Tensor> params_;
};

// Expected parameter names and shapes for a configuration.
std::map<std::string, Shape> parameter_layout(const ModelConfig& config);

// Thin views over groups of parameters.
struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // out
  Tensor operator()(const Tensor& x) const;
};

struct LayerNormWeights {
  Tensor gain;
  Tensor bias;
  Tensor operator()(const Tensor& x) const;
};

struct MhaWeights {
  Linear q, k, v, o;
};

struct FfnWeights {
  Linear fc1, fc2;
  Tensor operator()(const Tensor& x) const;
};

Linear linear_at(const ModelState& state, const std::string& prefix);
LayerNormWeights layer_norm_at(const ModelState& state, const std::string& prefix);
MhaWeights mha_at(const ModelState& state, const std::string& prefix);
FfnWeights ffn_at(const ModelState& state, const std::string& prefix);

}  // namespace mtdoc
