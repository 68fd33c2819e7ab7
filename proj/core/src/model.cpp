#include "mtdoc/model.hpp"

#include <nlohmann/json.hpp>

#include "mtdoc/docdata.hpp"
#include "mtdoc/error.hpp"
#include "mtdoc/rng.hpp"
#include "mtdoc/tokenizer.hpp"

namespace mtdoc {

std::size_t ModelConfig::patch_dim() const {
  return static_cast<std::size_t>(kPatchSide * kPatchSide * channels);
}

void ModelConfig::validate() const {
  if (d == 0 || d % 4 != 0) throw ConfigError("model width d must be a positive multiple of 4");
  if (heads == 0 || d % heads != 0) throw ConfigError("model width d must be divisible by the head count");
  if (vocab_size <= 6) throw ConfigError("vocabulary must contain more than the special tokens");
  if (num_classes == 0) throw ConfigError("num_classes must be positive");
  if (channels < 1) throw ConfigError("channels must be positive");
  if (re_layers == 0 || gtsls_layers == 0 || vqa_layers == 0) throw ConfigError("decoder heads need layers");
  if (max_text_tokens == 0 || max_patches == 0) throw ConfigError("input limits must be positive");
  if (global_pos && max_positions == 0) throw ConfigError("global_pos needs max_positions");
  if (dropout != 0.0) throw ConfigError("dropout is not supported in deterministic runs; set it to 0");
  if (!(init_std > 0.0)) throw ConfigError("init_std must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d", c.d},
                     {"layers", c.layers},
                     {"heads", c.heads},
                     {"ffn", c.ffn},
                     {"vocab_size", c.vocab_size},
                     {"num_classes", c.num_classes},
                     {"channels", c.channels},
                     {"re_layers", c.re_layers},
                     {"gtsls_layers", c.gtsls_layers},
                     {"vqa_layers", c.vqa_layers},
                     {"global_pos", c.global_pos},
                     {"max_positions", c.max_positions},
                     {"max_text_tokens", c.max_text_tokens},
                     {"max_patches", c.max_patches},
                     {"dropout", c.dropout},
                     {"init_std", c.init_std},
                     {"re_max_len", c.re_max_len},
                     {"gtsls_max_len", c.gtsls_max_len},
                     {"vqa_max_len", c.vqa_max_len}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("d", c.d);
  get("layers", c.layers);
  get("heads", c.heads);
  get("ffn", c.ffn);
  get("vocab_size", c.vocab_size);
  get("num_classes", c.num_classes);
  get("channels", c.channels);
  get("re_layers", c.re_layers);
  get("gtsls_layers", c.gtsls_layers);
  get("vqa_layers", c.vqa_layers);
  get("global_pos", c.global_pos);
  get("max_positions", c.max_positions);
  get("max_text_tokens", c.max_text_tokens);
  get("max_patches", c.max_patches);
  get("dropout", c.dropout);
  get("init_std", c.init_std);
  get("re_max_len", c.re_max_len);
  get("gtsls_max_len", c.gtsls_max_len);
  get("vqa_max_len", c.vqa_max_len);
}

namespace {

void add_linear(std::map<std::string, Shape>& m, const std::string& p, std::size_t in, std::size_t out) {
  m[p + ".weight"] = {in, out};
  m[p + ".bias"] = {out};
}

void add_norm(std::map<std::string, Shape>& m, const std::string& p, std::size_t d) {
  m[p + ".gain"] = {d};
  m[p + ".bias"] = {d};
}

void add_mha(std::map<std::string, Shape>& m, const std::string& p, std::size_t d) {
  for (const char* part : {".q", ".k", ".v", ".o"}) add_linear(m, p + part, d, d);
}

void add_ffn(std::map<std::string, Shape>& m, const std::string& p, std::size_t d, std::size_t f) {
  add_linear(m, p + ".fc1", d, f);
  add_linear(m, p + ".fc2", f, d);
}

void add_cross_block(std::map<std::string, Shape>& m, const std::string& p, std::size_t d, std::size_t f) {
  add_mha(m, p + ".attn", d);
  add_norm(m, p + ".ln1", d);
  add_ffn(m, p + ".ffn", d, f);
  add_norm(m, p + ".ln2", d);
}

void add_decoder(std::map<std::string, Shape>& m, const std::string& p, std::size_t layers, std::size_t d,
                 std::size_t f, std::size_t vocab) {
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string l = p + ".layer" + std::to_string(i);
    add_mha(m, l + ".self_attn", d);
    add_norm(m, l + ".ln1", d);
    add_mha(m, l + ".cross_attn", d);
    add_norm(m, l + ".ln2", d);
    add_ffn(m, l + ".ffn", d, f);
    add_norm(m, l + ".ln3", d);
  }
  m[p + ".out_bias"] = {vocab};
}

bool ends_with(std::string_view s, std::string_view suffix) { return s.ends_with(suffix); }

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::map<std::string, Shape> parameter_layout(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.d;
  const std::size_t f = c.ffn_width();
  const std::size_t coords = kCanonicalSide + 1;
  std::map<std::string, Shape> m;
  m["embed.word"] = {c.vocab_size, d};
  for (const char* k : {"embed.coord_x1", "embed.coord_y1", "embed.coord_x2", "embed.coord_y2"}) {
    m[k] = {coords, d / 4};
  }
  m["embed.seq"] = {static_cast<std::size_t>(kMaxSeqId + 1), d};
  add_linear(m, "embed.patch", c.patch_dim(), d);
  if (c.global_pos) m["embed.global_pos"] = {c.max_positions, d};
  m["mlm.bias"] = {c.vocab_size};

  for (std::size_t i = 0; i < c.layers; ++i) {
    const std::string l = "backbone.layer" + std::to_string(i);
    add_mha(m, l + ".attn", d);
    add_norm(m, l + ".ln1", d);
    add_ffn(m, l + ".ffn", d, f);
    add_norm(m, l + ".ln2", d);
  }

  add_cross_block(m, "head.en1", d, f);
  add_linear(m, "head.en1.classifier", d, c.num_classes);
  add_cross_block(m, "head.en2", d, f);
  add_linear(m, "head.en2.classifier", d, kSegmentCategoryCount);
  add_cross_block(m, "head.en3", d, f);
  m["head.en3.score.wq"] = {d, d};
  m["head.en3.score.wk"] = {d, d};
  m["head.en3.start"] = {1, d};
  m["head.en3.stop"] = {1, d};

  add_decoder(m, "head.de1", c.re_layers, d, f, c.vocab_size);
  add_decoder(m, "head.de2", c.gtsls_layers, d, f, c.vocab_size);
  add_decoder(m, "head.de3", c.vqa_layers, d, f, c.vocab_size);
  return m;
}

ModelState::ModelState(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  for (const auto& [name, shape] : parameter_layout(config_)) {
    Tensor t = Tensor::zeros(shape, true);
    auto w = t.mutable_data();
    if (ends_with(name, ".gain")) {
      std::fill(w.begin(), w.end(), 1.0);
    } else if (!ends_with(name, "bias")) {
      Rng rng = Rng::derive(seed, fnv1a(name));
      for (auto& v : w) v = rng.normal(0.0, config_.init_std);
    }
    params_.emplace(name, std::move(t));
  }
}

ModelState::ModelState(ModelConfig config, std::map<std::string, Tensor> params)
    : config_(std::move(config)), params_(std::move(params)) {
  const auto layout = parameter_layout(config_);
  if (layout.size() != params_.size()) {
    throw ValidationError("parameter set has " + std::to_string(params_.size()) + " tensors, configuration expects " +
                          std::to_string(layout.size()));
  }
  for (auto& [name, shape] : layout) {
    const auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("missing parameter " + name);
    if (it->second.shape() != shape) {
      throw ValidationError("parameter " + name + " has shape " + shape_string(it->second.shape()) + ", expected " +
                            shape_string(shape));
    }
    it->second.set_requires_grad(true);
  }
}

ModelState ModelState::clone() const {
  std::map<std::string, Tensor> copy;
  for (const auto& [name, t] : params_) {
    Tensor c = t.detach();
    c.set_requires_grad(true);
    copy.emplace(name, std::move(c));
  }
  return ModelState(config_, std::move(copy));
}

const Tensor& ModelState::param(const std::string& name) const {
  const auto it = params_.find(name);
  if (it == params_.end()) throw IndexError("unknown parameter " + name);
  return it->second;
}

std::vector<Parameter> ModelState::parameters() const {
  std::vector<Parameter> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back({name, t});
  return out;
}

std::vector<Parameter> ModelState::parameters_with_prefix(std::string_view prefix) const {
  std::vector<Parameter> out;
  for (const auto& [name, t] : params_) {
    if (std::string_view(name).starts_with(prefix)) out.push_back({name, t});
  }
  return out;
}

std::size_t ModelState::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

Tensor Linear::operator()(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }
Tensor LayerNormWeights::operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
Tensor FfnWeights::operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }

Linear linear_at(const ModelState& s, const std::string& p) { return {s.param(p + ".weight"), s.param(p + ".bias")}; }

LayerNormWeights layer_norm_at(const ModelState& s, const std::string& p) {
  return {s.param(p + ".gain"), s.param(p + ".bias")};
}

MhaWeights mha_at(const ModelState& s, const std::string& p) {
  return {linear_at(s, p + ".q"), linear_at(s, p + ".k"), linear_at(s, p + ".v"), linear_at(s, p + ".o")};
}

FfnWeights ffn_at(const ModelState& s, const std::string& p) {
  return {linear_at(s, p + ".fc1"), linear_at(s, p + ".fc2")};
}

}  // namespace mtdoc
