#include "mtdoc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "mtdoc/error.hpp"

namespace mtdoc {

namespace {

constexpr char kMagic[5] = {'M', 'T', 'D', 'M', '1'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <class T>
  void le(T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& in, std::string what) : in_(in), what_(std::move(what)) {}
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw ValidationError(what_ + ": truncated at byte " + std::to_string(pos_));
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  template <class T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& in_;
  std::string what_;
  std::size_t pos_ = 0;
};

TensorRecord record_of(const Tensor& t) {
  return {t.shape(), std::vector<double>(t.data().begin(), t.data().end())};
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> encode_tensor_file(const TensorFile& file) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint64_t>(file.tensors.size());
  for (const auto& [name, rec] : file.tensors) {
    if (shape_numel(rec.shape) != rec.values.size()) {
      throw ContractError("tensor " + name + " has " + std::to_string(rec.values.size()) + " values for shape " +
                          shape_string(rec.shape));
    }
    w.le<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.le<std::uint32_t>(static_cast<std::uint32_t>(rec.shape.size()));
    for (auto d : rec.shape) w.le<std::uint64_t>(d);
    for (double v : rec.values) w.f64(v);
  }
  const std::string json = file.trailer.dump();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(json.size()));
  w.bytes(json.data(), json.size());
  w.le<std::uint64_t>(fnv1a64(json));
  return w.take();
}

TensorFile decode_tensor_file(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  Reader r(bytes, what);
  if (r.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) throw ValidationError(what + ": bad magic");
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ValidationError(what + ": unsupported format version " + std::to_string(version));
  }
  TensorFile file;
  const auto count = r.le<std::uint64_t>();
  std::string previous;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.bytes(r.le<std::uint32_t>());
    if (i > 0 && !(previous < name)) throw ValidationError(what + ": tensor names not strictly ascending at " + name);
    const auto rank = r.le<std::uint32_t>();
    TensorRecord rec;
    std::size_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.le<std::uint64_t>();
      rec.shape.push_back(static_cast<std::size_t>(d));
      numel *= static_cast<std::size_t>(d);
    }
    r.need(numel * 8);
    rec.values.resize(numel);
    for (auto& v : rec.values) v = r.f64();
    previous = name;
    file.tensors.emplace(std::move(name), std::move(rec));
  }
  const std::string json = r.bytes(r.le<std::uint32_t>());
  const auto digest = r.le<std::uint64_t>();
  if (digest != fnv1a64(json)) throw ValidationError(what + ": trailer digest mismatch");
  if (r.remaining() != 0) throw ValidationError(what + ": " + std::to_string(r.remaining()) + " trailing bytes");
  try {
    file.trailer = nlohmann::json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(what + ": trailer is not JSON: " + e.what());
  }
  return file;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ValidationError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const std::filesystem::path& path, const ModelState& state) {
  TensorFile file;
  for (const auto& p : state.parameters()) file.tensors.emplace(p.name, record_of(p.tensor));
  file.trailer = nlohmann::json{{"kind", "model"}, {"config", state.config()}};
  write_file_bytes(path, encode_tensor_file(file));
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  TensorFile file = decode_tensor_file(read_file_bytes(path), path.string());
  if (file.trailer.value("kind", "") != "model" || !file.trailer.contains("config")) {
    throw ValidationError(path.string() + ": not a model checkpoint");
  }
  ModelConfig config;
  try {
    config = file.trailer.at("config").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": bad model configuration: " + e.what());
  }
  std::map<std::string, Tensor> params;
  for (auto& [name, rec] : file.tensors) {
    params.emplace(name, Tensor::from_data(rec.shape, std::move(rec.values), true));
  }
  return ModelState(std::move(config), std::move(params));
}

void save_optimizer(const std::filesystem::path& path, const AdamState& state) {
  TensorFile file;
  for (const auto& [name, m] : state.moments) {
    file.tensors.emplace("first/" + name, TensorRecord{{m.first.size()}, m.first});
    file.tensors.emplace("second/" + name, TensorRecord{{m.second.size()}, m.second});
  }
  file.trailer = nlohmann::json{{"kind", "adam"},
                                {"lr", state.hyper.lr},
                                {"beta1", state.hyper.beta1},
                                {"beta2", state.hyper.beta2},
                                {"epsilon", state.hyper.epsilon},
                                {"step_count", state.step_count}};
  write_file_bytes(path, encode_tensor_file(file));
}

AdamState load_optimizer(const std::filesystem::path& path) {
  TensorFile file = decode_tensor_file(read_file_bytes(path), path.string());
  const auto& t = file.trailer;
  if (t.value("kind", "") != "adam") throw ValidationError(path.string() + ": not an optimizer state file");
  AdamState s;
  try {
    s.hyper.lr = t.at("lr").get<double>();
    s.hyper.beta1 = t.at("beta1").get<double>();
    s.hyper.beta2 = t.at("beta2").get<double>();
    s.hyper.epsilon = t.at("epsilon").get<double>();
    s.step_count = t.at("step_count").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": bad optimizer trailer: " + e.what());
  }
  for (auto& [key, rec] : file.tensors) {
    const auto slash = key.find('/');
    const std::string kind = key.substr(0, slash);
    if (slash == std::string::npos || (kind != "first" && kind != "second")) {
      throw ValidationError(path.string() + ": unexpected tensor " + key);
    }
    auto& m = s.moments[key.substr(slash + 1)];
    (kind == "first" ? m.first : m.second) = std::move(rec.values);
  }
  for (const auto& [name, m] : s.moments) {
    if (m.first.size() != m.second.size()) throw ValidationError(path.string() + ": moments of " + name + " differ");
  }
  return s;
}

CheckpointManifest inspect_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  TensorFile file = decode_tensor_file(bytes, path.string());
  CheckpointManifest m;
  m.version = kCheckpointVersion;
  for (const auto& [name, rec] : file.tensors) {
    m.entries.push_back({name, rec.shape});
    m.scalars += rec.values.size();
  }
  m.digest = fnv1a64(file.trailer.dump());
  m.trailer = std::move(file.trailer);
  return m;
}

}  // namespace mtdoc
