#pragma once

// Binary parameter files.
//
//   "MTDM1" | version u32 | count u64
//   per tensor, names ascending: name length u32, name bytes, rank u32,
//                                dims u64 x rank, values f64 x numel
//   trailer: JSON length u32, JSON bytes, FNV-1a 64 digest of the JSON u64
//
// All integers and floats are little-endian. Model checkpoints carry the model
// configuration in the trailer; optimizer files carry Adam hyperparameters
// and the step count, with moments stored as "first/<name>" and
// "second/<name>".

#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "mtdoc/model.hpp"
#include "mtdoc/optim.hpp"

namespace mtdoc {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  Shape shape;
  std::vector<double> values;
  bool operator==(const TensorRecord&) const = default;
};

struct TensorFile {
  std::map<std::string, TensorRecord> tensors;
  nlohmann::json trailer;
};

std::vector<std::uint8_t> encode_tensor_file(const TensorFile& file);
// Rejects unknown magic or version, truncation, trailing bytes and digest
// mismatches with ValidationError.
TensorFile decode_tensor_file(const std::vector<std::uint8_t>& bytes, const std::string& what = "checkpoint");

std::uint64_t fnv1a64(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelState& state);
ModelState load_checkpoint(const std::filesystem::path& path);

void save_optimizer(const std::filesystem::path& path, const AdamState& state);
AdamState load_optimizer(const std::filesystem::path& path);

struct ManifestEntry {
  std::string name;
  Shape shape;
};

struct CheckpointManifest {
  std::uint32_t version = 0;
  std::vector<ManifestEntry> entries;
  std::size_t scalars = 0;
  nlohmann::json trailer;
  std::uint64_t digest = 0;
};

CheckpointManifest inspect_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
// Writes to a sibling temporary file, then renames it into place.
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace mtdoc
