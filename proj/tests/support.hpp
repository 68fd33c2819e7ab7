#pragma once

// Small shared fixtures: a tiny synthetic world and a few tensor helpers.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "mtdoc/config.hpp"
#include "mtdoc/docdata.hpp"
#include "mtdoc/rng.hpp"

namespace mtdoc::testing {

struct World {
  Corpus corpus;
  WordCharTokenizer tokenizer;
  ModelConfig config;
  RoleStores stores;
};

inline World make_world(std::size_t d = 16, std::size_t per_role = 2, std::uint64_t seed = 11) {
  SyntheticSpec spec;
  spec.counts.fill(per_role);
  Corpus corpus = generate_synthetic_corpus(seed, spec);
  WordCharTokenizer tok(build_vocab(corpus));
  ModelConfig c;
  c.d = d;
  c.heads = 4;
  c.layers = 2;
  c.vocab_size = tok.vocab_size();
  RoleStores stores = prepare_stores(corpus, tok, c);
  return World{std::move(corpus), std::move(tok), c, std::move(stores)};
}

inline Tensor random_tensor(Shape shape, Rng& rng, bool grad = true, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, scale);
  return Tensor::from_data(std::move(shape), std::move(v), grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("mtdoc_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Independent oracle for the coordinate pipeline on one W x H image. Returns
// an empty string when every invariant holds, else the first violation.
inline std::string check_geometry(int width, int height, Rng& rng) {
  const double s = 512.0 / std::max(width, height);
  const auto canon = [s](int v) { return std::clamp(static_cast<int>(std::floor(v * s + 0.5)), 1, 512); };
  const int rw = std::max(1, static_cast<int>(std::floor(width * s + 0.5)));
  const int rh = std::max(1, static_cast<int>(std::floor(height * s + 0.5)));
  const std::string tag = std::to_string(width) + "x" + std::to_string(height) + ": ";

  // Boxes: oracle agreement, canonical range, idempotence at 512 scale.
  for (int trial = 0; trial < 4; ++trial) {
    int x1 = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(width) + 1));
    int x2 = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(width) + 1));
    int y1 = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(height) + 1));
    int y2 = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(height) + 1));
    if (x1 > x2) std::swap(x1, x2);
    if (y1 > y2) std::swap(y1, y2);
    const SegmentBox b = rescale_box({x1, y1, x2, y2}, width, height);
    if (b != SegmentBox{canon(x1), canon(y1), canon(x2), canon(y2)}) return tag + "rescale_box disagrees with oracle";
    if (!b.valid() || b.is_null()) return tag + "rescaled box not canonical";
    const SegmentBox again = rescale_box({b.x1, b.y1, b.x2, b.y2}, rw, rh);
    if (again != b) return tag + "rescale_box not idempotent on canonical input";
  }

  // Patches: extents, count, coverage without overlap, zero padding.
  std::vector<double> pixels(static_cast<std::size_t>(width) * height);
  for (auto& v : pixels) v = 0.25 + 0.5 * rng.uniform01();
  const PatchGrid g = resize_and_patchify(pixels, width, height, 1);
  if (g.resized_width != rw || g.resized_height != rh) return tag + "resized extent differs from oracle";
  if (std::max(rw, rh) != 512) return tag + "longer side is not 512";
  const int cols = (rw + 31) / 32, rows = (rh + 31) / 32;
  if (g.count() != static_cast<std::size_t>(cols) * rows) return tag + "patch count differs from ceil grid";
  std::vector<std::uint8_t> cover(512 * 512, 0);
  long long area = 0;
  for (std::size_t i = 0; i < g.count(); ++i) {
    const SegmentBox& b = g.boxes[i];
    if (!b.valid() || b.is_null()) return tag + "patch box not canonical";
    area += static_cast<long long>(b.x2 - b.x1 + 1) * (b.y2 - b.y1 + 1);
    for (int y = b.y1; y <= b.y2; ++y)
      for (int x = b.x1; x <= b.x2; ++x) {
        if (cover[static_cast<std::size_t>(y - 1) * 512 + (x - 1)]++) return tag + "patch boxes overlap";
      }
    const auto p = g.patch(i);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const int cx = (b.x1 - 1) + x, cy = (b.y1 - 1) + y;
        const double v = p[static_cast<std::size_t>(y) * 32 + x];
        const bool inside = cx < rw && cy < rh;
        if (inside && !(v >= 0.25 - 1e-12 && v <= 0.75 + 1e-12)) return tag + "resized pixel outside input range";
        if (!inside && v != 0.0) return tag + "padding is not zero";
      }
  }
  if (area != static_cast<long long>(cols) * 32 * rows * 32) return tag + "patch areas do not sum to padded area";
  for (int y = 0; y < rh; ++y)
    for (int x = 0; x < rw; ++x) {
      if (!cover[static_cast<std::size_t>(y) * 512 + x]) return tag + "resized image not covered";
    }
  return {};
}

}  // namespace mtdoc::testing
