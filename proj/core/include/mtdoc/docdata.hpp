#pragma once

// Document records, canonical layout coordinates and image patches.
//
// Canonical coordinates live in [1, 512] after rescaling the longer image side
// to 512; the all-zero box is reserved for "no box". Boxes are inclusive, so a
// box with x1 == x2 spans one unit.

#include <array>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mtdoc {

inline constexpr int kCanonicalSide = 512;
inline constexpr int kPatchSide = 32;

enum class Task { mlm, dc, lsc, roils, re, gtsls, vqa };
inline constexpr std::array<Task, 7> kAllTasks = {Task::mlm, Task::dc,    Task::lsc, Task::roils,
                                                  Task::re,  Task::gtsls, Task::vqa};

std::string_view task_name(Task task);
std::optional<Task> parse_task(std::string_view name);

struct SegmentBox {
  int x1 = 0;
  int y1 = 0;
  int x2 = 0;
  int y2 = 0;

  static constexpr SegmentBox null() { return {}; }
  bool is_null() const { return x1 == 0 && y1 == 0 && x2 == 0 && y2 == 0; }
  // Null, or all coordinates in [1, 512] with x1 <= x2 and y1 <= y2.
  bool valid() const;
  auto operator<=>(const SegmentBox&) const = default;
};

// Box in original pixel space.
struct PixelBox {
  int x1 = 0;
  int y1 = 0;
  int x2 = 0;
  int y2 = 0;
  auto operator<=>(const PixelBox&) const = default;
};

struct TextLine {
  std::string text;
  PixelBox box_orig;
  SegmentBox box;
};

enum class SegmentCategory { text, title, list, figure, table };
inline constexpr std::size_t kSegmentCategoryCount = 5;
std::string_view category_name(SegmentCategory category);
std::optional<SegmentCategory> parse_category(std::string_view name);

struct LayoutSegment {
  SegmentBox box;
  PixelBox box_orig;
  SegmentCategory category = SegmentCategory::text;
  int reading_rank = 0;
  std::vector<std::size_t> line_indices;
};

struct QaPair {
  std::string question;
  std::vector<std::string> answers;
};

struct TaskLabels {
  std::optional<int> doc_class;
  std::optional<std::map<std::string, std::string>> relations;
  std::optional<std::vector<QaPair>> qa;
  std::set<Task> tasks;

  bool supports(Task task) const { return tasks.contains(task); }
};

struct DocumentRecord {
  std::string id;
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> pixels;  // height x width x channels, row-major, channel last
  std::vector<TextLine> lines;
  std::vector<LayoutSegment> segments;
  TaskLabels labels;

  // Segment indices sorted by reading rank.
  std::vector<std::size_t> reading_order() const;
  // Text of a segment's lines joined by single spaces.
  std::string segment_text(const LayoutSegment& segment) const;
};

// Scales an original-space box so the longer image side becomes 512; each
// coordinate is rounded half-up and clamped to [1, 512].
SegmentBox rescale_box(const PixelBox& box, int width, int height);

struct PatchGrid {
  int resized_width = 0;
  int resized_height = 0;
  int columns = 0;
  int rows = 0;
  int channels = 1;
  std::vector<double> values;  // count() x patch_dim(), row-major patches
  std::vector<SegmentBox> boxes;

  std::size_t count() const { return boxes.size(); }
  std::size_t patch_dim() const { return static_cast<std::size_t>(kPatchSide * kPatchSide * channels); }
  std::span<const double> patch(std::size_t i) const {
    return {values.data() + i * patch_dim(), patch_dim()};
  }
};

// Extents after aspect-preserving resize of the longer side to 512.
std::pair<int, int> resized_extent(int width, int height);

// Bilinear resize (half-pixel centres) to the canonical longer side, zero
// padding to multiples of 32 on the right and bottom, then row-major 32x32
// patches flattened row-major, channel last.
PatchGrid resize_and_patchify(std::span<const double> pixels, int width, int height, int channels = 1);

// Throws ValidationError describing the first broken invariant.
void validate_record(const DocumentRecord& doc);

// Reads one record per non-blank line. Errors name the line and field.
std::vector<DocumentRecord> load_jsonl(const std::filesystem::path& path);

// Writes records in the ingestion schema. Non-constant rasters go to raw
// little-endian float64 sidecars under `pixel_dir`, referenced relative to
// the JSONL file.
void write_jsonl(const std::filesystem::path& path, std::span<const DocumentRecord> docs,
                 const std::filesystem::path& pixel_dir);

std::vector<double> read_pixel_file(const std::filesystem::path& path, std::size_t expected_values);
void write_pixel_file(const std::filesystem::path& path, std::span<const double> values);

}  // namespace mtdoc
