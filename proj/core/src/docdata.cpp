#include "mtdoc/docdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "mtdoc/error.hpp"

namespace mtdoc {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 7> kTaskNames = {"mlm", "dc", "lsc", "roils", "re", "gtsls", "vqa"};
constexpr std::array<std::string_view, 5> kCategoryNames = {"text", "title", "list", "figure", "table"};

int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

}  // namespace

std::string_view task_name(Task task) { return kTaskNames[static_cast<std::size_t>(task)]; }

std::optional<Task> parse_task(std::string_view name) {
  for (std::size_t i = 0; i < kTaskNames.size(); ++i) {
    if (kTaskNames[i] == name) return static_cast<Task>(i);
  }
  return std::nullopt;
}

std::string_view category_name(SegmentCategory category) {
  return kCategoryNames[static_cast<std::size_t>(category)];
}

std::optional<SegmentCategory> parse_category(std::string_view name) {
  for (std::size_t i = 0; i < kCategoryNames.size(); ++i) {
    if (kCategoryNames[i] == name) return static_cast<SegmentCategory>(i);
  }
  return std::nullopt;
}

bool SegmentBox::valid() const {
  if (is_null()) return true;
  const auto in_range = [](int v) { return v >= 1 && v <= kCanonicalSide; };
  return in_range(x1) && in_range(y1) && in_range(x2) && in_range(y2) && x1 <= x2 && y1 <= y2;
}

std::vector<std::size_t> DocumentRecord::reading_order() const {
  std::vector<std::size_t> order(segments.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [this](std::size_t a, std::size_t b) {
    return segments[a].reading_rank < segments[b].reading_rank;
  });
  return order;
}

std::string DocumentRecord::segment_text(const LayoutSegment& segment) const {
  std::string out;
  for (auto li : segment.line_indices) {
    if (!out.empty()) out += ' ';
    out += lines.at(li).text;
  }
  return out;
}

SegmentBox rescale_box(const PixelBox& box, int width, int height) {
  if (width < 1 || height < 1) {
    throw ValidationError("rescale_box: image extents must be positive");
  }
  if (box.x1 < 0 || box.y1 < 0 || box.x2 > width || box.y2 > height || box.x1 > box.x2 || box.y1 > box.y2) {
    std::ostringstream os;
    os << "box (" << box.x1 << "," << box.y1 << "," << box.x2 << "," << box.y2 << ") outside "
       << width << "x" << height << " image or inverted";
    throw ValidationError(os.str());
  }
  const double s = static_cast<double>(kCanonicalSide) / static_cast<double>(std::max(width, height));
  const auto map = [s](int v) { return std::clamp(round_half_up(v * s), 1, kCanonicalSide); };
  // Rounding is monotone, so x1 <= x2 survives; a collapsed box keeps its
  // one-unit inclusive extent.
  return {map(box.x1), map(box.y1), map(box.x2), map(box.y2)};
}

std::pair<int, int> resized_extent(int width, int height) {
  const double s = static_cast<double>(kCanonicalSide) / static_cast<double>(std::max(width, height));
  const int w = std::clamp(round_half_up(width * s), 1, kCanonicalSide);
  const int h = std::clamp(round_half_up(height * s), 1, kCanonicalSide);
  return {w, h};
}

PatchGrid resize_and_patchify(std::span<const double> pixels, int width, int height, int channels) {
  if (width < 1 || height < 1 || channels < 1) {
    throw ValidationError("resize_and_patchify: empty image");
  }
  const auto expected = static_cast<std::size_t>(width) * height * channels;
  if (pixels.size() != expected) {
    throw ValidationError("resize_and_patchify: " + std::to_string(pixels.size()) + " values for a " +
                          std::to_string(width) + "x" + std::to_string(height) + "x" +
                          std::to_string(channels) + " image");
  }
  const auto [rw, rh] = resized_extent(width, height);

  std::vector<double> resized(static_cast<std::size_t>(rw) * rh * channels);
  if (rw == width && rh == height) {
    std::copy(pixels.begin(), pixels.end(), resized.begin());
  } else {
    const double sx = static_cast<double>(width) / rw;
    const double sy = static_cast<double>(height) / rh;
    for (int oy = 0; oy < rh; ++oy) {
      const double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(height - 1));
      const int y0 = static_cast<int>(fy);
      const int y1 = std::min(y0 + 1, height - 1);
      const double ty = fy - y0;
      for (int ox = 0; ox < rw; ++ox) {
        const double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(width - 1));
        const int x0 = static_cast<int>(fx);
        const int x1 = std::min(x0 + 1, width - 1);
        const double tx = fx - x0;
        for (int c = 0; c < channels; ++c) {
          const auto at = [&](int y, int x) {
            return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
          };
          const double top = at(y0, x0) + tx * (at(y0, x1) - at(y0, x0));
          const double bottom = at(y1, x0) + tx * (at(y1, x1) - at(y1, x0));
          resized[(static_cast<std::size_t>(oy) * rw + ox) * channels + c] = top + ty * (bottom - top);
        }
      }
    }
  }

  PatchGrid grid;
  grid.resized_width = rw;
  grid.resized_height = rh;
  grid.columns = (rw + kPatchSide - 1) / kPatchSide;
  grid.rows = (rh + kPatchSide - 1) / kPatchSide;
  grid.channels = channels;
  const std::size_t dim = grid.patch_dim();
  grid.values.assign(static_cast<std::size_t>(grid.columns) * grid.rows * dim, 0.0);
  for (int pr = 0; pr < grid.rows; ++pr) {
    for (int pc = 0; pc < grid.columns; ++pc) {
      const std::size_t p = static_cast<std::size_t>(pr) * grid.columns + pc;
      double* dst = grid.values.data() + p * dim;
      for (int y = 0; y < kPatchSide; ++y) {
        const int sy = pr * kPatchSide + y;
        if (sy >= rh) break;
        for (int x = 0; x < kPatchSide; ++x) {
          const int sx = pc * kPatchSide + x;
          if (sx >= rw) break;
          for (int c = 0; c < channels; ++c) {
            dst[(static_cast<std::size_t>(y) * kPatchSide + x) * channels + c] =
                resized[(static_cast<std::size_t>(sy) * rw + sx) * channels + c];
          }
        }
      }
      const auto clampc = [](int v) { return std::clamp(v, 1, kCanonicalSide); };
      grid.boxes.push_back({clampc(pc * kPatchSide + 1), clampc(pr * kPatchSide + 1),
                            clampc((pc + 1) * kPatchSide), clampc((pr + 1) * kPatchSide)});
    }
  }
  return grid;
}

void validate_record(const DocumentRecord& doc) {
  const auto fail = [&doc](const std::string& field, const std::string& what) {
    throw ValidationError("document '" + doc.id + "': field '" + field + "': " + what);
  };
  if (doc.id.empty()) fail("id", "empty");
  if (doc.width < 1 || doc.height < 1) fail("width/height", "must be positive");
  if (doc.channels < 1) fail("channels", "must be positive");
  const auto expected = static_cast<std::size_t>(doc.width) * doc.height * doc.channels;
  if (doc.pixels.size() != expected) {
    fail("pixels", "expected " + std::to_string(expected) + " values, got " + std::to_string(doc.pixels.size()));
  }
  for (double v : doc.pixels) {
    if (!(v >= 0.0 && v <= 1.0)) fail("pixels", "value outside [0,1]");
  }
  for (std::size_t i = 0; i < doc.lines.size(); ++i) {
    const auto& line = doc.lines[i];
    const std::string f = "lines[" + std::to_string(i) + "]";
    if (line.text.find_first_not_of(" \t\r\n") == std::string::npos) fail(f + ".text", "empty");
    const auto& b = line.box_orig;
    if (b.x1 < 0 || b.y1 < 0 || b.x2 > doc.width || b.y2 > doc.height) fail(f + ".box", "outside the image");
    if (b.x1 > b.x2 || b.y1 > b.y2) fail(f + ".box", "x2 < x1 or y2 < y1");
    if (!line.box.valid() || line.box.is_null()) fail(f + ".box", "invalid canonical box");
  }
  std::vector<int> ranks;
  for (std::size_t i = 0; i < doc.segments.size(); ++i) {
    const auto& seg = doc.segments[i];
    const std::string f = "segments[" + std::to_string(i) + "]";
    if (!seg.box.valid() || seg.box.is_null()) fail(f + ".box", "invalid canonical box");
    for (auto li : seg.line_indices) {
      if (li >= doc.lines.size()) fail(f + ".line_indices", "index " + std::to_string(li) + " out of range");
    }
    ranks.push_back(seg.reading_rank);
  }
  std::sort(ranks.begin(), ranks.end());
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (ranks[i] != static_cast<int>(i)) fail("segments.reading_rank", "not a permutation of 0..n-1");
  }
  const auto& lab = doc.labels;
  if (lab.tasks.empty()) fail("labels.tasks", "no task tags");
  if (lab.doc_class && *lab.doc_class < 0) fail("labels.doc_class", "negative");
  if (lab.relations) {
    for (const auto& [k, v] : *lab.relations) {
      if (k.empty() || v.empty()) fail("labels.relations", "empty key or value");
    }
  }
  if (lab.qa) {
    for (const auto& qa : *lab.qa) {
      if (qa.question.empty()) fail("labels.qa.q", "empty question");
      if (qa.answers.empty()) fail("labels.qa.a", "no answers");
      for (const auto& a : qa.answers) {
        if (a.empty()) fail("labels.qa.a", "empty answer");
      }
    }
  }
  if (lab.supports(Task::dc) && !lab.doc_class) fail("labels.doc_class", "required by task dc");
  if (lab.supports(Task::re) && (!lab.relations || lab.relations->empty())) {
    fail("labels.relations", "required by task re");
  }
  if (lab.supports(Task::vqa) && (!lab.qa || lab.qa->empty())) fail("labels.qa", "required by task vqa");
  for (Task t : {Task::lsc, Task::roils, Task::gtsls}) {
    if (lab.supports(t) && doc.segments.empty()) fail("segments", "required by task " + std::string(task_name(t)));
  }
}

// ---------------------------------------------------------------- raw pixels

std::vector<double> read_pixel_file(const std::filesystem::path& path, std::size_t expected_values) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ValidationError("cannot open pixel file " + path.string());
  }
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != expected_values * 8) {
    throw ValidationError("pixel file " + path.string() + " holds " + std::to_string(bytes.size()) +
                          " bytes, expected " + std::to_string(expected_values * 8));
  }
  std::vector<double> values(expected_values);
  for (std::size_t i = 0; i < expected_values; ++i) {
    std::uint64_t bits = 0;
    for (int b = 7; b >= 0; --b) bits = (bits << 8) | bytes[i * 8 + b];
    values[i] = std::bit_cast<double>(bits);
  }
  return values;
}

void write_pixel_file(const std::filesystem::path& path, std::span<const double> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw ValidationError("cannot write pixel file " + path.string());
  }
  std::vector<char> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) {
      bytes[i * 8 + b] = static_cast<char>(bits & 0xff);
      bits >>= 8;
    }
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// --------------------------------------------------------------------- JSONL

namespace {

struct FieldError {
  std::string field;
  std::string what;
};

PixelBox parse_box(const json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 4) throw FieldError{field, "expected [x1,y1,x2,y2]"};
  std::array<int, 4> v{};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!j[i].is_number_integer()) throw FieldError{field, "coordinates must be integers"};
    v[i] = j[i].get<int>();
  }
  PixelBox b{v[0], v[1], v[2], v[3]};
  if (b.x2 < b.x1 || b.y2 < b.y1) throw FieldError{field, "x2 < x1 or y2 < y1"};
  return b;
}

template <typename T>
T required(const json& obj, const char* key, const std::string& prefix = "") {
  const std::string field = prefix + key;
  if (!obj.contains(key)) throw FieldError{field, "missing"};
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw FieldError{field, "wrong type"};
  }
}

DocumentRecord parse_record(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw FieldError{"<record>", "not a JSON object"};
  DocumentRecord doc;
  doc.id = required<std::string>(j, "id");
  doc.width = required<int>(j, "width");
  doc.height = required<int>(j, "height");
  doc.channels = j.contains("channels") ? required<int>(j, "channels") : 1;
  if (doc.width < 1 || doc.height < 1) throw FieldError{"width/height", "must be positive"};
  if (doc.channels < 1) throw FieldError{"channels", "must be positive"};
  const auto n = static_cast<std::size_t>(doc.width) * doc.height * doc.channels;
  if (j.contains("pixels_path")) {
    std::filesystem::path p = required<std::string>(j, "pixels_path");
    if (p.is_relative()) p = base_dir / p;
    try {
      doc.pixels = read_pixel_file(p, n);
    } catch (const ValidationError& e) {
      throw FieldError{"pixels_path", e.what()};
    }
  } else if (j.contains("pixels_fill")) {
    doc.pixels.assign(n, required<double>(j, "pixels_fill"));
  } else {
    throw FieldError{"pixels_path", "one of pixels_path or pixels_fill is required"};
  }

  if (j.contains("lines")) {
    const auto& lines = j.at("lines");
    if (!lines.is_array()) throw FieldError{"lines", "expected an array"};
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const std::string pre = "lines[" + std::to_string(i) + "].";
      TextLine line;
      line.text = required<std::string>(lines[i], "text", pre);
      if (!lines[i].contains("box")) throw FieldError{pre + "box", "missing"};
      line.box_orig = parse_box(lines[i].at("box"), pre + "box");
      try {
        line.box = rescale_box(line.box_orig, doc.width, doc.height);
      } catch (const ValidationError& e) {
        throw FieldError{pre + "box", e.what()};
      }
      doc.lines.push_back(std::move(line));
    }
  }
  if (j.contains("segments")) {
    const auto& segs = j.at("segments");
    if (!segs.is_array()) throw FieldError{"segments", "expected an array"};
    for (std::size_t i = 0; i < segs.size(); ++i) {
      const std::string pre = "segments[" + std::to_string(i) + "].";
      LayoutSegment seg;
      if (!segs[i].contains("box")) throw FieldError{pre + "box", "missing"};
      seg.box_orig = parse_box(segs[i].at("box"), pre + "box");
      try {
        seg.box = rescale_box(seg.box_orig, doc.width, doc.height);
      } catch (const ValidationError& e) {
        throw FieldError{pre + "box", e.what()};
      }
      const auto cat = parse_category(required<std::string>(segs[i], "category", pre));
      if (!cat) throw FieldError{pre + "category", "unknown category"};
      seg.category = *cat;
      seg.reading_rank = required<int>(segs[i], "reading_rank", pre);
      if (segs[i].contains("line_indices")) {
        seg.line_indices = required<std::vector<std::size_t>>(segs[i], "line_indices", pre);
      }
      doc.segments.push_back(std::move(seg));
    }
  }
  if (!j.contains("labels")) throw FieldError{"labels", "missing"};
  const auto& lab = j.at("labels");
  if (!lab.is_object()) throw FieldError{"labels", "expected an object"};
  if (lab.contains("doc_class") && !lab.at("doc_class").is_null()) {
    doc.labels.doc_class = required<int>(lab, "doc_class", "labels.");
  }
  if (lab.contains("relations") && !lab.at("relations").is_null()) {
    doc.labels.relations = required<std::map<std::string, std::string>>(lab, "relations", "labels.");
  }
  if (lab.contains("qa") && !lab.at("qa").is_null()) {
    const auto& qa = lab.at("qa");
    if (!qa.is_array()) throw FieldError{"labels.qa", "expected an array"};
    std::vector<QaPair> pairs;
    for (std::size_t i = 0; i < qa.size(); ++i) {
      const std::string pre = "labels.qa[" + std::to_string(i) + "].";
      pairs.push_back({required<std::string>(qa[i], "q", pre), required<std::vector<std::string>>(qa[i], "a", pre)});
    }
    doc.labels.qa = std::move(pairs);
  }
  for (const auto& name : required<std::vector<std::string>>(lab, "tasks", "labels.")) {
    const auto t = parse_task(name);
    if (!t) throw FieldError{"labels.tasks", "unknown task '" + name + "'"};
    doc.labels.tasks.insert(*t);
  }
  return doc;
}

}  // namespace

std::vector<DocumentRecord> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open " + path.string());
  }
  const auto base_dir = path.parent_path();
  std::vector<DocumentRecord> docs;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ValidationError(where + ": malformed JSON: " + e.what());
    }
    try {
      docs.push_back(parse_record(j, base_dir));
      validate_record(docs.back());
    } catch (const FieldError& e) {
      throw ValidationError(where + ": field '" + e.field + "': " + e.what);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
  }
  return docs;
}

void write_jsonl(const std::filesystem::path& path, std::span<const DocumentRecord> docs,
                 const std::filesystem::path& pixel_dir) {
  std::filesystem::create_directories(pixel_dir);
  std::ofstream out(path);
  if (!out) {
    throw ValidationError("cannot write " + path.string());
  }
  const auto base_dir = path.parent_path();
  for (const auto& doc : docs) {
    json j;
    j["id"] = doc.id;
    j["width"] = doc.width;
    j["height"] = doc.height;
    if (doc.channels != 1) j["channels"] = doc.channels;
    const bool constant = !doc.pixels.empty() &&
                          std::all_of(doc.pixels.begin(), doc.pixels.end(),
                                      [&](double v) { return v == doc.pixels.front(); });
    if (constant) {
      j["pixels_fill"] = doc.pixels.front();
    } else {
      const auto file = pixel_dir / (doc.id + ".f64");
      write_pixel_file(file, doc.pixels);
      j["pixels_path"] = std::filesystem::relative(file, base_dir.empty() ? "." : base_dir).generic_string();
    }
    j["lines"] = json::array();
    for (const auto& line : doc.lines) {
      const auto& b = line.box_orig;
      j["lines"].push_back({{"text", line.text}, {"box", {b.x1, b.y1, b.x2, b.y2}}});
    }
    j["segments"] = json::array();
    for (const auto& seg : doc.segments) {
      const auto& b = seg.box_orig;
      j["segments"].push_back({{"box", {b.x1, b.y1, b.x2, b.y2}},
                               {"category", category_name(seg.category)},
                               {"reading_rank", seg.reading_rank},
                               {"line_indices", seg.line_indices}});
    }
    json lab = json::object();
    if (doc.labels.doc_class) lab["doc_class"] = *doc.labels.doc_class;
    if (doc.labels.relations) lab["relations"] = *doc.labels.relations;
    if (doc.labels.qa) {
      lab["qa"] = json::array();
      for (const auto& qa : *doc.labels.qa) lab["qa"].push_back({{"q", qa.question}, {"a", qa.answers}});
    }
    lab["tasks"] = json::array();
    for (Task t : doc.labels.tasks) lab["tasks"].push_back(task_name(t));
    j["labels"] = lab;
    out << j.dump() << '\n';
  }
}

}  // namespace mtdoc
