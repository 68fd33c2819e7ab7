#include "mtdoc/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>

#include "mtdoc/error.hpp"
#include "mtdoc/rng.hpp"

namespace mtdoc {

namespace {

constexpr std::array<std::string_view, kRoleCount> kRoleNames = {
    "classification", "relations_a", "relations_b", "relations_c", "relations_d", "vqa", "layout"};

constexpr std::array<std::string_view, 16> kClassNames = {
    "letter", "form",        "email",  "handwritten",  "advertisement", "report",        "news",   "specification",
    "file",   "publication", "budget", "invoice",      "presentation",  "questionnaire", "resume", "memo"};

constexpr std::array<std::string_view, 10> kSyllables = {"ka", "lo", "mi", "ne", "ru", "sa", "to", "vi", "be", "do"};
constexpr std::array<std::string_view, 8> kFirstNames = {"anna", "boris", "clara", "david",
                                                         "elena", "felix", "greta", "hugo"};
constexpr std::array<std::string_view, 8> kLastNames = {"adler", "brandt", "conti", "dorsey",
                                                        "engel", "fisher", "garcia", "hansen"};
constexpr std::array<std::string_view, 6> kStreets = {"oak", "pine", "elm", "maple", "cedar", "birch"};
constexpr std::array<std::string_view, 6> kStates = {"delaware", "texas", "ohio", "nevada", "oregon", "utah"};
constexpr std::array<std::string_view, 6> kVqaKeys = {"total", "date", "name", "city", "phone", "amount"};
constexpr std::array<std::string_view, 6> kCities = {"berlin", "paris", "madrid", "oslo", "vienna", "lisbon"};

constexpr double kTextInk = 0.9;

template <std::size_t N>
std::string pick(Rng& rng, const std::array<std::string_view, N>& pool) {
  return std::string(pool[rng.uniform_index(N)]);
}

std::string two_digits(std::int64_t v) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%02lld", static_cast<long long>(v));
  return buf;
}

std::string money(Rng& rng) { return std::to_string(rng.uniform_int(1, 99)) + "." + two_digits(rng.uniform_int(0, 99)); }

std::string date(Rng& rng) {
  return two_digits(rng.uniform_int(1, 28)) + "/" + two_digits(rng.uniform_int(1, 12)) + "/" +
         std::to_string(rng.uniform_int(2010, 2024));
}

std::string value_for(std::string_view key, Rng& rng, const std::vector<std::string>& filler) {
  if (key == "name") return pick(rng, kFirstNames) + " " + pick(rng, kLastNames);
  if (key == "date" || key == "effective date") return date(rng);
  if (key == "phone") return "555-" + std::to_string(rng.uniform_int(1000, 9999));
  if (key == "address") return std::to_string(rng.uniform_int(1, 99)) + " " + pick(rng, kStreets) + " street";
  if (key == "total" || key == "subtotal" || key == "tax" || key == "cash" || key == "amount") return money(rng);
  if (key == "company") return filler[rng.uniform_index(filler.size())] + " ltd";
  if (key == "party") return filler[rng.uniform_index(filler.size())] + " inc";
  if (key == "jurisdiction") return pick(rng, kStates);
  if (key == "term") return std::to_string(rng.uniform_int(1, 9)) + " years";
  if (key == "city") return pick(rng, kCities);
  return filler[rng.uniform_index(filler.size())];
}

std::vector<std::string> filler_vocabulary(std::size_t n) {
  std::vector<std::string> words;
  for (std::size_t i = 0; i < n; ++i) {
    std::string w = std::string(kSyllables[i % 10]) + std::string(kSyllables[(i / 10) % 10]);
    if (i >= 100) w += kSyllables[(i / 100) % 10];
    if (i >= 1000) w += std::to_string(i / 1000);
    words.push_back(std::move(w));
  }
  return words;
}

std::string filler_phrase(Rng& rng, const std::vector<std::string>& filler, std::size_t words) {
  std::string out;
  for (std::size_t i = 0; i < words; ++i) {
    if (!out.empty()) out += ' ';
    out += filler[rng.uniform_index(filler.size())];
  }
  return out;
}

// Page under construction; geometry is expressed as fractions of the page so
// any spec size works.
class Page {
 public:
  Page(const SyntheticSpec& spec, std::string id)
      : w_(spec.width), h_(spec.height), c_(spec.channels) {
    doc_.id = std::move(id);
    doc_.width = w_;
    doc_.height = h_;
    doc_.channels = c_;
    doc_.pixels.assign(static_cast<std::size_t>(w_) * h_ * c_, 0.0);
  }

  PixelBox box(double fx1, double fy1, double fx2, double fy2) const {
    const auto px = [](double f, int extent) { return std::clamp(static_cast<int>(std::lround(f * extent)), 0, extent); };
    PixelBox b{px(fx1, w_), px(fy1, h_), px(fx2, w_), px(fy2, h_)};
    b.x2 = std::max(b.x2, std::min(b.x1 + 1, w_));
    b.y2 = std::max(b.y2, std::min(b.y1 + 1, h_));
    return b;
  }

  void fill(const PixelBox& b, double value) {
    for (int y = b.y1; y < b.y2; ++y) {
      for (int x = b.x1; x < b.x2; ++x) {
        for (int ch = 0; ch < c_; ++ch) doc_.pixels[(static_cast<std::size_t>(y) * w_ + x) * c_ + ch] = value;
      }
    }
  }

  // Width of a text line grows with its length up to `max_fx`.
  std::size_t line(std::string text, double fx, double fy, double max_fx, double fh, double ink = kTextInk) {
    const double fw = std::min(max_fx - fx, 0.012 * static_cast<double>(text.size() + 1));
    const PixelBox b = box(fx, fy, fx + fw, fy + fh);
    fill(b, ink);
    doc_.lines.push_back({std::move(text), b, rescale_box(b, w_, h_)});
    return doc_.lines.size() - 1;
  }

  void segment(const PixelBox& b, SegmentCategory category, int rank, std::vector<std::size_t> lines) {
    doc_.segments.push_back({rescale_box(b, w_, h_), b, category, rank, std::move(lines)});
  }

  DocumentRecord& doc() { return doc_; }
  int width() const { return w_; }
  int height() const { return h_; }

 private:
  int w_, h_, c_;
  DocumentRecord doc_;
};

DocumentRecord classification_doc(const SyntheticSpec& spec, Rng& rng, const std::vector<std::string>& filler,
                                  const std::string& id) {
  Page page(spec, id);
  const int k = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(spec.num_classes)));
  const PixelBox wm = watermark_box(spec.width, spec.height);
  page.fill(wm, watermark_intensity(k));
  const double left = static_cast<double>(wm.x2) / spec.width + 0.03;
  page.line(class_keywords(spec.num_classes)[static_cast<std::size_t>(k)], left, 0.06, 0.97, 0.12);
  page.line(filler_phrase(rng, filler, 3), left, 0.36, 0.97, 0.12);
  page.line(filler_phrase(rng, filler, 3), left, 0.66, 0.97, 0.12);
  auto& doc = page.doc();
  doc.labels.doc_class = k;
  doc.labels.tasks = role_tasks(DatasetRole::classification);
  return std::move(doc);
}

DocumentRecord relations_doc(const SyntheticSpec& spec, DatasetRole role, Rng& rng,
                             const std::vector<std::string>& filler, const std::string& id) {
  Page page(spec, id);
  const auto keys = role_relation_keys(role);
  std::map<std::string, std::string> relations;
  const double row = 1.0 / static_cast<double>(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const double fy = row * (static_cast<double>(i) + 0.1);
    const std::string value = value_for(keys[i], rng, filler);
    page.line(keys[i], 0.02, fy, 0.45, row * 0.5);
    page.line(value, 0.5, fy, 0.98, row * 0.5);
    relations[keys[i]] = value;
  }
  auto& doc = page.doc();
  doc.labels.relations = std::move(relations);
  doc.labels.tasks = role_tasks(role);
  return std::move(doc);
}

DocumentRecord vqa_doc(const SyntheticSpec& spec, Rng& rng, const std::vector<std::string>& filler,
                       const std::string& id) {
  Page page(spec, id);
  std::vector<std::string> keys(kVqaKeys.begin(), kVqaKeys.end());
  for (std::size_t i = keys.size(); i > 1; --i) std::swap(keys[i - 1], keys[rng.uniform_index(i)]);
  keys.resize(3);
  std::vector<QaPair> qa;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const std::string value = value_for(keys[i], rng, filler);
    page.line(keys[i] + " " + value, 0.03, 0.06 + 0.32 * static_cast<double>(i), 0.97, 0.16);
    if (i < 2) qa.push_back({"what is the " + keys[i], {value}});
  }
  auto& doc = page.doc();
  doc.labels.qa = std::move(qa);
  doc.labels.tasks = role_tasks(DatasetRole::vqa);
  return std::move(doc);
}

DocumentRecord layout_doc(const SyntheticSpec& spec, Rng& rng, const std::vector<std::string>& filler,
                          const std::string& id) {
  Page page(spec, id);
  constexpr std::array<double, kSegmentCategoryCount> ink = {0.9, 1.0, 0.8, 0.5, 0.7};
  int rank = 0;
  for (int col = 0; col < 2; ++col) {
    const double x1 = col == 0 ? 0.02 : 0.52;
    const double x2 = col == 0 ? 0.48 : 0.98;
    const int segments = 1 + static_cast<int>(rng.uniform_index(2));
    const double band = 1.0 / segments;
    for (int s = 0; s < segments; ++s) {
      const auto cat = static_cast<SegmentCategory>(rng.uniform_index(kSegmentCategoryCount));
      const double top = band * s + 0.04;
      const double bottom = band * (s + 1) - 0.04;
      const double ink_value = ink[static_cast<std::size_t>(cat)];
      std::vector<std::size_t> lines;
      double line_right = x1;
      const auto add_line = [&](std::string text, double fy, double fh) {
        const auto li = page.line(std::move(text), x1, fy, x2, fh, ink_value);
        line_right = std::max(line_right, static_cast<double>(page.doc().lines[li].box_orig.x2) / page.width());
        lines.push_back(li);
      };
      const double fh = (bottom - top) * 0.4;
      switch (cat) {
        case SegmentCategory::title:
          add_line(filler_phrase(rng, filler, 2), top, fh);
          break;
        case SegmentCategory::text:
          add_line(filler_phrase(rng, filler, 3), top, fh);
          add_line(filler_phrase(rng, filler, 2), top + (bottom - top) * 0.55, fh);
          break;
        case SegmentCategory::list:
          add_line("- " + filler_phrase(rng, filler, 1), top, fh);
          add_line("- " + filler_phrase(rng, filler, 1), top + (bottom - top) * 0.55, fh);
          break;
        case SegmentCategory::table:
          add_line(std::to_string(rng.uniform_int(10, 99)) + " " + std::to_string(rng.uniform_int(10, 99)), top,
                   fh);
          add_line(std::to_string(rng.uniform_int(10, 99)) + " " + std::to_string(rng.uniform_int(10, 99)),
                   top + (bottom - top) * 0.55, fh);
          break;
        case SegmentCategory::figure:
          line_right = x1 + (x2 - x1) * 0.6;
          break;
      }
      const PixelBox b = page.box(x1, top, line_right, bottom);
      if (cat == SegmentCategory::figure) page.fill(b, ink_value);
      page.segment(b, cat, rank++, std::move(lines));
    }
  }
  auto& doc = page.doc();
  doc.labels.tasks = role_tasks(DatasetRole::layout);
  return std::move(doc);
}

}  // namespace

std::string_view role_name(DatasetRole role) { return kRoleNames[static_cast<std::size_t>(role)]; }

std::optional<DatasetRole> parse_role(std::string_view name) {
  for (std::size_t i = 0; i < kRoleCount; ++i) {
    if (kRoleNames[i] == name) return kAllRoles[i];
  }
  return std::nullopt;
}

std::set<Task> role_tasks(DatasetRole role) {
  switch (role) {
    case DatasetRole::classification: return {Task::mlm, Task::dc};
    case DatasetRole::relations_a:
    case DatasetRole::relations_b:
    case DatasetRole::relations_c:
    case DatasetRole::relations_d: return {Task::mlm, Task::re};
    case DatasetRole::vqa: return {Task::mlm, Task::vqa};
    case DatasetRole::layout: return {Task::mlm, Task::lsc, Task::roils, Task::gtsls};
  }
  return {Task::mlm};
}

std::vector<std::string> role_relation_keys(DatasetRole role) {
  switch (role) {
    case DatasetRole::relations_a: return {"name", "date", "phone", "address"};
    case DatasetRole::relations_b: return {"total", "subtotal", "tax", "cash"};
    case DatasetRole::relations_c: return {"company", "date", "address", "total"};
    case DatasetRole::relations_d: return {"party", "jurisdiction", "term", "effective date"};
    default: return {};
  }
}

void SyntheticSpec::validate() const {
  if (filler_words < 2) throw ConfigError("synthetic spec: filler_words must be at least 2");
  if (num_classes < 1) throw ConfigError("synthetic spec: num_classes must be positive");
  if (channels < 1) throw ConfigError("synthetic spec: channels must be positive");
  if (width < 64 || height < 16) throw ConfigError("synthetic spec: page must be at least 64 x 16 pixels");
  const auto [rw, rh] = resized_extent(width, height);
  if (rw < 2 * kPatchSide || rh < kPatchSide) {
    throw ConfigError("synthetic spec: resized page must hold at least two patches across and one down");
  }
  if (static_cast<double>(watermark_box(width, height).x2) > 0.45 * width) {
    throw ConfigError("synthetic spec: page too narrow for the classification watermark");
  }
}

void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  nlohmann::json counts;
  for (std::size_t i = 0; i < kRoleCount; ++i) counts[std::string(kRoleNames[i])] = s.counts[i];
  j = nlohmann::json{{"counts", counts},       {"filler_words", s.filler_words}, {"num_classes", s.num_classes},
                     {"width", s.width},       {"height", s.height},             {"channels", s.channels}};
}

void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  if (j.contains("counts")) {
    for (const auto& [name, value] : j.at("counts").items()) {
      const auto role = parse_role(name);
      if (!role) throw ConfigError("synthetic spec: unknown role '" + name + "'");
      s.counts[static_cast<std::size_t>(*role)] = value.get<std::size_t>();
    }
  }
  if (j.contains("docs_per_role")) s.counts.fill(j.at("docs_per_role").get<std::size_t>());
  if (j.contains("filler_words")) j.at("filler_words").get_to(s.filler_words);
  if (j.contains("num_classes")) j.at("num_classes").get_to(s.num_classes);
  if (j.contains("width")) j.at("width").get_to(s.width);
  if (j.contains("height")) j.at("height").get_to(s.height);
  if (j.contains("channels")) j.at("channels").get_to(s.channels);
}

double watermark_intensity(int doc_class) { return std::min(1.0, 0.1 + 0.05 * doc_class); }

PixelBox watermark_box(int width, int height) {
  // Bilinear sampling of the first resized patch reads source pixels up to
  // (32 - 0.5) / scale - 0.5; one extra pixel keeps that neighbourhood flat.
  const double s = static_cast<double>(kCanonicalSide) / std::max(width, height);
  const int extent = static_cast<int>(std::ceil(kPatchSide / s)) + 1;
  return {0, 0, std::min(extent, width), std::min(extent, height)};
}

std::vector<std::string> class_keywords(int num_classes) {
  std::vector<std::string> out;
  for (int k = 0; k < num_classes; ++k) {
    out.push_back(k < static_cast<int>(kClassNames.size()) ? std::string(kClassNames[static_cast<std::size_t>(k)])
                                                           : "class" + std::to_string(k));
  }
  return out;
}

Corpus generate_synthetic_corpus(std::uint64_t seed, const SyntheticSpec& spec) {
  spec.validate();
  const auto filler = filler_vocabulary(spec.filler_words);
  Corpus corpus;
  for (std::size_t r = 0; r < kRoleCount; ++r) {
    const DatasetRole role = kAllRoles[r];
    auto& docs = corpus[role];
    for (std::size_t i = 0; i < spec.counts[r]; ++i) {
      Rng rng = Rng::derive(seed, (static_cast<std::uint64_t>(r) << 32) | i);
      char idx[16];
      std::snprintf(idx, sizeof idx, "%04zu", i);
      const std::string id = std::string(role_name(role)) + "-" + idx;
      switch (role) {
        case DatasetRole::classification: docs.push_back(classification_doc(spec, rng, filler, id)); break;
        case DatasetRole::vqa: docs.push_back(vqa_doc(spec, rng, filler, id)); break;
        case DatasetRole::layout: docs.push_back(layout_doc(spec, rng, filler, id)); break;
        default: docs.push_back(relations_doc(spec, role, rng, filler, id)); break;
      }
      validate_record(docs.back());
    }
  }
  return corpus;
}

}  // namespace mtdoc
