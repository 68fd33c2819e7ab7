#include <gtest/gtest.h>

#include <fstream>

#include "mtdoc/error.hpp"
#include "mtdoc/synthetic.hpp"
#include "support.hpp"

using namespace mtdoc;

TEST(RescaleBox, HalvesLongSide) {
  EXPECT_EQ(rescale_box({2, 2, 1024, 512}, 1024, 512), (SegmentBox{1, 1, 512, 256}));
}

TEST(RescaleBox, IdentityAtCanonicalScale) {
  EXPECT_EQ(rescale_box({10, 20, 100, 200}, 512, 384), (SegmentBox{10, 20, 100, 200}));
}

TEST(RescaleBox, DegeneratePointStaysValid) {
  for (auto [w, h] : {std::pair{7, 3}, std::pair{5000, 20}, std::pair{512, 512}}) {
    const SegmentBox b = rescale_box({1, 1, 1, 1}, w, h);
    EXPECT_TRUE(b.valid());
    EXPECT_FALSE(b.is_null());
    EXPECT_EQ(b.x1, b.x2);
  }
}

TEST(RescaleBox, OutsideImageThrows) {
  EXPECT_THROW(rescale_box({0, 0, 101, 10}, 100, 100), ValidationError);
  EXPECT_THROW(rescale_box({5, 0, 4, 10}, 100, 100), ValidationError);
}

TEST(Patchify, GridArithmetic) {
  const std::vector<double> a(512 * 384, 0.0);
  const PatchGrid g = resize_and_patchify(a, 512, 384);
  EXPECT_EQ(g.columns, 16);
  EXPECT_EQ(g.rows, 12);
  EXPECT_EQ(g.count(), 192u);
  EXPECT_EQ(g.patch_dim(), 1024u);

  const std::vector<double> b(500 * 500, 0.0);
  const PatchGrid h = resize_and_patchify(b, 500, 500);
  EXPECT_EQ(h.resized_width, 512);
  EXPECT_EQ(h.resized_height, 512);
  EXPECT_EQ(h.count(), 256u);
}

TEST(Patchify, ConstantImageStaysConstant) {
  const std::vector<double> px(300 * 200, 0.5);
  const PatchGrid g = resize_and_patchify(px, 300, 200);
  // 512 x 341 resized: the last patch row is partly padding.
  for (std::size_t i = 0; i < g.count(); ++i) {
    const auto p = g.patch(i);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const int cy = g.boxes[i].y1 - 1 + y;
        const double v = p[static_cast<std::size_t>(y) * 32 + x];
        if (cy < g.resized_height) {
          EXPECT_NEAR(v, 0.5, 1e-15);
        } else {
          EXPECT_EQ(v, 0.0);
        }
      }
  }
}

TEST(Patchify, ChannelLastLayout) {
  std::vector<double> px(64 * 64 * 3);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<double>(i % 3) / 2.0;
  const PatchGrid g = resize_and_patchify(px, 64, 64, 3);
  EXPECT_EQ(g.patch_dim(), 3072u);
  const auto p = g.patch(0);
  EXPECT_NEAR(p[0], 0.0, 1e-15);
  EXPECT_NEAR(p[1], 0.5, 1e-15);
  EXPECT_NEAR(p[2], 1.0, 1e-15);
}

TEST(Patchify, EmptyImageThrows) { EXPECT_THROW(resize_and_patchify({}, 0, 10), ValidationError); }

TEST(CoordinatePipeline, RandomGeometriesProperty) {
  Rng rng(2024);
  for (int i = 0; i < 150; ++i) {
    const int w = static_cast<int>(rng.uniform_int(1, 900));
    const int h = static_cast<int>(rng.uniform_int(1, 900));
    const std::string err = mtdoc::testing::check_geometry(w, h, rng);
    ASSERT_TRUE(err.empty()) << err;
  }
}

namespace {

void write_lines(const std::filesystem::path& p, std::initializer_list<std::string> lines) {
  std::ofstream out(p);
  for (const auto& l : lines) out << l << '\n';
}

const char* kValid =
    R"({"id":"d1","width":1024,"height":512,"pixels_fill":0.0,)"
    R"("lines":[{"text":"Total 12","box":[2,2,1024,512]}],"labels":{"doc_class":3,"tasks":["mlm","dc"]}})";

}  // namespace

TEST(Jsonl, EmptyFileGivesNoRecords) {
  const auto dir = mtdoc::testing::scratch_dir("jsonl_empty");
  write_lines(dir / "a.jsonl", {});
  EXPECT_TRUE(load_jsonl(dir / "a.jsonl").empty());
}

TEST(Jsonl, ValidRecordHasCanonicalBoxes) {
  const auto dir = mtdoc::testing::scratch_dir("jsonl_valid");
  write_lines(dir / "a.jsonl", {kValid});
  const auto docs = load_jsonl(dir / "a.jsonl");
  ASSERT_EQ(docs.size(), 1u);
  EXPECT_EQ(docs[0].lines[0].box, (SegmentBox{1, 1, 512, 256}));
  EXPECT_EQ(docs[0].labels.doc_class, 3);
  EXPECT_TRUE(docs[0].labels.supports(Task::dc));
}

TEST(Jsonl, InvertedBoxNamesLine) {
  const auto dir = mtdoc::testing::scratch_dir("jsonl_bad");
  write_lines(dir / "a.jsonl",
              {kValid, R"({"id":"d2","width":10,"height":10,"pixels_fill":0.0,)"
                       R"("lines":[{"text":"x","box":[5,1,2,3]}],"labels":{"tasks":["mlm"]}})"});
  try {
    load_jsonl(dir / "a.jsonl");
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(":2:"), std::string::npos) << msg;
    EXPECT_NE(msg.find("lines[0]"), std::string::npos) << msg;
  }
}

TEST(Jsonl, MissingFieldIsNamed) {
  const auto dir = mtdoc::testing::scratch_dir("jsonl_missing");
  write_lines(dir / "a.jsonl", {R"({"id":"d","height":10,"pixels_fill":0.0,"labels":{"tasks":["mlm"]}})"});
  try {
    load_jsonl(dir / "a.jsonl");
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("width"), std::string::npos) << e.what();
  }
}

TEST(Jsonl, SyntheticCorpusRoundTrips) {
  const auto dir = mtdoc::testing::scratch_dir("jsonl_roundtrip");
  SyntheticSpec spec;
  spec.counts.fill(2);
  const Corpus corpus = generate_synthetic_corpus(4, spec);
  for (const auto& [role, docs] : corpus) {
    const auto path = dir / (std::string(role_name(role)) + ".jsonl");
    write_jsonl(path, docs, dir / "pixels");
    const auto back = load_jsonl(path);
    ASSERT_EQ(back.size(), docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
      EXPECT_EQ(back[i].id, docs[i].id);
      EXPECT_EQ(back[i].pixels, docs[i].pixels);
      ASSERT_EQ(back[i].lines.size(), docs[i].lines.size());
      for (std::size_t l = 0; l < docs[i].lines.size(); ++l) EXPECT_EQ(back[i].lines[l].box, docs[i].lines[l].box);
      EXPECT_EQ(back[i].labels.tasks, docs[i].labels.tasks);
      EXPECT_EQ(back[i].reading_order(), docs[i].reading_order());
    }
  }
}

TEST(Synthetic, SameSeedIsBitIdentical) {
  SyntheticSpec spec;
  spec.counts.fill(3);
  const Corpus a = generate_synthetic_corpus(9, spec), b = generate_synthetic_corpus(9, spec);
  for (auto role : kAllRoles) {
    ASSERT_EQ(a.at(role).size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_EQ(a.at(role)[i].pixels, b.at(role)[i].pixels);
      ASSERT_EQ(a.at(role)[i].lines.size(), b.at(role)[i].lines.size());
      for (std::size_t l = 0; l < a.at(role)[i].lines.size(); ++l) {
        EXPECT_EQ(a.at(role)[i].lines[l].text, b.at(role)[i].lines[l].text);
      }
    }
  }
}

TEST(Synthetic, WatermarkPatchMeanEncodesClass) {
  SyntheticSpec spec;
  spec.counts.fill(0);
  spec.counts[0] = 16;
  const Corpus c = generate_synthetic_corpus(5, spec);
  for (const auto& doc : c.at(DatasetRole::classification)) {
    const int k = *doc.labels.doc_class;
    const PatchGrid g = resize_and_patchify(doc.pixels, doc.width, doc.height, doc.channels);
    const auto p = g.patch(0);
    double mean = 0.0;
    for (double v : p) mean += v;
    mean /= static_cast<double>(p.size());
    EXPECT_NEAR(mean, 0.1 + 0.05 * k, 1e-12) << doc.id;
  }
}

TEST(Synthetic, RelationLabelsMatchValueLines) {
  SyntheticSpec spec;
  spec.counts.fill(2);
  const Corpus c = generate_synthetic_corpus(6, spec);
  for (auto role : {DatasetRole::relations_a, DatasetRole::relations_b, DatasetRole::relations_c,
                    DatasetRole::relations_d}) {
    for (const auto& doc : c.at(role)) {
      ASSERT_TRUE(doc.labels.relations.has_value());
      EXPECT_EQ(doc.labels.relations->size(), role_relation_keys(role).size());
      for (const auto& [key, value] : *doc.labels.relations) {
        // The key line is immediately followed by its value line.
        bool found = false;
        for (std::size_t l = 0; l + 1 < doc.lines.size(); ++l) {
          if (doc.lines[l].text == key && doc.lines[l + 1].text == value) found = true;
        }
        EXPECT_TRUE(found) << doc.id << " " << key;
      }
    }
  }
}

TEST(Synthetic, EveryBoxIsCanonical) {
  SyntheticSpec spec;
  const Corpus c = generate_synthetic_corpus(7, spec);
  for (const auto& [role, docs] : c) {
    for (const auto& doc : docs) {
      EXPECT_NO_THROW(validate_record(doc));
      for (const auto& l : doc.lines) {
        EXPECT_TRUE(l.box.valid());
        EXPECT_FALSE(l.box.is_null());
      }
      for (const auto& s : doc.segments) EXPECT_FALSE(s.box.is_null());
    }
  }
}

TEST(Synthetic, LayoutOrderIsColumnMajor) {
  SyntheticSpec spec;
  const Corpus c = generate_synthetic_corpus(8, spec);
  for (const auto& doc : c.at(DatasetRole::layout)) {
    const auto order = doc.reading_order();
    for (std::size_t r = 1; r < order.size(); ++r) {
      const auto& prev = doc.segments[order[r - 1]].box;
      const auto& cur = doc.segments[order[r]].box;
      // Same column: top to bottom; otherwise the right column follows.
      if (prev.x1 == cur.x1) {
        EXPECT_LT(prev.y1, cur.y1);
      } else {
        EXPECT_LT(prev.x1, cur.x1);
      }
    }
  }
}

TEST(Synthetic, RecordCountsFollowSpec) {
  SyntheticSpec spec;
  spec.counts = {1, 2, 3, 4, 5, 6, 7};
  const Corpus c = generate_synthetic_corpus(1, spec);
  for (std::size_t r = 0; r < kRoleCount; ++r) EXPECT_EQ(c.at(kAllRoles[r]).size(), r + 1);
}
