#include <gtest/gtest.h>

#include "mtdoc/embeddings.hpp"
#include "mtdoc/error.hpp"
#include "support.hpp"

using namespace mtdoc;
using mtdoc::testing::max_abs_diff;

namespace {

struct Fixture : ::testing::Test {
  mtdoc::testing::World world = mtdoc::testing::make_world();
  ModelState state{world.config, 3};
  std::size_t d = world.config.d;

  std::vector<double> row(const Tensor& t, std::size_t r) const {
    return {t.data().begin() + static_cast<std::ptrdiff_t>(r * t.cols()),
            t.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * t.cols())};
  }
  std::vector<double> table_row(const std::string& name, std::size_t r) const { return row(state.param(name), r); }
};

std::vector<double> plus(std::vector<double> a, const std::vector<double>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

}  // namespace

using EncodeBox = Fixture;

TEST_F(EncodeBox, NullBoxConcatenatesRowZero) {
  const Tensor e = encode_box(state, SegmentBox::null());
  std::vector<double> expect;
  for (const char* t : {"embed.coord_x1", "embed.coord_y1", "embed.coord_x2", "embed.coord_y2"}) {
    const auto r = table_row(t, 0);
    expect.insert(expect.end(), r.begin(), r.end());
  }
  EXPECT_EQ(row(e, 0), expect);
}

TEST_F(EncodeBox, EachCoordinateOwnsItsQuarterProperty) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    SegmentBox b{static_cast<int>(rng.uniform_int(1, 256)), static_cast<int>(rng.uniform_int(1, 256)),
                 static_cast<int>(rng.uniform_int(256, 512)), static_cast<int>(rng.uniform_int(256, 512))};
    const auto base = row(encode_box(state, b), 0);
    for (int c = 0; c < 4; ++c) {
      SegmentBox p = b;
      int* coord[] = {&p.x1, &p.y1, &p.x2, &p.y2};
      *coord[c] = *coord[c] == 1 ? 2 : *coord[c] - 1;
      const auto moved = row(encode_box(state, p), 0);
      for (std::size_t i = 0; i < d; ++i) {
        const bool own = i / (d / 4) == static_cast<std::size_t>(c);
        if (!own) {
          EXPECT_EQ(moved[i], base[i]);
        }
      }
      EXPECT_NE(std::vector<double>(moved.begin() + c * d / 4, moved.begin() + (c + 1) * d / 4),
                std::vector<double>(base.begin() + c * d / 4, base.begin() + (c + 1) * d / 4));
    }
  }
}

TEST_F(EncodeBox, IdenticalBoxesIdenticalVectors) {
  const SegmentBox b{3, 9, 40, 77};
  EXPECT_EQ(row(encode_box(state, b), 0), row(encode_box(state, b), 0));
}

TEST_F(EncodeBox, OutOfRangeThrows) {
  EXPECT_THROW(encode_box(state, SegmentBox{1, 1, 513, 2}), IndexError);
  EXPECT_THROW(encode_box(state, SegmentBox{-1, 1, 3, 2}), IndexError);
}

using TextEmbedding = Fixture;

TEST_F(TextEmbedding, IsWordPlusBoxPlusSeq) {
  const TokenInstance t{7, SegmentBox{10, 20, 30, 40}, 3};
  const auto got = row(embed_text_tokens(state, std::span(&t, 1)), 0);
  const auto expect = plus(plus(table_row("embed.word", 7), row(encode_box(state, t.box), 0)), table_row("embed.seq", 3));
  EXPECT_LT(max_abs_diff(got, expect), 1e-15);
}

TEST_F(TextEmbedding, ZeroTablesGiveZero) {
  for (const auto& p : state.parameters_with_prefix("embed.")) {
    Tensor t = p.tensor;
    for (auto& v : t.mutable_data()) v = 0.0;
  }
  const TokenInstance t{9, SegmentBox{1, 2, 3, 4}, 5};
  const Tensor e = embed_text_tokens(state, std::span(&t, 1));
  for (double v : e.data()) EXPECT_EQ(v, 0.0);
}

TEST_F(TextEmbedding, NullBoxSeqZeroSharesOffset) {
  const std::vector<TokenInstance> t = {{7, {}, 0}, {11, {}, 0}};
  const Tensor e = embed_text_tokens(state, t);
  std::vector<double> a(d), b(d);
  for (std::size_t i = 0; i < d; ++i) {
    a[i] = row(e, 0)[i] - table_row("embed.word", 7)[i];
    b[i] = row(e, 1)[i] - table_row("embed.word", 11)[i];
  }
  EXPECT_LT(max_abs_diff(a, b), 1e-15);
}

TEST_F(TextEmbedding, SeqidChangeMovesBySeqRowDifference) {
  const std::vector<TokenInstance> t = {{7, {5, 5, 9, 9}, 2}, {7, {5, 5, 9, 9}, 6}};
  const Tensor e = embed_text_tokens(state, t);
  for (std::size_t i = 0; i < d; ++i) {
    EXPECT_NEAR(row(e, 1)[i] - row(e, 0)[i], table_row("embed.seq", 6)[i] - table_row("embed.seq", 2)[i], 1e-15);
  }
}

using PatchEmbedding = Fixture;

TEST_F(PatchEmbedding, ZeroPatchZeroBiasIsPositionalOnly) {
  Tensor bias = state.param("embed.patch.bias");
  for (auto& v : bias.mutable_data()) v = 0.0;
  const std::vector<double> patch(state.config().patch_dim(), 0.0);
  const SegmentBox b{33, 1, 64, 32};
  const auto got = row(embed_patch(state, patch, b), 0);
  EXPECT_LT(max_abs_diff(got, plus(row(encode_box(state, b), 0), table_row("embed.seq", 0))), 1e-15);
}

TEST_F(PatchEmbedding, ProjectionIsLinear) {
  Rng rng(2);
  Tensor bias = state.param("embed.patch.bias");
  for (auto& v : bias.mutable_data()) v = 0.0;
  std::vector<double> p(state.config().patch_dim()), zero(p.size(), 0.0), scaled(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = rng.uniform01();
    scaled[i] = 2.5 * p[i];
  }
  const SegmentBox b{1, 1, 32, 32};
  const auto pos = row(embed_patch(state, zero, b), 0);
  const auto e1 = row(embed_patch(state, p, b), 0), e2 = row(embed_patch(state, scaled, b), 0);
  for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(e2[i] - pos[i], 2.5 * (e1[i] - pos[i]), 1e-12);
}

TEST_F(PatchEmbedding, SameContentSameBoxSameVector) {
  const std::vector<double> p(state.config().patch_dim(), 0.3);
  const SegmentBox b{1, 1, 32, 32};
  EXPECT_EQ(row(embed_patch(state, p, b), 0), row(embed_patch(state, p, b), 0));
}

TEST_F(PatchEmbedding, WrongLengthThrows) {
  const std::vector<double> p(10, 0.0);
  EXPECT_THROW(embed_patch(state, p, SegmentBox{1, 1, 32, 32}), DimensionError);
}

TEST_F(PatchEmbedding, BlankFoldingMatchesDenseProjection) {
  const auto& doc = world.stores.at(DatasetRole::classification).front();
  const Tensor fast = embed_patches(state, doc.compact, doc.patches.boxes);
  // Dense oracle: every patch through the projection individually.
  for (std::size_t i = 0; i < doc.patches.count(); ++i) {
    const auto slow = row(embed_patch(state, doc.patches.patch(i), doc.patches.boxes[i]), 0);
    EXPECT_LT(max_abs_diff(row(fast, i), slow), 1e-13) << "patch " << i;
  }
  EXPECT_LT(doc.compact.values.rows(), doc.patches.count());
}

using Assembly = Fixture;

TEST_F(Assembly, TextThenPatchesWithBookkeeping) {
  const auto& doc = world.stores.at(DatasetRole::layout).front();
  const AssembledInput in = assemble_input(state, doc);
  ASSERT_EQ(in.embeddings.rows(), doc.tokens.size() + doc.patches.count());
  for (std::size_t i = 0; i < in.positions.size(); ++i) {
    const auto& p = in.positions[i];
    if (i < doc.tokens.size()) {
      EXPECT_EQ(p.kind, PositionKind::text);
      EXPECT_EQ(p.source, i);
      EXPECT_GE(p.seqid, 1);
    } else {
      EXPECT_EQ(p.kind, PositionKind::patch);
      EXPECT_EQ(p.seqid, 0);
      EXPECT_EQ(p.box, doc.patches.boxes[i - doc.tokens.size()]);
    }
  }
  for (auto v : in.key_valid) EXPECT_EQ(v, 1);
}

TEST_F(Assembly, PaddingMasked) {
  const auto& doc = world.stores.at(DatasetRole::vqa).front();
  const std::size_t n = doc.tokens.size() + doc.patches.count();
  const AssembledInput in = assemble_input(state, doc, {}, n + 5);
  ASSERT_EQ(in.key_valid.size(), n + 5);
  for (std::size_t i = 0; i < n + 5; ++i) EXPECT_EQ(in.key_valid[i], i < n ? 1 : 0);
  EXPECT_EQ(in.positions.back().kind, PositionKind::pad);
}

TEST_F(Assembly, Deterministic) {
  const auto& doc = world.stores.at(DatasetRole::relations_a).front();
  const auto a = assemble_input(state, doc), b = assemble_input(state, doc);
  EXPECT_EQ(std::vector<double>(a.embeddings.data().begin(), a.embeddings.data().end()),
            std::vector<double>(b.embeddings.data().begin(), b.embeddings.data().end()));
}

TEST_F(Assembly, OverflowTruncatesWithWarning) {
  ModelConfig small = world.config;
  small.max_text_tokens = 3;
  small.max_patches = 4;
  const auto& rec = world.corpus.at(DatasetRole::layout).front();
  const PreparedDocument doc = prepare_document(rec, world.tokenizer, small);
  EXPECT_EQ(doc.tokens.size(), 3u);
  EXPECT_EQ(doc.patches.count(), 4u);
  EXPECT_EQ(doc.warnings.size(), 2u);
  ModelState s(small, 1);
  EXPECT_EQ(assemble_input(s, doc).embeddings.rows(), 7u);
}

TEST_F(Assembly, ReplacementIdsMustCoverEveryToken) {
  const auto& doc = world.stores.at(DatasetRole::layout).front();
  const std::vector<TokenId> ids = {special::kMask};
  EXPECT_THROW(assemble_input(state, doc, ids), ContractError);
}

TEST_F(Assembly, GradientReachesEveryEmbeddingTable) {
  const auto& doc = world.stores.at(DatasetRole::classification).front();
  const AssembledInput in = assemble_input(state, doc);
  // One text token and one patch row.
  const std::vector<std::size_t> rows = {0, doc.tokens.size()};
  const auto params = state.parameters();
  zero_grad(params);
  backward(sum(mul(gather_rows(in.embeddings, rows), gather_rows(in.embeddings, rows))));
  for (const char* name : {"embed.word", "embed.coord_x1", "embed.coord_y1", "embed.coord_x2", "embed.coord_y2",
                           "embed.seq", "embed.patch.weight", "embed.patch.bias"}) {
    const auto g = state.param(name).grad();
    EXPECT_TRUE(std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; })) << name;
  }
}
