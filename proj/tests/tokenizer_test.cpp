#include <gtest/gtest.h>

#include "mtdoc/error.hpp"
#include "mtdoc/tokenizer.hpp"
#include "support.hpp"

using namespace mtdoc;

namespace {

WordCharTokenizer make_tokenizer(std::vector<std::string> corpus) { return WordCharTokenizer(Vocab::build(corpus)); }

}  // namespace

TEST(Vocab, FrequencyThenLexicographic) {
  const std::vector<std::string> corpus = {"a b", "a"};
  const Vocab v = Vocab::build(corpus);
  EXPECT_EQ(v.find("a"), TokenId{6});
  EXPECT_EQ(v.find("b"), TokenId{7});
  EXPECT_EQ(v.token(special::kPad), "<pad>");
}

TEST(Vocab, EmptyStringsContributeNothing) {
  const std::vector<std::string> a = {"x y"}, b = {"", "x y", "   "};
  EXPECT_EQ(Vocab::build(a), Vocab::build(b));
}

TEST(Vocab, RebuildIsIdentical) {
  const std::vector<std::string> corpus = {"total 12", "tax 3", "Total due"};
  EXPECT_EQ(Vocab::build(corpus), Vocab::build(corpus));
}

TEST(Vocab, SaveLoadRoundTrip) {
  const auto dir = mtdoc::testing::scratch_dir("vocab");
  const std::vector<std::string> corpus = {"total 12", "tax 3"};
  const Vocab v = Vocab::build(corpus);
  v.save(dir / "vocab.txt");
  EXPECT_EQ(Vocab::load(dir / "vocab.txt"), v);
}

TEST(Vocab, UnknownIdThrows) {
  const Vocab v;
  EXPECT_THROW(v.token(1000), IndexError);
}

TEST(TokenizeLine, WordsShareBoxWithOneBasedSeqids) {
  const auto tok = make_tokenizer({"total 12"});
  const SegmentBox box{3, 4, 50, 9};
  const auto t = tokenize_line(tok, "Total 12", box);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0].seqid, 1);
  EXPECT_EQ(t[1].seqid, 2);
  EXPECT_EQ(t[0].box, box);
  EXPECT_EQ(t[1].box, box);
}

TEST(TokenizeLine, UnknownWordFallsBackToCharacters) {
  const auto tok = make_tokenizer({"x y"});
  const auto t = tokenize_line(tok, "xy", SegmentBox{1, 1, 2, 2});
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(tok.vocab().token(t[0].id), "x");
  EXPECT_EQ(tok.vocab().token(t[1].id), "##y");
  EXPECT_EQ(t[0].seqid, 1);
  EXPECT_EQ(t[1].seqid, 2);
  EXPECT_EQ(tok.decode(std::vector<TokenId>{t[0].id, t[1].id}), "xy");
}

TEST(TokenizeLine, UnknownCharacterBecomesUnk) {
  const auto tok = make_tokenizer({"ab"});
  const auto ids = tok.encode("a?");
  ASSERT_EQ(ids.size(), 2u);
  EXPECT_EQ(ids[1], special::kUnk);
}

TEST(TokenizeLine, SeqidCappedAt512) {
  const auto tok = make_tokenizer({"w"});
  std::string text;
  for (int i = 0; i < 600; ++i) text += "w ";
  const auto t = tokenize_line(tok, text, SegmentBox{1, 1, 1, 1});
  ASSERT_EQ(t.size(), 600u);
  EXPECT_EQ(t[511].seqid, 512);
  EXPECT_EQ(t[599].seqid, 512);
}

TEST(Detokenize, EdgeCases) {
  const auto tok = make_tokenizer({"total 12"});
  EXPECT_EQ(tok.decode(std::vector<TokenId>{}), "");
  EXPECT_EQ(tok.decode(std::vector<TokenId>{special::kEos}), "");
  EXPECT_EQ(tok.decode(tok.encode("total 12")), "total 12");
  EXPECT_THROW(tok.decode(std::vector<TokenId>{99999}), IndexError);
}

TEST(Detokenize, RoundTripNormalizesProperty) {
  SyntheticSpec spec;
  spec.counts.fill(2);
  const Corpus c = generate_synthetic_corpus(3, spec);
  const WordCharTokenizer tok(build_vocab(c));
  for (const auto& text : corpus_texts(c)) {
    const std::string messy = "  " + text + "\t ";
    EXPECT_EQ(tok.decode(tok.encode(messy)), normalize_text(text));
  }
}

TEST(TokenizeLine, IdsInRangeAndSeqidsPositiveProperty) {
  SyntheticSpec spec;
  const Corpus c = generate_synthetic_corpus(12, spec);
  const WordCharTokenizer tok(build_vocab(c));
  Rng rng(1);
  const std::string alphabet = "abcxyz0123 ?!";
  for (int i = 0; i < 500; ++i) {
    std::string s;
    const auto n = 1 + rng.uniform_index(20);
    for (std::size_t k = 0; k < n; ++k) s += alphabet[rng.uniform_index(alphabet.size())];
    if (s.find_first_not_of(' ') == std::string::npos) continue;
    const auto a = tokenize_line(tok, s, SegmentBox{1, 1, 5, 5});
    EXPECT_EQ(a.size(), tokenize_line(tok, s, SegmentBox{1, 1, 5, 5}).size());
    for (const auto& t : a) {
      EXPECT_LT(t.id, tok.vocab_size());
      EXPECT_GE(t.seqid, 1);
      EXPECT_LE(t.seqid, 512);
    }
  }
}

TEST(NormalizeText, CollapsesWhitespace) { EXPECT_EQ(normalize_text("  A\t b \n"), "a b"); }
