#include <gtest/gtest.h>

#include "mtdoc/checkpoint.hpp"
#include "mtdoc/error.hpp"
#include "support.hpp"

using namespace mtdoc;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.d = 8;
  c.heads = 2;
  c.layers = 1;
  c.vocab_size = 12;
  c.re_layers = c.gtsls_layers = c.vqa_layers = 1;
  return c;
}

TensorFile sample_file() {
  TensorFile f;
  f.tensors["a"] = {{2, 3}, {1, 2, 3, 4, 5, -6.5}};
  f.tensors["b.c"] = {{1}, {0.1}};
  f.trailer = {{"kind", "test"}, {"n", 2}};
  return f;
}

}  // namespace

TEST(TensorFile, EncodeDecodeRoundTrip) {
  const TensorFile f = sample_file();
  const auto bytes = encode_tensor_file(f);
  ASSERT_GE(bytes.size(), 5u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 5), "MTDM1");
  const TensorFile back = decode_tensor_file(bytes);
  EXPECT_EQ(back.tensors, f.tensors);
  EXPECT_EQ(back.trailer, f.trailer);
  EXPECT_EQ(encode_tensor_file(back), bytes);
}

TEST(TensorFile, CorruptionIsRejected) {
  const auto good = encode_tensor_file(sample_file());
  auto magic = good;
  magic[0] = 'X';
  EXPECT_THROW(decode_tensor_file(magic), ValidationError);
  auto version = good;
  version[5] = 99;
  EXPECT_THROW(decode_tensor_file(version), ValidationError);
  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, good.size() - 1}) {
    const std::vector<std::uint8_t> truncated(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(decode_tensor_file(truncated), ValidationError) << cut;
  }
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(decode_tensor_file(trailing), ValidationError);
  auto digest = good;
  digest.back() ^= 0x5a;
  EXPECT_THROW(decode_tensor_file(digest), ValidationError);
}

TEST(TensorFile, FnvKnownValues) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cull);
}

TEST(Checkpoint, ModelRoundTripIsBitExact) {
  const auto dir = mtdoc::testing::scratch_dir("ckpt_model");
  const ModelState s(tiny(), 7);
  save_checkpoint(dir / "m.mtdm", s);
  const ModelState back = load_checkpoint(dir / "m.mtdm");
  EXPECT_EQ(back.config(), s.config());
  ASSERT_EQ(back.parameters().size(), s.parameters().size());
  for (const auto& p : s.parameters()) {
    const auto a = p.tensor.data(), b = back.param(p.name).data();
    ASSERT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end())) << p.name;
  }
  save_checkpoint(dir / "again.mtdm", back);
  EXPECT_EQ(read_file_bytes(dir / "m.mtdm"), read_file_bytes(dir / "again.mtdm"));
}

TEST(Checkpoint, InspectListsEveryTensor) {
  const auto dir = mtdoc::testing::scratch_dir("ckpt_inspect");
  const ModelState s(tiny(), 1);
  save_checkpoint(dir / "m.mtdm", s);
  const auto m = inspect_checkpoint(dir / "m.mtdm");
  EXPECT_EQ(m.entries.size(), s.parameters().size());
  EXPECT_EQ(m.scalars, s.scalar_count());
  EXPECT_EQ(m.trailer.at("kind"), "model");
}

TEST(Checkpoint, OptimizerFileIsNotAModel) {
  const auto dir = mtdoc::testing::scratch_dir("ckpt_kind");
  save_optimizer(dir / "o.mtdm", AdamState{});
  EXPECT_THROW(load_checkpoint(dir / "o.mtdm"), ValidationError);
  save_checkpoint(dir / "m.mtdm", ModelState(tiny(), 1));
  EXPECT_THROW(load_optimizer(dir / "m.mtdm"), ValidationError);
}

TEST(Checkpoint, OptimizerRoundTrip) {
  const auto dir = mtdoc::testing::scratch_dir("ckpt_adam");
  AdamState a;
  a.hyper.lr = 3e-4;
  a.hyper.beta2 = 0.98;
  a.step_count = 17;
  a.moments["w"] = {{0.1, -0.2}, {1e-3, 4e-3}};
  save_optimizer(dir / "o.mtdm", a);
  const AdamState b = load_optimizer(dir / "o.mtdm");
  EXPECT_EQ(b.step_count, 17u);
  EXPECT_EQ(b.hyper.lr, 3e-4);
  EXPECT_EQ(b.hyper.beta2, 0.98);
  ASSERT_EQ(b.moments.size(), 1u);
  EXPECT_EQ(b.moments.at("w").first, a.moments.at("w").first);
  EXPECT_EQ(b.moments.at("w").second, a.moments.at("w").second);
}

TEST(Checkpoint, MissingFileIsReported) {
  EXPECT_THROW(load_checkpoint("/nonexistent/model.mtdm"), Error);
}
