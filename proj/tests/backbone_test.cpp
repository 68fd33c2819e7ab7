#include <gtest/gtest.h>

#include <numeric>

#include "mtdoc/backbone.hpp"
#include "mtdoc/error.hpp"
#include "mtdoc/gradcheck.hpp"
#include "support.hpp"

using namespace mtdoc;
using mtdoc::testing::max_abs_diff;
using mtdoc::testing::random_tensor;

namespace {

ModelConfig small_config(std::size_t d = 16, std::size_t layers = 2, std::size_t heads = 4) {
  ModelConfig c;
  c.d = d;
  c.layers = layers;
  c.heads = heads;
  c.vocab_size = 20;
  return c;
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  return {t.data().begin() + static_cast<std::ptrdiff_t>(r * t.cols()),
          t.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * t.cols())};
}

Tensor rows_of(const Tensor& t, std::size_t n) { return slice_rows(t, 0, n); }

}  // namespace

TEST(MultiHeadAttention, SingleKeyReturnsItsProjectedValue) {
  const ModelState s(small_config(), 1);
  const MhaWeights w = mha_at(s, "backbone.layer0.attn");
  Rng rng(3);
  const Tensor q = random_tensor({5, 16}, rng, false), kv = random_tensor({1, 16}, rng, false);
  const Tensor out = multi_head_attention(w, q, kv, AttentionMask::full(5, 1), 4);
  const auto expect = row(w.o(w.v(kv)), 0);
  for (std::size_t r = 0; r < 5; ++r) EXPECT_LT(max_abs_diff(row(out, r), expect), 1e-14);
}

TEST(MultiHeadAttention, IdenticalKeysAverageToThatValue) {
  const ModelState s(small_config(), 2);
  const MhaWeights w = mha_at(s, "backbone.layer1.attn");
  Rng rng(4);
  const Tensor q = random_tensor({3, 16}, rng, false), one = random_tensor({1, 16}, rng, false);
  const std::vector<Tensor> copies(6, one);
  const Tensor out = multi_head_attention(w, q, concat_rows(copies), AttentionMask::full(3, 6), 4);
  const auto expect = row(w.o(w.v(one)), 0);
  for (std::size_t r = 0; r < 3; ++r) EXPECT_LT(max_abs_diff(row(out, r), expect), 1e-12);
}

TEST(MultiHeadAttention, MismatchedMaskThrows) {
  const ModelState s(small_config(), 1);
  Rng rng(5);
  const Tensor x = random_tensor({4, 16}, rng, false);
  EXPECT_THROW(multi_head_attention(mha_at(s, "backbone.layer0.attn"), x, x, AttentionMask::full(4, 3), 4),
               DimensionError);
}

TEST(Encode, ZeroLayersIsIdentity) {
  const ModelState s(small_config(16, 0), 1);
  Rng rng(6);
  const Tensor x = random_tensor({7, 16}, rng, false);
  const std::vector<std::uint8_t> valid(7, 1);
  const Memory m = encode(s, x, valid);
  EXPECT_EQ(std::vector<double>(m.states.data().begin(), m.states.data().end()),
            std::vector<double>(x.data().begin(), x.data().end()));
}

TEST(Encode, WrongWidthThrows) {
  const ModelState s(small_config(), 1);
  Rng rng(7);
  const std::vector<std::uint8_t> valid(3, 1);
  EXPECT_THROW(encode(s, random_tensor({3, 8}, rng, false), valid), DimensionError);
  EXPECT_THROW(encode(s, random_tensor({3, 16}, rng, false), std::vector<std::uint8_t>(2, 1)), DimensionError);
}

TEST(Encode, PaddingInvarianceProperty) {
  const ModelState s(small_config(), 8);
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(12), pad = 1 + rng.uniform_index(10);
    const Tensor x = random_tensor({n, 16}, rng, false);
    const std::array<Tensor, 2> parts = {x, random_tensor({pad, 16}, rng, false, 5.0)};
    std::vector<std::uint8_t> valid(n + pad, 0);
    std::fill(valid.begin(), valid.begin() + static_cast<std::ptrdiff_t>(n), 1);
    const Memory plain = encode(s, x, std::vector<std::uint8_t>(n, 1));
    const Memory padded = encode(s, concat_rows(parts), valid);
    EXPECT_LT(max_abs_diff(plain.states.data(), rows_of(padded.states, n).data()), 1e-9) << "n=" << n;
  }
}

TEST(Encode, AttentionRowsSumToOneProperty) {
  const ModelState s(small_config(), 9);
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(10);
    std::vector<std::uint8_t> valid(n, 1);
    valid[n - 1] = static_cast<std::uint8_t>(trial % 2);
    std::vector<AttentionProbe> probes;
    encode(s, random_tensor({n, 16}, rng, false), valid, &probes);
    ASSERT_EQ(probes.size(), 2u);
    for (const auto& p : probes) {
      EXPECT_TRUE(p.degenerate_rows.empty());
      for (std::size_t h = 0; h < p.heads; ++h)
        for (std::size_t q = 0; q < p.queries; ++q) {
          double total = 0.0;
          for (std::size_t k = 0; k < p.keys; ++k) {
            total += p.weight(h, q, k);
            if (!valid[k]) {
              EXPECT_EQ(p.weight(h, q, k), 0.0);
            }
          }
          EXPECT_NEAR(total, 1.0, 1e-12);
        }
    }
  }
}

TEST(Encode, PermutationEquivariantProperty) {
  const ModelState s(small_config(), 10);
  Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(9);
    const Tensor x = random_tensor({n, 16}, rng, false);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
    const std::vector<std::uint8_t> valid(n, 1);
    const Memory a = encode(s, x, valid);
    const Memory b = encode(s, gather_rows(x, perm), valid);
    for (std::size_t i = 0; i < n; ++i) EXPECT_LT(max_abs_diff(row(b.states, i), row(a.states, perm[i])), 1e-12);
  }
}

TEST(Encode, GradientsMatchFiniteDifferences) {
  const ModelState s(small_config(8, 2, 2), 11);
  Rng rng(11);
  const Tensor x = random_tensor({5, 8}, rng, true);
  const std::vector<std::uint8_t> valid = {1, 1, 1, 1, 0};
  const Tensor target = random_tensor({5, 8}, rng, false);
  auto params = s.parameters_with_prefix("backbone.");
  params.push_back({"input", x});
  GradCheckOptions opt;
  opt.per_parameter = 3;
  const auto report = finite_diff_check(
      [&] {
        const Memory m = encode(s, x, valid);
        return sum(mul(rows_of(m.states, 4), rows_of(target, 4)));
      },
      params, opt);
  EXPECT_TRUE(report.passed()) << report.worst_parameter << " rel " << report.max_rel_error;
  EXPECT_EQ(report.parameters_covered(), params.size());
}
