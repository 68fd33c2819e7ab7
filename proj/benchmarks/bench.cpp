#include <benchmark/benchmark.h>

#include "mtdoc/config.hpp"
#include "mtdoc/metrics.hpp"
#include "mtdoc/pretraining.hpp"

using namespace mtdoc;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, bool grad = false) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.normal();
  return Tensor::from_data({r, c}, std::move(v), grad);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = random_matrix(n, n, rng), b = random_matrix(n, n, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b).data().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_AttentionForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const Tensor q = random_matrix(n, 64, rng, true), k = random_matrix(n, 64, rng, true),
               v = random_matrix(n, 64, rng, true);
  const AttentionMask mask = AttentionMask::full(n, n);
  for (auto _ : state) {
    backward(sum(scaled_dot_attention(q, k, v, mask, 4)));
  }
}
BENCHMARK(BM_AttentionForwardBackward)->Arg(32)->Arg(128);

void BM_Levenshtein(benchmark::State& state) {
  const std::string a(static_cast<std::size_t>(state.range(0)), 'a');
  std::string b = a;
  for (std::size_t i = 0; i < b.size(); i += 3) b[i] = 'b';
  for (auto _ : state) benchmark::DoNotOptimize(levenshtein(a, b));
}
BENCHMARK(BM_Levenshtein)->Arg(16)->Arg(256);

// One collective step (all seven tasks, batch of 32) at the desk size.
void BM_CollectiveStep(benchmark::State& state) {
  SyntheticSpec spec;
  const Corpus corpus = generate_synthetic_corpus(3, spec);
  const WordCharTokenizer tok(build_vocab(corpus));
  ModelConfig c;
  c.d = static_cast<std::size_t>(state.range(0));
  c.vocab_size = tok.vocab_size();
  const RoleStores stores = prepare_stores(corpus, tok, c);
  ModelState model(c, 3);
  const auto params = model.parameters();
  ObjectiveOptions objective;
  std::uint64_t step = 0;
  for (auto _ : state) {
    Rng b = Rng::derive(3, 2 * step), m = Rng::derive(3, 2 * step + 1);
    ++step;
    const TaskBatch batch = compose_batch(stores, MixtureSpec{}, b);
    const auto plans = plan_masks(stores, batch, objective, m);
    zero_grad(params);
    backward(collective_loss(model, stores, batch, plans, objective).total);
  }
}
BENCHMARK(BM_CollectiveStep)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
