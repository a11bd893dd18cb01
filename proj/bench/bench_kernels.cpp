// Parallel kernels vs the serial reference on encoder-sized operands.

#include <benchmark/benchmark.h>

#include "yoto/numkern.hpp"
#include "yoto/numkern_ref.hpp"

using namespace yoto;

namespace {

Tensor rand_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  SeededRng rng(seed);
  return kern::rng_normal(rng, {r, c}, 1.0f);
}

// Rows = batch * seq_len tokens, cols = d_model.
template <bool Ref>
void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = rand_matrix(n, 64, 1);
  const Tensor b = rand_matrix(64, 128, 2);
  for (auto _ : state) {
    Tensor c = Ref ? kern::ref::matmul(a, b) : kern::matmul(a, b);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * 64 * 128));
}

template <bool Ref>
void BM_matmul_nt(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = rand_matrix(n, 64, 3);
  const Tensor b = rand_matrix(n, 64, 4);
  for (auto _ : state) {
    Tensor c = Ref ? kern::ref::matmul_nt(a, b) : kern::matmul_nt(a, b);
    benchmark::DoNotOptimize(c.data().data());
  }
}

template <bool Ref>
void BM_softmax(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = rand_matrix(n, n, 5);
  for (auto _ : state) {
    Tensor c = Ref ? kern::ref::softmax_rows(a) : kern::softmax_rows(a);
    benchmark::DoNotOptimize(c.data().data());
  }
}

template <bool Ref>
void BM_layer_norm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = rand_matrix(n, 64, 6);
  const Tensor g = rand_matrix(1, 64, 7);
  const Tensor b = rand_matrix(1, 64, 8);
  const Tensor gain(Shape{64}, std::vector<float>(g.data().begin(), g.data().end()));
  const Tensor bias(Shape{64}, std::vector<float>(b.data().begin(), b.data().end()));
  for (auto _ : state) {
    Tensor c = Ref ? kern::ref::layer_norm(a, gain, bias, 1e-5f) : kern::layer_norm(a, gain, bias, 1e-5f);
    benchmark::DoNotOptimize(c.data().data());
  }
}

}  // namespace

BENCHMARK(BM_matmul<false>)->Arg(128)->Arg(1024)->Arg(2048);
BENCHMARK(BM_matmul<true>)->Arg(128)->Arg(1024)->Arg(2048);
BENCHMARK(BM_matmul_nt<false>)->Arg(128)->Arg(512);
BENCHMARK(BM_matmul_nt<true>)->Arg(128)->Arg(512);
BENCHMARK(BM_softmax<false>)->Arg(128)->Arg(512);
BENCHMARK(BM_softmax<true>)->Arg(128)->Arg(512);
BENCHMARK(BM_layer_norm<false>)->Arg(1024)->Arg(4096);
BENCHMARK(BM_layer_norm<true>)->Arg(1024)->Arg(4096);

BENCHMARK_MAIN();
