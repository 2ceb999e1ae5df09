#include <benchmark/benchmark.h>

#include <random>

#include "satqa/autograd.hpp"
#include "satqa/metrics.hpp"
#include "satqa/scl.hpp"

using namespace satqa;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Tensor t = Tensor::zeros(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& v : t.storage()) v = n(rng);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Tensor a = random_tensor({n, n}, 1);
  const Tensor b = random_tensor({n, n}, 2);
  for (auto _ : state) {
    ag::Graph g(false);
    benchmark::DoNotOptimize(ag::matmul(g.constant(a), g.constant(b)).value().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(196)->Arg(384);

void BM_NtXent(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Tensor z = random_tensor({n, 128}, 3);
  std::vector<int> cats(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) cats[static_cast<std::size_t>(i)] = i / 2;
  for (auto _ : state) {
    ag::Graph g;
    ag::Var e = ag::l2_normalize_rows(g.input(z, true));
    ag::Var loss = nt_xent_loss(e, cats, 0.1);
    g.backward(loss);
    benchmark::DoNotOptimize(loss.value().data());
  }
}
BENCHMARK(BM_NtXent)->Arg(16)->Arg(64)->Arg(256);

void BM_DeformConv(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const Tensor x = random_tensor({c, 16, 16}, 4);
  const Tensor off = random_tensor({18, 16, 16}, 5);
  const Tensor w = random_tensor({c, c, 3, 3}, 6);
  const Tensor b = Tensor::zeros({c});
  for (auto _ : state) {
    ag::Graph g;
    ag::Var y = ag::deform_conv2d(g.input(x, true), g.input(off, true), g.input(w, true), g.input(b, true), 1, 1);
    g.backward(ag::sum(y));
    benchmark::DoNotOptimize(y.value().data());
  }
}
BENCHMARK(BM_DeformConv)->Arg(32)->Arg(96);

void BM_Srocc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  std::vector<double> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = u(rng);
    b[i] = a[i] + u(rng) * 0.3;
  }
  for (auto _ : state) benchmark::DoNotOptimize(srocc(a, b));
}
BENCHMARK(BM_Srocc)->Arg(1000)->Arg(100000);

}  // namespace

BENCHMARK_MAIN();
