#include <benchmark/benchmark.h>

#include "nlrn/classic_nonlocal.hpp"
#include "nlrn/diff_ops.hpp"
#include "nlrn/nonlocal.hpp"
#include "nlrn/rng.hpp"

namespace {

nlrn::DenseTensor<float> random_features(int m, int h, int w, unsigned long long seed) {
  nlrn::Rng rng(seed);
  nlrn::DenseTensor<float> f({m, h, w});
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(2 * rng.uniform() - 1);
  return f;
}

nlrn::NonLocalWeights<float> random_nl_weights(int m, int l, unsigned long long seed) {
  nlrn::Rng rng(seed);
  auto w = nlrn::NonLocalWeights<float>::make(m, l);
  for (auto* t : {&w.w_theta, &w.w_psi, &w.w_g}) {
    for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = static_cast<float>(2 * rng.uniform() - 1);
  }
  return w;
}

void NonLocalForwardQ(benchmark::State& state) {
  const int q = static_cast<int>(state.range(0));
  const int m = 16, l = 8, h = 32, w = 32;
  auto features = random_features(m, h, w, 1);
  auto weights = random_nl_weights(m, l, 2);
  for (auto _ : state) {
    auto res = nlrn::nonlocal_forward(features, weights, nlrn::NeighborhoodSpec{q});
    benchmark::DoNotOptimize(res.output.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(h) * w * q * q);
}
BENCHMARK(NonLocalForwardQ)->Arg(5)->Arg(9)->Arg(17)->Arg(33);

void NonLocalForwardM(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  const int q = 9, h = 32, w = 32;
  auto features = random_features(m, h, w, 3);
  auto weights = random_nl_weights(m, std::max(1, m / 2), 4);
  for (auto _ : state) {
    auto res = nlrn::nonlocal_forward(features, weights, nlrn::NeighborhoodSpec{q});
    benchmark::DoNotOptimize(res.output.data());
  }
}
BENCHMARK(NonLocalForwardM)->Arg(8)->Arg(16)->Arg(32)->Arg(64);

void NonLocalBackward(benchmark::State& state) {
  const int q = static_cast<int>(state.range(0));
  const int m = 16, h = 24, w = 24;
  auto features = random_features(m, h, w, 5);
  auto weights = random_nl_weights(m, 8, 6);
  auto grad = random_features(m, h, w, 7);
  const nlrn::CorrelationState<float>* no_prior = nullptr;
  for (auto _ : state) {
    nlrn::NonLocalTape<float> tape;
    nlrn::nonlocal_forward(features, weights, nlrn::NeighborhoodSpec{q}, no_prior, &tape);
    auto grads = nlrn::nonlocal_backward(tape, grad);
    benchmark::DoNotOptimize(grads.features.data());
  }
}
BENCHMARK(NonLocalBackward)->Arg(5)->Arg(9)->Arg(17);

void Conv3x3Forward(benchmark::State& state) {
  const int ch = static_cast<int>(state.range(0));
  auto x = random_features(ch, 32, 32, 8);
  auto layer = nlrn::ConvLayer<float>::make(ch, ch, 3);
  nlrn::Rng rng(9);
  for (std::size_t i = 0; i < layer.kernel.size(); ++i) {
    layer.kernel[i] = static_cast<float>(2 * rng.uniform() - 1);
  }
  for (auto _ : state) {
    auto y = nlrn::conv2d_forward(x, layer);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(Conv3x3Forward)->Arg(16)->Arg(32)->Arg(64);

void BlockMatch(benchmark::State& state) {
  nlrn::Rng rng(10);
  std::vector<double> px(64 * 64);
  for (double& p : px) p = rng.uniform();
  nlrn::GrayImage img(64, 64, std::move(px));
  nlrn::GroupFilterConfig cfg;
  cfg.p = 7;
  cfg.q = static_cast<int>(state.range(0));
  cfg.k = 16;
  for (auto _ : state) {
    auto group = nlrn::block_match(img, 32, 32, cfg);
    benchmark::DoNotOptimize(group.data.data());
  }
}
BENCHMARK(BlockMatch)->Arg(11)->Arg(21)->Arg(39);

}  // namespace

BENCHMARK_MAIN();
