#include <benchmark/benchmark.h>

#include <numeric>
#include <vector>

#include "longctx/attention.hpp"
#include "longctx/channels.hpp"
#include "longctx/model.hpp"
#include "longctx/rng.hpp"
#include "longctx/ssm.hpp"

namespace {

using namespace longctx;

template <typename Real>
struct Problem {
  SsmInputs<Real> in;
  DecayMatrix<Real> a;
};

template <typename Real>
Problem<Real> make_problem(std::size_t L, std::size_t N, std::size_t E) {
  Rng rng(1);
  SsmInputs<Real> in{Matrix<Real>(L, E), Matrix<Real>(L, E), Matrix<Real>(L, N),
                     Matrix<Real>(L, N)};
  for (auto& v : in.x.flat()) v = static_cast<Real>(rng.normal());
  for (auto& v : in.delta.flat()) v = static_cast<Real>(rng.uniform(0.01, 0.5));
  for (auto& v : in.b.flat()) v = static_cast<Real>(rng.normal());
  for (auto& v : in.c.flat()) v = static_cast<Real>(rng.normal());
  Matrix<Real> a(N, E);
  for (auto& v : a.flat()) v = static_cast<Real>(-rng.uniform(0.05, 2.0));
  return {std::move(in), DecayMatrix<Real>(std::move(a))};
}

template <typename Real>
void BM_SelectiveScan(benchmark::State& state) {
  const auto L = static_cast<std::size_t>(state.range(0));
  const auto p = make_problem<Real>(L, 16, 256);
  const auto h0 = HiddenState<Real>::zeros(16, 256);
  for (auto _ : state) benchmark::DoNotOptimize(selective_scan(p.in, p.a, h0));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(L));
}
BENCHMARK_TEMPLATE(BM_SelectiveScan, float)->Arg(512)->Arg(4096);
BENCHMARK_TEMPLATE(BM_SelectiveScan, double)->Arg(512)->Arg(4096);

void BM_FilteredScan(benchmark::State& state) {
  const auto L = static_cast<std::size_t>(state.range(0));
  const auto p = make_problem<float>(L, 16, 256);
  FilterPolicy policy{std::vector<bool>(256), std::vector<double>(256, 0.1)};
  for (std::size_t c = 0; c < 256; c += 4) policy.global_mask[c] = true;
  const auto h0 = HiddenState<float>::zeros(16, 256);
  for (auto _ : state) benchmark::DoNotOptimize(filtered_scan(p.in, p.a, h0, policy));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(L));
}
BENCHMARK(BM_FilteredScan)->Arg(4096);

void BM_AttentionLastRow(benchmark::State& state) {
  const auto L = static_cast<std::size_t>(state.range(0));
  const auto p = make_problem<double>(L, 16, 8);
  std::vector<std::size_t> channels(8);
  std::iota(channels.begin(), channels.end(), 0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(attention_scores(p.in, p.a, channels, RowRange{L - 1, L, 1}));
  }
}
BENCHMARK(BM_AttentionLastRow)->Arg(4096)->Arg(32768);

void BM_SolveThreshold(benchmark::State& state) {
  Rng rng(2);
  std::vector<double> samples(static_cast<std::size_t>(state.range(0)));
  for (auto& v : samples) v = std::exp(rng.normal(-2.0, 1.0));
  const auto dist = DeltaDistribution::from_samples(0, 0, samples);
  for (auto _ : state) benchmark::DoNotOptimize(solve_threshold(dist, 2048, 16384));
}
BENCHMARK(BM_SolveThreshold)->Arg(10240)->Arg(102400);

void BM_DecodeStep(benchmark::State& state) {
  const ModelConfig cfg{256, 64, 128, 8, 2, 4, 0, 512, true};
  SynthOptions opts;
  const auto m = synth_model(cfg, opts);
  DecodeSession session(m.bundle, RunMode::vanilla(), 1 << 20);
  TokenId t = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(session.step(t));
    t = (t + 1) % 256;
  }
}
BENCHMARK(BM_DecodeStep);

}  // namespace
BENCHMARK_MAIN();
