#include <random>

#include <benchmark/benchmark.h>

#include "hypersed/anchor_build.hpp"
#include "hypersed/corpus.hpp"
#include "hypersed/geometry.hpp"
#include "hypersed/graph_build.hpp"
#include "hypersed/trainer.hpp"

using namespace hypersed;

namespace {

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Eigen::MatrixXd x(rows, cols);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = g(rng);
  return x;
}

void BM_CosineSimilarity(benchmark::State& state) {
  const auto x = gaussian(state.range(0), 384, 1);
  for (auto _ : state) benchmark::DoNotOptimize(cosine_similarity(x));
}
BENCHMARK(BM_CosineSimilarity)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_PoincareDistance(benchmark::State& state) {
  const geometry::Curvature k(-1.0);
  const auto x = gaussian(2, state.range(0), 2) * (0.3 / std::sqrt(static_cast<double>(state.range(0))));
  const geometry::PoincarePoint a(x.row(0).transpose(), k), b(x.row(1).transpose(), k);
  for (auto _ : state) benchmark::DoNotOptimize(geometry::distance(a, b));
}
BENCHMARK(BM_PoincareDistance)->Arg(2)->Arg(64);

void BM_ThresholdSearch(benchmark::State& state) {
  const auto s = cosine_similarity(gaussian(state.range(0), 16, 3));
  for (auto _ : state) benchmark::DoNotOptimize(select_threshold(s));
}
BENCHMARK(BM_ThresholdSearch)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  SynthOptions so;
  so.n = static_cast<int>(state.range(0)) * 20;
  const auto ms = synth(so).messages;
  const auto x = embedding_matrix(ms);
  const auto s = cosine_similarity(x);
  const auto g = assemble_message_graph(ms, s, select_threshold(s).tau);
  const auto anchors = build_anchor_graph(x, g.graph, 20, 0);
  TrainConfig tc;
  const auto inputs = model::GraphInputs::make(anchors.features, anchors.adjacency.off_diagonal);
  const auto dims = make_dims(tc, static_cast<int>(x.cols()));
  const auto params = init_params(tc, dims);
  Eigen::VectorXd grad;
  for (auto _ : state) benchmark::DoNotOptimize(model_gradient(params, dims, inputs, {}, &grad));
}
BENCHMARK(BM_ForwardBackward)->Arg(25)->Arg(100)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
