#include <benchmark/benchmark.h>

#include <random>

#include "tunnelscope/data.hpp"
#include "tunnelscope/linalg.hpp"
#include "tunnelscope/metrics.hpp"
#include "tunnelscope/nn.hpp"
#include "tunnelscope/random.hpp"

namespace ts = tunnelscope;

namespace {

ts::Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    ts::Rng rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    ts::Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
    return m;
}

}  // namespace

// One forward/backward pass of a 12x256 network on a 128-row batch.
static void BM_LossAndGradient(benchmark::State& state) {
    const auto width = static_cast<std::size_t>(state.range(0));
    const auto net = ts::nn::init_network<float>({32, std::vector<std::size_t>(12, width), 10, false}, 1);
    const ts::nn::MatrixT<float> batch = gaussian(128, 32, 2).cast<float>();
    std::vector<int> labels(128);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 10);
    for (auto _ : state) benchmark::DoNotOptimize(ts::nn::loss_and_gradient(net, batch, labels));
}
BENCHMARK(BM_LossAndGradient)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

static void BM_Gemm(benchmark::State& state) {
    const auto n = state.range(0);
    const ts::nn::MatrixT<float> a = gaussian(n, n, 3).cast<float>();
    const ts::nn::MatrixT<float> b = gaussian(n, n, 4).cast<float>();
    ts::nn::MatrixT<float> c(n, n);
    for (auto _ : state) {
        c.noalias() = a * b;
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Gemm)->Arg(128)->Arg(256)->Unit(benchmark::kMicrosecond);

static void BM_TrainEpoch(benchmark::State& state) {
    ts::data::BlobSpec spec;
    spec.per_class_train = 100;
    spec.per_class_test = 10;
    const auto data = ts::data::make_blobs(spec);
    const auto net = ts::nn::init_network<float>({32, std::vector<std::size_t>(12, 256), 10, false}, 1);
    ts::nn::TrainConfig cfg;
    cfg.epochs = 1;
    for (auto _ : state) benchmark::DoNotOptimize(ts::nn::train(net, data.train, data.test, cfg));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(data.train.size()));
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);

static void BM_NumericalRank(benchmark::State& state) {
    const auto x = gaussian(1000, state.range(0), 5);
    const ts::linalg::SpectrumPolicy policy;
    for (auto _ : state) benchmark::DoNotOptimize(ts::linalg::numerical_rank(x, policy));
}
BENCHMARK(BM_NumericalRank)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

static void BM_Cka(benchmark::State& state) {
    const auto rows = state.range(0);
    const auto x = gaussian(rows, 256, 6);
    const auto y = gaussian(rows, 256, 7);
    const ts::metrics::CkaConfig cfg;
    for (auto _ : state) benchmark::DoNotOptimize(ts::metrics::cka(x, y, cfg));
}
BENCHMARK(BM_Cka)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
