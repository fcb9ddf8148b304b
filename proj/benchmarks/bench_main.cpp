#include <benchmark/benchmark.h>

#include "dpsgd/accountant.hpp"
#include "dpsgd/dp.hpp"
#include "dpsgd/model.hpp"
#include "dpsgd/ops.hpp"

namespace {

using namespace dpsgd;

Tensor random_tensor(std::vector<std::size_t> shape, CounterRng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.normal();
    return t;
}

void BM_Matmul64(benchmark::State& state) {
    CounterRng rng(1, Stream::init);
    const Tensor a = random_tensor({64, 64}, rng);
    const Tensor b = random_tensor({64, 64}, rng);
    for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
}
BENCHMARK(BM_Matmul64);

void BM_Conv2dForward(benchmark::State& state) {
    CounterRng rng(1, Stream::init);
    const Tensor x = random_tensor({8, 12, 12}, rng);
    const Tensor k = random_tensor({16, 8, 5, 5}, rng);
    const Tensor b = random_tensor({16}, rng);
    for (auto _ : state) benchmark::DoNotOptimize(conv2d_forward(x, k, b));
}
BENCHMARK(BM_Conv2dForward);

void BM_PerSampleGradient(benchmark::State& state) {
    Network net = build_network(parse_arch(default_arch()), 7);
    CounterRng rng(2, Stream::init);
    std::vector<Tensor> batch;
    std::vector<std::size_t> labels;
    for (int i = 0; i < 8; ++i) {
        batch.push_back(random_tensor({1, 28, 28}, rng));
        labels.push_back(static_cast<std::size_t>(i) % 10);
    }
    for (auto _ : state)
        benchmark::DoNotOptimize(net.per_sample_gradients(batch, labels, 7, 0, 1));
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * 8);
}
BENCHMARK(BM_PerSampleGradient);

void BM_SgmRdpInteger(benchmark::State& state) {
    for (auto _ : state) benchmark::DoNotOptimize(sgm_rdp(0.01, 1.1, 64.0));
}
BENCHMARK(BM_SgmRdpInteger);

void BM_SgmRdpFractional(benchmark::State& state) {
    for (auto _ : state) benchmark::DoNotOptimize(sgm_rdp(0.01, 1.1, 2.5));
}
BENCHMARK(BM_SgmRdpFractional);

void BM_NoisyAggregate(benchmark::State& state) {
    PerSampleGrads grads;
    grads.rows = 64;
    grads.cols = 15882;
    grads.data.assign(grads.rows * grads.cols, 0.01);
    grads.recompute_norms();
    CounterRng rng(3, Stream::noise);
    for (auto _ : state)
        benchmark::DoNotOptimize(noisy_aggregate(grads, 1.1, 1.0, grads.rows, rng));
}
BENCHMARK(BM_NoisyAggregate);

}  // namespace

BENCHMARK_MAIN();
