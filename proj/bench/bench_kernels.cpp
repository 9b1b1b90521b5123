#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "fedmp/data.hpp"
#include "fedmp/fedsim.hpp"
#include "fedmp/kernels.hpp"

namespace {

std::vector<double> random_vec(std::size_t n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

struct DenseCase {
    std::size_t n, a, b;
    std::vector<double> in, w, bias, out, delta, dw, db, din;

    explicit DenseCase(const benchmark::State& st)
        : n(static_cast<std::size_t>(st.range(0))), a(static_cast<std::size_t>(st.range(1))),
          b(static_cast<std::size_t>(st.range(1))) {
        in = random_vec(n * a, 1);
        w = random_vec(a * b, 2);
        bias = random_vec(b, 3);
        delta = random_vec(n * b, 4);
        out.resize(n * b);
        dw.resize(a * b);
        db.resize(b);
        din.resize(n * a);
    }
};

void BM_ForwardSerial(benchmark::State& st) {
    DenseCase c(st);
    for (auto _ : st) {
        fedmp::kernels::serial::dense_forward(c.in, c.w, c.bias, c.n, c.a, c.b, c.out);
        benchmark::DoNotOptimize(c.out.data());
    }
}

void BM_ForwardOmp(benchmark::State& st) {
    DenseCase c(st);
    for (auto _ : st) {
        fedmp::kernels::dense_forward(c.in, c.w, c.bias, c.n, c.a, c.b, c.out);
        benchmark::DoNotOptimize(c.out.data());
    }
}

void BM_BackwardSerial(benchmark::State& st) {
    DenseCase c(st);
    for (auto _ : st) {
        fedmp::kernels::serial::dense_backward(c.in, c.w, c.delta, c.n, c.a, c.b, c.dw, c.db, c.din);
        benchmark::DoNotOptimize(c.dw.data());
    }
}

void BM_BackwardOmp(benchmark::State& st) {
    DenseCase c(st);
    for (auto _ : st) {
        fedmp::kernels::dense_backward(c.in, c.w, c.delta, c.n, c.a, c.b, c.dw, c.db, c.din);
        benchmark::DoNotOptimize(c.dw.data());
    }
}

// batch rows x layer width
#define DENSE_ARGS ->Args({32, 64})->Args({256, 128})->Args({1024, 256})

BENCHMARK(BM_ForwardSerial) DENSE_ARGS;
BENCHMARK(BM_ForwardOmp) DENSE_ARGS;
BENCHMARK(BM_BackwardSerial) DENSE_ARGS;
BENCHMARK(BM_BackwardOmp) DENSE_ARGS;

void BM_FedAvgRound(benchmark::State& st) {
    fedmp::SynthConfig s;
    s.num_classes = 5;
    s.clusters_per_class = 2;
    s.samples = 3000;
    s.input_dim = 16;
    const auto ds = fedmp::gen_synthetic(s, 1);
    const auto part = fedmp::partition_iid(ds, 10, 2);
    fedmp::FLConfig cfg;
    cfg.arch.layer_dims = {16, 64, 64, 5};
    cfg.rounds = 1;
    cfg.learning_rate = 1e-3;
    const auto init = fedmp::init_model(cfg.arch, 3);
    const auto clients = part.all_clients();
    for (auto _ : st) {
        auto run = fedmp::run_fedavg(cfg, part, ds, clients, init);
        benchmark::DoNotOptimize(run.final_model.values.data());
    }
}
BENCHMARK(BM_FedAvgRound)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
