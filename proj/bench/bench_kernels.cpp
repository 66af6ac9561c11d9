// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

// Serial reference vs OpenMP kernels on shapes the model actually runs.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "tfmoe/autodiff.hpp"
#include "tfmoe/kernels.hpp"
#include "tfmoe/predictor.hpp"

using namespace tfmoe;
namespace k = tfmoe::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

template <void (*Gemm)(const k::GemmArgs&)>
void BM_Gemm(benchmark::State& st) {
    const auto n = static_cast<std::size_t>(st.range(0));
    auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
    std::vector<double> c(n * n);
    k::GemmArgs g;
    g.m = g.n = g.k = n;
    g.a = a.data();
    g.b = b.data();
    g.c = c.data();
    for (auto _ : st) {
        Gemm(g);
        benchmark::DoNotOptimize(c.data());
    }
    st.SetItemsProcessed(st.iterations() * static_cast<int64_t>(n * n * n));
}

// batch = windows x nodes, 8 channels, 12 steps, width 3 (the predictor's temporal convs)
template <void (*Conv)(const k::Conv1dArgs&, const double*, const double*, const double*, double*)>
void BM_Conv1dForward(benchmark::State& st) {
    k::Conv1dArgs a{static_cast<std::size_t>(st.range(0)), 8, 8, 14, 3};
    auto x = random_vec(a.batch * a.c_in * a.len, 3), w = random_vec(a.c_out * a.c_in * a.width, 4),
         bias = random_vec(a.c_out, 5);
    std::vector<double> y(a.batch * a.c_out * a.len_out());
    for (auto _ : st) {
        Conv(a, x.data(), w.data(), bias.data(), y.data());
        benchmark::DoNotOptimize(y.data());
    }
    st.SetItemsProcessed(st.iterations() * static_cast<int64_t>(y.size()));
}

template <void (*Conv)(const k::Conv1dArgs&, const double*, const double*, double*)>
void BM_Conv1dBackwardInput(benchmark::State& st) {
    k::Conv1dArgs a{static_cast<std::size_t>(st.range(0)), 8, 8, 14, 3};
    auto dy = random_vec(a.batch * a.c_out * a.len_out(), 6), w = random_vec(a.c_out * a.c_in * a.width, 7);
    std::vector<double> dx(a.batch * a.c_in * a.len);
    for (auto _ : st) {
        std::fill(dx.begin(), dx.end(), 0.0);
        Conv(a, dy.data(), w.data(), dx.data());
        benchmark::DoNotOptimize(dx.data());
    }
}

template <void (*Softmax)(std::size_t, std::size_t, const double*, double*)>
void BM_SoftmaxRows(benchmark::State& st) {
    const auto n = static_cast<std::size_t>(st.range(0));
    auto x = random_vec(n * n, 8);
    std::vector<double> y(n * n);
    for (auto _ : st) {
        Softmax(n, n, x.data(), y.data());
        benchmark::DoNotOptimize(y.data());
    }
}

// One expert forward on a [64, nodes, 12] batch, end to end through the op layer.
void BM_ExpertForward(benchmark::State& st) {
    const auto backend = st.range(1) ? k::Backend::Parallel : k::Backend::Serial;
    k::BackendScope scope(backend);
    ParamStore s;
    std::mt19937_64 rng(9);
    pred::PredictorShape shape;
    shape.embed_dim = 8;
    pred::add_predictor_expert(s, 0, shape, rng);
    const auto nodes = static_cast<std::size_t>(st.range(0));
    Tensor x({64, nodes, 12});
    auto v = random_vec(x.numel(), 10);
    std::copy(v.begin(), v.end(), x.values().begin());
    ad::NoGradGuard ng;
    for (auto _ : st) {
        auto y = pred::expert_predict(s, 0, ad::constant(x), pred::NoiseMode::Eval, nullptr);
        benchmark::DoNotOptimize(y.value().values().data());
    }
}

}  // namespace

BENCHMARK(BM_Gemm<k::serial::gemm>)->Name("gemm/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<k::parallel::gemm>)->Name("gemm/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_Conv1dForward<k::serial::conv1d_forward>)->Name("conv1d_forward/serial")->Arg(640)->Arg(3200);
BENCHMARK(BM_Conv1dForward<k::parallel::conv1d_forward>)->Name("conv1d_forward/parallel")->Arg(640)->Arg(3200);
BENCHMARK(BM_Conv1dBackwardInput<k::serial::conv1d_backward_input>)->Name("conv1d_backward_input/serial")->Arg(3200);
BENCHMARK(BM_Conv1dBackwardInput<k::parallel::conv1d_backward_input>)
    ->Name("conv1d_backward_input/parallel")
    ->Arg(3200);
BENCHMARK(BM_SoftmaxRows<k::serial::softmax_rows>)->Name("softmax_rows/serial")->Arg(50)->Arg(500);
BENCHMARK(BM_SoftmaxRows<k::parallel::softmax_rows>)->Name("softmax_rows/parallel")->Arg(50)->Arg(500);
BENCHMARK(BM_ExpertForward)->Name("expert_forward")->ArgNames({"nodes", "parallel"})->Args({50, 0})->Args({50, 1});

BENCHMARK_MAIN();
