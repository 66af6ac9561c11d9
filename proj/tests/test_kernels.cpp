// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "tfmoe/kernels.hpp"

using namespace tfmoe::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> d;
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

}  // namespace

TEST(Gemm, MatchesNaiveTripleLoopForAllTransposes) {
    std::mt19937_64 rng(7);
    for (int ta = 0; ta < 2; ++ta)
        for (int tb = 0; tb < 2; ++tb) {
            const std::size_t M = 5, N = 7, K = 4, batch = 3;
            auto a = random_vec(batch * M * K, rng);
            auto b = random_vec(batch * K * N, rng);
            std::vector<double> c(batch * M * N, 0.0);
            GemmArgs g;
            g.batch = batch;
            g.m = M;
            g.n = N;
            g.k = K;
            g.trans_a = ta;
            g.trans_b = tb;
            g.a = a.data();
            g.b = b.data();
            g.c = c.data();
            g.stride_a = M * K;
            g.stride_b = K * N;
            g.stride_c = M * N;
            serial::gemm(g);
            for (std::size_t bi = 0; bi < batch; ++bi)
                for (std::size_t i = 0; i < M; ++i)
                    for (std::size_t j = 0; j < N; ++j) {
                        double s = 0.0;
                        for (std::size_t p = 0; p < K; ++p) {
                            const double av = ta ? a[bi * M * K + p * M + i] : a[bi * M * K + i * K + p];
                            const double bv = tb ? b[bi * K * N + j * K + p] : b[bi * K * N + p * N + j];
                            s += av * bv;
                        }
                        EXPECT_NEAR(c[bi * M * N + i * N + j], s, 1e-12);
                    }
        }
}

TEST(Gemm, ParallelIsBitwiseEqualToSerial) {
    std::mt19937_64 rng(11);
    for (int ta = 0; ta < 2; ++ta)
        for (int tb = 0; tb < 2; ++tb) {
            const std::size_t M = 33, N = 17, K = 29, batch = 4;
            auto a = random_vec(batch * M * K, rng);
            auto b = random_vec(batch * K * N, rng);
            auto c0 = random_vec(batch * M * N, rng);
            auto c1 = c0;
            GemmArgs g;
            g.batch = batch;
            g.m = M;
            g.n = N;
            g.k = K;
            g.trans_a = ta;
            g.trans_b = tb;
            g.accumulate = true;
            g.a = a.data();
            g.b = b.data();
            g.stride_a = M * K;
            g.stride_b = K * N;
            g.stride_c = M * N;
            g.c = c0.data();
            serial::gemm(g);
            g.c = c1.data();
            parallel::gemm(g);
            EXPECT_EQ(c0, c1);
        }
}

TEST(Conv1d, ParallelIsBitwiseEqualToSerial) {
    std::mt19937_64 rng(3);
    Conv1dArgs a;
    a.batch = 12;
    a.c_in = 5;
    a.c_out = 6;
    a.len = 14;
    a.width = 3;
    auto x = random_vec(a.batch * a.c_in * a.len, rng);
    auto w = random_vec(a.c_out * a.c_in * a.width, rng);
    auto bias = random_vec(a.c_out, rng);
    auto dy = random_vec(a.batch * a.c_out * a.len_out(), rng);

    std::vector<double> y0(dy.size()), y1(dy.size());
    serial::conv1d_forward(a, x.data(), w.data(), bias.data(), y0.data());
    parallel::conv1d_forward(a, x.data(), w.data(), bias.data(), y1.data());
    EXPECT_EQ(y0, y1);

    std::vector<double> dx0(x.size(), 0.0), dx1(x.size(), 0.0);
    serial::conv1d_backward_input(a, dy.data(), w.data(), dx0.data());
    parallel::conv1d_backward_input(a, dy.data(), w.data(), dx1.data());
    EXPECT_EQ(dx0, dx1);

    std::vector<double> dw0(w.size(), 0.0), dw1(w.size(), 0.0);
    serial::conv1d_backward_weight(a, dy.data(), x.data(), dw0.data());
    parallel::conv1d_backward_weight(a, dy.data(), x.data(), dw1.data());
    EXPECT_EQ(dw0, dw1);
}

TEST(Softmax, ParallelIsBitwiseEqualToSerial) {
    std::mt19937_64 rng(5);
    const std::size_t rows = 40, cols = 9;
    auto x = random_vec(rows * cols, rng);
    auto dy = random_vec(rows * cols, rng);
    std::vector<double> y0(x.size()), y1(x.size()), d0(x.size(), 0.0), d1(x.size(), 0.0);
    serial::softmax_rows(rows, cols, x.data(), y0.data());
    parallel::softmax_rows(rows, cols, x.data(), y1.data());
    EXPECT_EQ(y0, y1);
    serial::softmax_rows_backward(rows, cols, y0.data(), dy.data(), d0.data());
    parallel::softmax_rows_backward(rows, cols, y0.data(), dy.data(), d1.data());
    EXPECT_EQ(d0, d1);
}

TEST(Backend, ScopeRestoresPrevious) {
    set_backend(Backend::Parallel);
    {
        BackendScope s(Backend::Serial);
        EXPECT_EQ(backend(), Backend::Serial);
    }
    EXPECT_EQ(backend(), Backend::Parallel);
}
