// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

// Dense inner loops behind the differentiable ops.
//
// Every kernel exists twice: a serial reference in kernels::serial and an
// OpenMP version in kernels::parallel. The parallel versions split work only
// over output elements, and each output element is accumulated in the same
// order as the serial reference, so the two agree bitwise for any thread count.
// The unqualified functions dispatch on the process-wide backend.

#pragma once

#include <cstddef>

namespace tfmoe::kernels {

enum class Backend { Serial, Parallel };

void set_backend(Backend b);
Backend backend();

/// Scoped backend override, used by tests and the benchmark.
class BackendScope {
public:
    explicit BackendScope(Backend b) : saved_(backend()) { set_backend(b); }
    ~BackendScope() { set_backend(saved_); }
    BackendScope(const BackendScope&) = delete;
    BackendScope& operator=(const BackendScope&) = delete;

private:
    Backend saved_;
};

// C[M,N] (+)= op(A) * op(B) with op(A) of shape [M,K] and op(B) of shape [K,N].
// trans_a means A is stored [K,M]; trans_b means B is stored [N,K].
// `batch` independent products with the given element strides.
struct GemmArgs {
    std::size_t batch = 1;
    std::size_t m = 0, n = 0, k = 0;
    bool trans_a = false, trans_b = false;
    bool accumulate = false;
    const double* a = nullptr;
    const double* b = nullptr;
    double* c = nullptr;
    std::size_t stride_a = 0, stride_b = 0, stride_c = 0;
};

// Cross-correlation over the last axis. x[B,Cin,L], w[Cout,Cin,K], y[B,Cout,L-K+1].
struct Conv1dArgs {
    std::size_t batch = 0, c_in = 0, c_out = 0, len = 0, width = 0;
    std::size_t len_out() const { return len - width + 1; }
};

namespace serial {
void gemm(const GemmArgs& g);
void conv1d_forward(const Conv1dArgs& a, const double* x, const double* w, const double* bias, double* y);
void conv1d_backward_input(const Conv1dArgs& a, const double* dy, const double* w, double* dx);
void conv1d_backward_weight(const Conv1dArgs& a, const double* dy, const double* x, double* dw);
void softmax_rows(std::size_t rows, std::size_t cols, const double* x, double* y);
void softmax_rows_backward(std::size_t rows, std::size_t cols, const double* y, const double* dy, double* dx);
}  // namespace serial

namespace parallel {
void gemm(const GemmArgs& g);
void conv1d_forward(const Conv1dArgs& a, const double* x, const double* w, const double* bias, double* y);
void conv1d_backward_input(const Conv1dArgs& a, const double* dy, const double* w, double* dx);
void conv1d_backward_weight(const Conv1dArgs& a, const double* dy, const double* x, double* dw);
void softmax_rows(std::size_t rows, std::size_t cols, const double* x, double* y);
void softmax_rows_backward(std::size_t rows, std::size_t cols, const double* y, const double* dy, double* dx);
}  // namespace parallel

void gemm(const GemmArgs& g);
void conv1d_forward(const Conv1dArgs& a, const double* x, const double* w, const double* bias, double* y);
void conv1d_backward_input(const Conv1dArgs& a, const double* dy, const double* w, double* dx);
void conv1d_backward_weight(const Conv1dArgs& a, const double* dy, const double* x, double* dw);
void softmax_rows(std::size_t rows, std::size_t cols, const double* x, double* y);
void softmax_rows_backward(std::size_t rows, std::size_t cols, const double* y, const double* dy, double* dx);

}  // namespace tfmoe::kernels
