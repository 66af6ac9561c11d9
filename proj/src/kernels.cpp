// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "tfmoe/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tfmoe::kernels {

namespace {

std::atomic<Backend> g_backend{Backend::Parallel};

// Below this many output rows the parallel region costs more than it saves.
constexpr std::int64_t kMinParallelRows = 8;

inline double a_at(const GemmArgs& g, const double* a, std::size_t i, std::size_t p) {
    return g.trans_a ? a[p * g.m + i] : a[i * g.k + p];
}

// One output row of one batch entry. Accumulation order over k is fixed.
inline void gemm_row(const GemmArgs& g, std::size_t bi, std::size_t i) {
    const double* a = g.a + bi * g.stride_a;
    const double* b = g.b + bi * g.stride_b;
    double* c = g.c + bi * g.stride_c + i * g.n;
    if (!g.trans_b) {
        if (!g.accumulate) std::fill(c, c + g.n, 0.0);
        for (std::size_t p = 0; p < g.k; ++p) {
            const double av = a_at(g, a, i, p);
            const double* brow = b + p * g.n;
            for (std::size_t j = 0; j < g.n; ++j) c[j] += av * brow[j];
        }
    } else {
        for (std::size_t j = 0; j < g.n; ++j) {
            const double* brow = b + j * g.k;
            double s = 0.0;
            for (std::size_t p = 0; p < g.k; ++p) s += a_at(g, a, i, p) * brow[p];
            c[j] = g.accumulate ? c[j] + s : s;
        }
    }
}

inline void conv_forward_row(const Conv1dArgs& a, const double* x, const double* w, const double* bias, double* y,
                             std::size_t b, std::size_t o) {
    const std::size_t lo = a.len_out();
    double* yrow = y + (b * a.c_out + o) * lo;
    std::fill(yrow, yrow + lo, bias ? bias[o] : 0.0);
    for (std::size_t c = 0; c < a.c_in; ++c) {
        const double* xr = x + (b * a.c_in + c) * a.len;
        const double* wr = w + (o * a.c_in + c) * a.width;
        for (std::size_t j = 0; j < a.width; ++j) {
            const double wv = wr[j];
            for (std::size_t t = 0; t < lo; ++t) yrow[t] += wv * xr[t + j];
        }
    }
}

inline void conv_backward_input_row(const Conv1dArgs& a, const double* dy, const double* w, double* dx,
                                    std::size_t b, std::size_t c) {
    const std::size_t lo = a.len_out();
    double* dxr = dx + (b * a.c_in + c) * a.len;
    for (std::size_t o = 0; o < a.c_out; ++o) {
        const double* dyr = dy + (b * a.c_out + o) * lo;
        const double* wr = w + (o * a.c_in + c) * a.width;
        for (std::size_t j = 0; j < a.width; ++j) {
            const double wv = wr[j];
            for (std::size_t t = 0; t < lo; ++t) dxr[t + j] += wv * dyr[t];
        }
    }
}

inline void conv_backward_weight_row(const Conv1dArgs& a, const double* dy, const double* x, double* dw,
                                     std::size_t o, std::size_t c) {
    const std::size_t lo = a.len_out();
    double* dwr = dw + (o * a.c_in + c) * a.width;
    for (std::size_t j = 0; j < a.width; ++j) {
        double s = 0.0;
        for (std::size_t b = 0; b < a.batch; ++b) {
            const double* dyr = dy + (b * a.c_out + o) * lo;
            const double* xr = x + (b * a.c_in + c) * a.len + j;
            for (std::size_t t = 0; t < lo; ++t) s += dyr[t] * xr[t];
        }
        dwr[j] += s;
    }
}

inline void softmax_row(std::size_t cols, const double* x, double* y) {
    double mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
        y[j] = std::exp(x[j] - mx);
        z += y[j];
    }
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
}

inline void softmax_backward_row(std::size_t cols, const double* y, const double* dy, double* dx) {
    double dot = 0.0;
    for (std::size_t j = 0; j < cols; ++j) dot += y[j] * dy[j];
    for (std::size_t j = 0; j < cols; ++j) dx[j] += y[j] * (dy[j] - dot);
}

}  // namespace

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

namespace serial {

void gemm(const GemmArgs& args) {
    const GemmArgs g = args;
    for (std::size_t bi = 0; bi < g.batch; ++bi)
        for (std::size_t i = 0; i < g.m; ++i) gemm_row(g, bi, i);
}

void conv1d_forward(const Conv1dArgs& a, const double* x, const double* w, const double* bias, double* y) {
    for (std::size_t b = 0; b < a.batch; ++b)
        for (std::size_t o = 0; o < a.c_out; ++o) conv_forward_row(a, x, w, bias, y, b, o);
}

void conv1d_backward_input(const Conv1dArgs& a, const double* dy, const double* w, double* dx) {
    for (std::size_t b = 0; b < a.batch; ++b)
        for (std::size_t c = 0; c < a.c_in; ++c) conv_backward_input_row(a, dy, w, dx, b, c);
}

void conv1d_backward_weight(const Conv1dArgs& a, const double* dy, const double* x, double* dw) {
    for (std::size_t o = 0; o < a.c_out; ++o)
        for (std::size_t c = 0; c < a.c_in; ++c) conv_backward_weight_row(a, dy, x, dw, o, c);
}

void softmax_rows(std::size_t rows, std::size_t cols, const double* x, double* y) {
    for (std::size_t r = 0; r < rows; ++r) softmax_row(cols, x + r * cols, y + r * cols);
}

void softmax_rows_backward(std::size_t rows, std::size_t cols, const double* y, const double* dy, double* dx) {
    for (std::size_t r = 0; r < rows; ++r)
        softmax_backward_row(cols, y + r * cols, dy + r * cols, dx + r * cols);
}

}  // namespace serial

namespace parallel {

void gemm(const GemmArgs& args) {
    const auto total = static_cast<std::int64_t>(args.batch * args.m);
    // Thread-private copy so the row loop can keep the arguments in registers.
#pragma omp parallel if (total >= kMinParallelRows)
    {
        const GemmArgs g = args;
#pragma omp for schedule(static)
        for (std::int64_t r = 0; r < total; ++r) {
            const auto ur = static_cast<std::size_t>(r);
            gemm_row(g, ur / g.m, ur % g.m);
        }
    }
}

void conv1d_forward(const Conv1dArgs& a, const double* x, const double* w, const double* bias, double* y) {
    const auto total = static_cast<std::int64_t>(a.batch * a.c_out);
#pragma omp parallel for schedule(static) if (total >= kMinParallelRows)
    for (std::int64_t r = 0; r < total; ++r) {
        const auto ur = static_cast<std::size_t>(r);
        conv_forward_row(a, x, w, bias, y, ur / a.c_out, ur % a.c_out);
    }
}

void conv1d_backward_input(const Conv1dArgs& a, const double* dy, const double* w, double* dx) {
    const auto total = static_cast<std::int64_t>(a.batch * a.c_in);
#pragma omp parallel for schedule(static) if (total >= kMinParallelRows)
    for (std::int64_t r = 0; r < total; ++r) {
        const auto ur = static_cast<std::size_t>(r);
        conv_backward_input_row(a, dy, w, dx, ur / a.c_in, ur % a.c_in);
    }
}

void conv1d_backward_weight(const Conv1dArgs& a, const double* dy, const double* x, double* dw) {
    const auto total = static_cast<std::int64_t>(a.c_out * a.c_in);
#pragma omp parallel for schedule(static) if (total >= kMinParallelRows)
    for (std::int64_t r = 0; r < total; ++r) {
        const auto ur = static_cast<std::size_t>(r);
        conv_backward_weight_row(a, dy, x, dw, ur / a.c_in, ur % a.c_in);
    }
}

void softmax_rows(std::size_t rows, std::size_t cols, const double* x, double* y) {
    const auto total = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static) if (total >= kMinParallelRows)
    for (std::int64_t r = 0; r < total; ++r) {
        const auto ur = static_cast<std::size_t>(r);
        softmax_row(cols, x + ur * cols, y + ur * cols);
    }
}

void softmax_rows_backward(std::size_t rows, std::size_t cols, const double* y, const double* dy, double* dx) {
    const auto total = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static) if (total >= kMinParallelRows)
    for (std::int64_t r = 0; r < total; ++r) {
        const auto ur = static_cast<std::size_t>(r);
        softmax_backward_row(cols, y + ur * cols, dy + ur * cols, dx + ur * cols);
    }
}

}  // namespace parallel

#define TFMOE_DISPATCH(fn, ...)                                   \
    if (backend() == Backend::Serial) return serial::fn(__VA_ARGS__); \
    return parallel::fn(__VA_ARGS__)

void gemm(const GemmArgs& g) { TFMOE_DISPATCH(gemm, g); }
void conv1d_forward(const Conv1dArgs& a, const double* x, const double* w, const double* bias, double* y) {
    TFMOE_DISPATCH(conv1d_forward, a, x, w, bias, y);
}
void conv1d_backward_input(const Conv1dArgs& a, const double* dy, const double* w, double* dx) {
    TFMOE_DISPATCH(conv1d_backward_input, a, dy, w, dx);
}
void conv1d_backward_weight(const Conv1dArgs& a, const double* dy, const double* x, double* dw) {
    TFMOE_DISPATCH(conv1d_backward_weight, a, dy, x, dw);
}
void softmax_rows(std::size_t rows, std::size_t cols, const double* x, double* y) {
    TFMOE_DISPATCH(softmax_rows, rows, cols, x, y);
}
void softmax_rows_backward(std::size_t rows, std::size_t cols, const double* y, const double* dy, double* dx) {
    TFMOE_DISPATCH(softmax_rows_backward, rows, cols, y, dy, dx);
}

#undef TFMOE_DISPATCH

}  // namespace tfmoe::kernels
