// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "tfmoe/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "tfmoe/kernels.hpp"

namespace tfmoe::ad {

namespace {

// Gradient buffer of input i, or null when that input is not trainable.
inline Tensor* grad_in(Node& n, std::size_t i) {
    Node& in = *n.inputs[i];
    return in.requires_grad ? &in.ensure_grad() : nullptr;
}

inline const Tensor& value_in(const Node& n, std::size_t i) { return n.inputs[i]->value; }

void require_same(const Var& a, const Var& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

void require_same(const Var& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

}  // namespace

// ---- dense layers ---------------------------------------------------------

Var linear(const Var& x, const Var& weight, const Var& bias) {
    const auto& ws = weight.shape();
    if (ws.size() != 2 || x.shape().empty() || x.shape().back() != ws[0]) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(ws));
    }
    const bool has_bias = static_cast<bool>(bias);
    if (has_bias && bias.shape() != Shape{ws[1]}) {
        throw DimensionError("linear: bias " + shape_str(bias.shape()) + " for weight " + shape_str(ws));
    }
    const std::size_t din = ws[0], dout = ws[1];
    const std::size_t rows = x.numel() / din;
    Shape out_shape = x.shape();
    out_shape.back() = dout;
    Tensor y(out_shape);
    kernels::GemmArgs g;
    g.m = rows;
    g.n = dout;
    g.k = din;
    g.a = x.value().data();
    g.b = weight.value().data();
    g.c = y.data();
    kernels::gemm(g);
    if (has_bias) {
        const double* bv = bias.value().data();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < dout; ++j) y[r * dout + j] += bv[j];
    }
    std::vector<Var> inputs{x, weight};
    if (has_bias) inputs.push_back(bias);
    return make_result("linear", std::move(y), std::move(inputs), [rows, din, dout, has_bias](Node& n) {
        const double* dy = n.grad.data();
        if (Tensor* dx = grad_in(n, 0)) {
            kernels::GemmArgs g;
            g.m = rows;
            g.n = din;
            g.k = dout;
            g.trans_b = true;
            g.accumulate = true;
            g.a = dy;
            g.b = value_in(n, 1).data();
            g.c = dx->data();
            kernels::gemm(g);
        }
        if (Tensor* dw = grad_in(n, 1)) {
            kernels::GemmArgs g;
            g.m = din;
            g.n = dout;
            g.k = rows;
            g.trans_a = true;
            g.accumulate = true;
            g.a = value_in(n, 0).data();
            g.b = dy;
            g.c = dw->data();
            kernels::gemm(g);
        }
        if (has_bias) {
            if (Tensor* db = grad_in(n, 2)) {
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < dout; ++j) (*db)[j] += dy[r * dout + j];
            }
        }
    });
}

Var linear(const Var& x, const Var& weight) { return linear(x, weight, Var{}); }

Var conv1d(const Var& x, const Var& kernel, const Var& bias) {
    const auto& xs = x.shape();
    const auto& ks = kernel.shape();
    if (xs.size() != 3 || ks.size() != 3 || xs[1] != ks[1]) {
        throw DimensionError("conv1d: input " + shape_str(xs) + " incompatible with kernel " + shape_str(ks));
    }
    if (xs[2] < ks[2]) {
        throw DimensionError("conv1d: length " + std::to_string(xs[2]) + " shorter than kernel width " +
                             std::to_string(ks[2]));
    }
    const bool has_bias = static_cast<bool>(bias);
    if (has_bias && bias.shape() != Shape{ks[0]}) throw DimensionError("conv1d: bias shape " + shape_str(bias.shape()));
    kernels::Conv1dArgs a;
    a.batch = xs[0];
    a.c_in = xs[1];
    a.len = xs[2];
    a.c_out = ks[0];
    a.width = ks[2];
    Tensor y({a.batch, a.c_out, a.len_out()});
    kernels::conv1d_forward(a, x.value().data(), kernel.value().data(), has_bias ? bias.value().data() : nullptr,
                            y.data());
    std::vector<Var> inputs{x, kernel};
    if (has_bias) inputs.push_back(bias);
    return make_result("conv1d", std::move(y), std::move(inputs), [a, has_bias](Node& n) {
        const double* dy = n.grad.data();
        if (Tensor* dx = grad_in(n, 0)) kernels::conv1d_backward_input(a, dy, value_in(n, 1).data(), dx->data());
        if (Tensor* dw = grad_in(n, 1)) kernels::conv1d_backward_weight(a, dy, value_in(n, 0).data(), dw->data());
        if (has_bias) {
            if (Tensor* db = grad_in(n, 2)) {
                const std::size_t lo = a.len_out();
                for (std::size_t b = 0; b < a.batch; ++b)
                    for (std::size_t o = 0; o < a.c_out; ++o)
                        for (std::size_t t = 0; t < lo; ++t) (*db)[o] += dy[(b * a.c_out + o) * lo + t];
            }
        }
    });
}

Var conv1d(const Var& x, const Var& kernel) { return conv1d(x, kernel, Var{}); }

Var pad_last(const Var& x, std::size_t left, std::size_t right) {
    const auto& xs = x.shape();
    if (xs.empty()) throw DimensionError("pad_last: scalar input");
    const std::size_t len = xs.back();
    const std::size_t rows = x.numel() / std::max<std::size_t>(len, 1);
    const std::size_t out_len = len + left + right;
    Shape os = xs;
    os.back() = out_len;
    Tensor y(os);
    const double* xv = x.value().data();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(xv + r * len, len, y.data() + r * out_len + left);
    return make_result("pad_last", std::move(y), {x}, [rows, len, out_len, left](Node& n) {
        if (Tensor* dx = grad_in(n, 0)) {
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t t = 0; t < len; ++t) (*dx)[r * len + t] += n.grad[r * out_len + left + t];
        }
    });
}

// ---- diffusion convolution --------------------------------------------------

Var diffusion_conv(const Var& adjacency, const Var& signal, const Var& weights) {
    const auto& as = adjacency.shape();
    const auto& ss = signal.shape();
    const auto& ws = weights.shape();
    const bool unbatched = as.size() == 2;
    if (unbatched) {
        if (ss.size() != 2 || as[0] != as[1] || ss[0] != as[0]) {
            throw DimensionError("diffusion_conv: adjacency " + shape_str(as) + " incompatible with signal " +
                                 shape_str(ss));
        }
        Var a3 = reshape(adjacency, {1, as[0], as[1]});
        Var s4 = reshape(signal, {1, ss[0], ss[1], 1});
        Var h = diffusion_conv(a3, s4, weights);
        return reshape(h, {ss[0], ws[0]});
    }
    if (as.size() != 3 || as[1] != as[2] || ss.size() != 4 || ss[0] != as[0] || ss[1] != as[1]) {
        throw DimensionError("diffusion_conv: adjacency " + shape_str(as) + " incompatible with signal " +
                             shape_str(ss));
    }
    if (ws.size() != 4 || ws[1] != ss[2] || ws[3] != 2 || ws[2] < 1) {
        throw DimensionError("diffusion_conv: weights " + shape_str(ws) + " incompatible with signal " + shape_str(ss));
    }
    const std::size_t B = as[0], N = as[1], D = ss[2], L = ss[3], Dq = ws[0], M = ws[2];
    const std::size_t DL = D * L;
    const double* av = adjacency.value().data();

    // Transition matrices; P[0] = Do^-1 A, P[1] = Di^-1 A^T. Degrees kept for backward.
    auto trans = std::make_shared<std::vector<double>>(2 * B * N * N);
    auto degree = std::make_shared<std::vector<double>>(2 * B * N);
    for (std::size_t b = 0; b < B; ++b) {
        const double* ab = av + b * N * N;
        double* po = trans->data() + (0 * B + b) * N * N;
        double* pi = trans->data() + (1 * B + b) * N * N;
        double* dout = degree->data() + (0 * B + b) * N;
        double* din = degree->data() + (1 * B + b) * N;
        for (std::size_t i = 0; i < N; ++i) {
            double r = 0.0, c = 0.0;
            for (std::size_t j = 0; j < N; ++j) {
                r += ab[i * N + j];
                c += ab[j * N + i];
            }
            if (!(r > 0.0) || !(c > 0.0)) {
                throw DegenerateDegreeError("diffusion_conv: node " + std::to_string(i) +
                                            " has zero out- or in-degree; add self-loops before diffusion");
            }
            dout[i] = r;
            din[i] = c;
        }
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t j = 0; j < N; ++j) {
                po[i * N + j] = ab[i * N + j] / dout[i];
                pi[i * N + j] = ab[j * N + i] / din[i];
            }
    }

    // states[(s*M + m-1)*B + b] holds P_s^m X_b as [N, D*L].
    auto states = std::make_shared<std::vector<double>>(2 * M * B * N * DL);
    auto state_at = [&, B, N, DL, M](std::size_t s, std::size_t m, std::size_t b) {
        return states->data() + ((s * M + (m - 1)) * B + b) * N * DL;
    };
    const double* xv = signal.value().data();
    for (std::size_t s = 0; s < 2; ++s) {
        for (std::size_t m = 1; m <= M; ++m) {
            kernels::GemmArgs g;
            g.batch = B;
            g.m = N;
            g.n = DL;
            g.k = N;
            g.a = trans->data() + s * B * N * N;
            g.stride_a = N * N;
            g.b = m == 1 ? xv : state_at(s, m - 1, 0);
            g.stride_b = N * DL;
            g.c = state_at(s, m, 0);
            g.stride_c = N * DL;
            kernels::gemm(g);
        }
    }

    const double* lam = weights.value().data();
    auto lam_at = [lam, D, M](std::size_t q, std::size_t p, std::size_t m, std::size_t s) {
        return lam[((q * D + p) * M + (m - 1)) * 2 + s];
    };
    Tensor h({B, N, Dq, L});
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t m = 1; m <= M; ++m)
            for (std::size_t b = 0; b < B; ++b) {
                const double* st = state_at(s, m, b);
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t q = 0; q < Dq; ++q) {
                        double* hr = h.data() + ((b * N + n) * Dq + q) * L;
                        for (std::size_t p = 0; p < D; ++p) {
                            const double z = lam_at(q, p, m, s);
                            const double* sr = st + (n * D + p) * L;
                            for (std::size_t l = 0; l < L; ++l) hr[l] += z * sr[l];
                        }
                    }
            }

    return make_result(
        "diffusion_conv", std::move(h), {adjacency, signal, weights},
        [trans, degree, states, B, N, D, L, Dq, M, DL](Node& n) {
            const double* dh = n.grad.data();
            const double* lam = value_in(n, 2).data();
            const double* xv = value_in(n, 1).data();
            auto state_at = [&](std::size_t s, std::size_t m, std::size_t b) {
                return states->data() + ((s * M + (m - 1)) * B + b) * N * DL;
            };
            Tensor* dlam = grad_in(n, 2);
            Tensor* dx = grad_in(n, 1);
            Tensor* dadj = grad_in(n, 0);

            if (dlam) {
                for (std::size_t q = 0; q < Dq; ++q)
                    for (std::size_t p = 0; p < D; ++p)
                        for (std::size_t m = 1; m <= M; ++m)
                            for (std::size_t s = 0; s < 2; ++s) {
                                double acc = 0.0;
                                for (std::size_t b = 0; b < B; ++b) {
                                    const double* st = state_at(s, m, b);
                                    for (std::size_t nn = 0; nn < N; ++nn) {
                                        const double* hr = dh + ((b * N + nn) * Dq + q) * L;
                                        const double* sr = st + (nn * D + p) * L;
                                        for (std::size_t l = 0; l < L; ++l) acc += hr[l] * sr[l];
                                    }
                                }
                                (*dlam)[((q * D + p) * M + (m - 1)) * 2 + s] += acc;
                            }
            }
            if (!dx && !dadj) return;

            // G_s^m = dH contracted with Lambda[:, :, m, s]; R runs the chain back to X.
            std::vector<double> dtrans(dadj ? 2 * B * N * N : 0, 0.0);
            std::vector<double> r(B * N * DL), g(B * N * DL), next(B * N * DL);
            for (std::size_t s = 0; s < 2; ++s) {
                std::fill(r.begin(), r.end(), 0.0);
                for (std::size_t m = M; m >= 1; --m) {
                    // R^m += G^m
                    for (std::size_t b = 0; b < B; ++b)
                        for (std::size_t nn = 0; nn < N; ++nn)
                            for (std::size_t p = 0; p < D; ++p) {
                                double* gr = r.data() + (b * N + nn) * DL + p * L;
                                for (std::size_t q = 0; q < Dq; ++q) {
                                    const double z = lam[((q * D + p) * M + (m - 1)) * 2 + s];
                                    const double* hr = dh + ((b * N + nn) * Dq + q) * L;
                                    for (std::size_t l = 0; l < L; ++l) gr[l] += z * hr[l];
                                }
                            }
                    const double* prev = m == 1 ? xv : state_at(s, m - 1, 0);
                    if (dadj) {
                        kernels::GemmArgs ga;
                        ga.batch = B;
                        ga.m = N;
                        ga.n = N;
                        ga.k = DL;
                        ga.trans_b = true;
                        ga.accumulate = true;
                        ga.a = r.data();
                        ga.stride_a = N * DL;
                        ga.b = prev;
                        ga.stride_b = N * DL;
                        ga.c = dtrans.data() + s * B * N * N;
                        ga.stride_c = N * N;
                        kernels::gemm(ga);
                    }
                    // R^{m-1} = P^T R^m
                    kernels::GemmArgs gb;
                    gb.batch = B;
                    gb.m = N;
                    gb.n = DL;
                    gb.k = N;
                    gb.trans_a = true;
                    gb.a = trans->data() + s * B * N * N;
                    gb.stride_a = N * N;
                    gb.b = r.data();
                    gb.stride_b = N * DL;
                    gb.c = next.data();
                    gb.stride_c = N * DL;
                    kernels::gemm(gb);
                    r.swap(next);
                }
                if (dx)
                    for (std::size_t i = 0; i < r.size(); ++i) (*dx)[i] += r[i];
            }
            (void)g;

            if (dadj) {
                for (std::size_t b = 0; b < B; ++b) {
                    const double* po = trans->data() + (0 * B + b) * N * N;
                    const double* pi = trans->data() + (1 * B + b) * N * N;
                    const double* dpo = dtrans.data() + (0 * B + b) * N * N;
                    const double* dpi = dtrans.data() + (1 * B + b) * N * N;
                    const double* rdeg = degree->data() + (0 * B + b) * N;
                    const double* cdeg = degree->data() + (1 * B + b) * N;
                    double* da = dadj->data() + b * N * N;
                    for (std::size_t i = 0; i < N; ++i) {
                        double dot_o = 0.0, dot_i = 0.0;
                        for (std::size_t k = 0; k < N; ++k) {
                            dot_o += dpo[i * N + k] * po[i * N + k];
                            dot_i += dpi[i * N + k] * pi[i * N + k];
                        }
                        for (std::size_t j = 0; j < N; ++j) {
                            da[i * N + j] += (dpo[i * N + j] - dot_o) / rdeg[i];
                            da[j * N + i] += (dpi[i * N + j] - dot_i) / cdeg[i];
                        }
                    }
                }
            }
        });
}

Var softmax_rows(const Var& logits) {
    const auto& s = logits.shape();
    if (s.empty() || s.back() == 0) throw DimensionError("softmax_rows: empty last axis");
    const std::size_t cols = s.back();
    const std::size_t rows = logits.numel() / cols;
    Tensor y(s);
    kernels::softmax_rows(rows, cols, logits.value().data(), y.data());
    return make_result("softmax_rows", std::move(y), {logits}, [rows, cols](Node& n) {
        if (Tensor* dx = grad_in(n, 0)) kernels::softmax_rows_backward(rows, cols, n.value.data(), n.grad.data(), dx->data());
    });
}

Var pair_logits(const Var& e, const Var& weight, const Var& bias) {
    const auto& es = e.shape();
    if (es.size() != 3) throw DimensionError("pair_logits: embeddings must be [B,N,de], got " + shape_str(es));
    const std::size_t B = es[0], N = es[1], de = es[2];
    if (weight.numel() != 2 * de || bias.numel() != 1) {
        throw DimensionError("pair_logits: weight " + shape_str(weight.shape()) + " for embedding width " +
                             std::to_string(de));
    }
    const double* ev = e.value().data();
    const double* w = weight.value().data();
    const double b0 = bias.value()[0];
    std::vector<double> src(B * N), dst(B * N);
    for (std::size_t r = 0; r < B * N; ++r) {
        double s = 0.0, t = 0.0;
        for (std::size_t d = 0; d < de; ++d) {
            s += w[d] * ev[r * de + d];
            t += w[de + d] * ev[r * de + d];
        }
        src[r] = s;
        dst[r] = t;
    }
    Tensor y({B, N, N});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t j = 0; j < N; ++j) y[(b * N + i) * N + j] = src[b * N + i] + dst[b * N + j] + b0;
    return make_result("pair_logits", std::move(y), {e, weight, bias}, [B, N, de](Node& n) {
        const double* dy = n.grad.data();
        std::vector<double> ds(B * N, 0.0), dt(B * N, 0.0);
        double total = 0.0;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t j = 0; j < N; ++j) {
                    const double g = dy[(b * N + i) * N + j];
                    ds[b * N + i] += g;
                    dt[b * N + j] += g;
                    total += g;
                }
        const double* ev = value_in(n, 0).data();
        const double* w = value_in(n, 1).data();
        if (Tensor* dE = grad_in(n, 0)) {
            for (std::size_t r = 0; r < B * N; ++r)
                for (std::size_t d = 0; d < de; ++d) (*dE)[r * de + d] += w[d] * ds[r] + w[de + d] * dt[r];
        }
        if (Tensor* dw = grad_in(n, 1)) {
            for (std::size_t d = 0; d < de; ++d) {
                double a = 0.0, c = 0.0;
                for (std::size_t r = 0; r < B * N; ++r) {
                    a += ev[r * de + d] * ds[r];
                    c += ev[r * de + d] * dt[r];
                }
                (*dw)[d] += a;
                (*dw)[de + d] += c;
            }
        }
        if (Tensor* db = grad_in(n, 2)) (*db)[0] += total;
    });
}

// ---- elementwise and structural ------------------------------------------

Var relu(const Var& x) {
    Tensor y(x.shape());
    const double* xv = x.value().data();
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    return make_result("relu", std::move(y), {x}, [](Node& n) {
        if (Tensor* dx = grad_in(n, 0)) {
            const double* xv = value_in(n, 0).data();
            for (std::size_t i = 0; i < dx->numel(); ++i)
                if (xv[i] > 0.0) (*dx)[i] += n.grad[i];
        }
    });
}

Var add(const Var& a, const Var& b) {
    require_same(a, b, "add");
    Tensor y(a.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] + b.value()[i];
    return make_result("add", std::move(y), {a, b}, [](Node& n) {
        for (std::size_t k = 0; k < 2; ++k)
            if (Tensor* d = grad_in(n, k))
                for (std::size_t i = 0; i < d->numel(); ++i) (*d)[i] += n.grad[i];
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a, b, "sub");
    Tensor y(a.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] - b.value()[i];
    return make_result("sub", std::move(y), {a, b}, [](Node& n) {
        if (Tensor* d = grad_in(n, 0))
            for (std::size_t i = 0; i < d->numel(); ++i) (*d)[i] += n.grad[i];
        if (Tensor* d = grad_in(n, 1))
            for (std::size_t i = 0; i < d->numel(); ++i) (*d)[i] -= n.grad[i];
    });
}

Var mul(const Var& a, const Var& b) {
    require_same(a, b, "mul");
    Tensor y(a.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] * b.value()[i];
    return make_result("mul", std::move(y), {a, b}, [](Node& n) {
        const Tensor& av = value_in(n, 0);
        const Tensor& bv = value_in(n, 1);
        if (Tensor* d = grad_in(n, 0))
            for (std::size_t i = 0; i < d->numel(); ++i) (*d)[i] += n.grad[i] * bv[i];
        if (Tensor* d = grad_in(n, 1))
            for (std::size_t i = 0; i < d->numel(); ++i) (*d)[i] += n.grad[i] * av[i];
    });
}

Var scale(const Var& x, double s) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = x.value()[i] * s;
    return make_result("scale", std::move(y), {x}, [s](Node& n) {
        if (Tensor* d = grad_in(n, 0))
            for (std::size_t i = 0; i < d->numel(); ++i) (*d)[i] += n.grad[i] * s;
    });
}

Var add_scalar(const Var& x, double s) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = x.value()[i] + s;
    return make_result("add_scalar", std::move(y), {x}, [](Node& n) {
        if (Tensor* d = grad_in(n, 0))
            for (std::size_t i = 0; i < d->numel(); ++i) (*d)[i] += n.grad[i];
    });
}

Var add_constant(const Var& x, const Tensor& c) {
    require_same(x, c, "add_constant");
    Tensor y(x.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = x.value()[i] + c[i];
    return make_result("add_constant", std::move(y), {x}, [](Node& n) {
        if (Tensor* d = grad_in(n, 0))
            for (std::size_t i = 0; i < d->numel(); ++i) (*d)[i] += n.grad[i];
    });
}

Var reshape(const Var& x, Shape shape) {
    Tensor y = x.value().reshaped(std::move(shape));
    return make_result("reshape", std::move(y), {x}, [](Node& n) {
        if (Tensor* d = grad_in(n, 0))
            for (std::size_t i = 0; i < d->numel(); ++i) (*d)[i] += n.grad[i];
    });
}

Var concat_last(const Var& a, const Var& b) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (as.empty() || as.size() != bs.size() || !std::equal(as.begin(), as.end() - 1, bs.begin())) {
        throw DimensionError("concat_last: " + shape_str(as) + " vs " + shape_str(bs));
    }
    const std::size_t ca = as.back(), cb = bs.back(), cc = ca + cb;
    const std::size_t rows = ca ? a.numel() / ca : b.numel() / std::max<std::size_t>(cb, 1);
    Shape os = as;
    os.back() = cc;
    Tensor y(os);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(a.value().data() + r * ca, ca, y.data() + r * cc);
        std::copy_n(b.value().data() + r * cb, cb, y.data() + r * cc + ca);
    }
    return make_result("concat_last", std::move(y), {a, b}, [rows, ca, cb, cc](Node& n) {
        if (Tensor* d = grad_in(n, 0))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < ca; ++j) (*d)[r * ca + j] += n.grad[r * cc + j];
        if (Tensor* d = grad_in(n, 1))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < cb; ++j) (*d)[r * cb + j] += n.grad[r * cc + ca + j];
    });
}

Var stack_columns(std::span<const Var> columns) {
    if (columns.empty()) throw DimensionError("stack_columns: no columns");
    const std::size_t N = columns[0].numel();
    const std::size_t K = columns.size();
    Tensor y({N, K});
    std::vector<Var> inputs;
    for (std::size_t k = 0; k < K; ++k) {
        if (columns[k].shape() != Shape{N}) {
            throw DimensionError("stack_columns: column " + std::to_string(k) + " has shape " +
                                 shape_str(columns[k].shape()));
        }
        for (std::size_t i = 0; i < N; ++i) y[i * K + k] = columns[k].value()[i];
        inputs.push_back(columns[k]);
    }
    return make_result("stack_columns", std::move(y), std::move(inputs), [N, K](Node& n) {
        for (std::size_t k = 0; k < K; ++k)
            if (Tensor* d = grad_in(n, k))
                for (std::size_t i = 0; i < N; ++i) (*d)[i] += n.grad[i * K + k];
    });
}

Var gather_rows(const Var& x, std::span<const std::size_t> rows) {
    const auto& xs = x.shape();
    if (xs.empty()) throw DimensionError("gather_rows: scalar input");
    const std::size_t width = xs[0] ? x.numel() / xs[0] : 0;
    Shape os = xs;
    os[0] = rows.size();
    Tensor y(os);
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= xs[0]) throw DimensionError("gather_rows: index " + std::to_string(idx[r]) + " out of range");
        std::copy_n(x.value().data() + idx[r] * width, width, y.data() + r * width);
    }
    return make_result("gather_rows", std::move(y), {x}, [idx, width](Node& n) {
        if (Tensor* d = grad_in(n, 0))
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t j = 0; j < width; ++j) (*d)[idx[r] * width + j] += n.grad[r * width + j];
    });
}

// ---- reductions and losses -------------------------------------------------

Var sum(const Var& x) {
    double s = 0.0;
    for (double v : x.value().values()) s += v;
    return make_result("sum", Tensor::scalar(s), {x}, [](Node& n) {
        if (Tensor* d = grad_in(n, 0)) {
            const double g = n.grad[0];
            for (std::size_t i = 0; i < d->numel(); ++i) (*d)[i] += g;
        }
    });
}

Var mean(const Var& x) {
    if (x.numel() == 0) throw DimensionError("mean of empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Var sum_abs_error(const Var& pred, const Tensor& target) {
    require_same(pred, target, "sum_abs_error");
    double s = 0.0;
    for (std::size_t i = 0; i < target.numel(); ++i) s += std::abs(pred.value()[i] - target[i]);
    return make_result("sum_abs_error", Tensor::scalar(s), {pred}, [target](Node& n) {
        if (Tensor* d = grad_in(n, 0)) {
            const double g = n.grad[0];
            const Tensor& pv = value_in(n, 0);
            for (std::size_t i = 0; i < d->numel(); ++i) {
                const double r = pv[i] - target[i];
                (*d)[i] += r > 0.0 ? g : (r < 0.0 ? -g : 0.0);
            }
        }
    });
}

Var mean_abs_error(const Var& pred, const Tensor& target) {
    if (target.numel() == 0) throw DimensionError("mean_abs_error of empty tensor");
    return scale(sum_abs_error(pred, target), 1.0 / static_cast<double>(target.numel()));
}

Var mean_squared_error(const Var& pred, const Tensor& target) {
    require_same(pred, target, "mean_squared_error");
    const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(target.numel(), 1));
    double s = 0.0;
    for (std::size_t i = 0; i < target.numel(); ++i) {
        const double r = pred.value()[i] - target[i];
        s += r * r;
    }
    return make_result("mean_squared_error", Tensor::scalar(s * inv), {pred}, [target, inv](Node& n) {
        if (Tensor* d = grad_in(n, 0)) {
            const double g = n.grad[0];
            const Tensor& pv = value_in(n, 0);
            for (std::size_t i = 0; i < d->numel(); ++i) (*d)[i] += 2.0 * (pv[i] - target[i]) * inv * g;
        }
    });
}

Var row_squared_error(const Var& pred, const Tensor& target) {
    require_same(pred, target, "row_squared_error");
    if (pred.shape().size() != 2) throw DimensionError("row_squared_error expects [B, L]");
    const std::size_t B = pred.shape()[0], L = pred.shape()[1];
    Tensor y({B});
    for (std::size_t b = 0; b < B; ++b) {
        double s = 0.0;
        for (std::size_t l = 0; l < L; ++l) {
            const double r = pred.value()[b * L + l] - target[b * L + l];
            s += r * r;
        }
        y[b] = s;
    }
    return make_result("row_squared_error", std::move(y), {pred}, [target, B, L](Node& n) {
        if (Tensor* d = grad_in(n, 0)) {
            const Tensor& pv = value_in(n, 0);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t l = 0; l < L; ++l)
                    (*d)[b * L + l] += 2.0 * (pv[b * L + l] - target[b * L + l]) * n.grad[b];
        }
    });
}

// ---- probabilistic ---------------------------------------------------------

Var reparameterize(const Var& mean, const Var& log_var, const Tensor& noise) {
    require_same(mean, log_var, "reparameterize");
    require_same(mean, noise, "reparameterize");
    Tensor z(mean.shape());
    for (std::size_t i = 0; i < z.numel(); ++i)
        z[i] = mean.value()[i] + std::exp(0.5 * log_var.value()[i]) * noise[i];
    return make_result("reparameterize", std::move(z), {mean, log_var}, [noise](Node& n) {
        if (Tensor* d = grad_in(n, 0))
            for (std::size_t i = 0; i < d->numel(); ++i) (*d)[i] += n.grad[i];
        if (Tensor* d = grad_in(n, 1)) {
            const Tensor& lv = value_in(n, 1);
            for (std::size_t i = 0; i < d->numel(); ++i) (*d)[i] += n.grad[i] * 0.5 * std::exp(0.5 * lv[i]) * noise[i];
        }
    });
}

namespace {

// Elementwise KL term and its four partial derivatives.
struct KlTerm {
    double value, d_qm, d_qlv, d_pm, d_plv;
};

inline KlTerm kl_term(double qm, double qlv, double pm, double plv) {
    const double ratio = std::exp(qlv - plv);
    const double inv_p = std::exp(-plv);
    const double diff = pm - qm;
    KlTerm t;
    t.value = 0.5 * (ratio + diff * diff * inv_p - 1.0 + plv - qlv);
    t.d_qm = -diff * inv_p;
    t.d_qlv = 0.5 * (ratio - 1.0);
    t.d_pm = diff * inv_p;
    t.d_plv = 0.5 * (-ratio - diff * diff * inv_p + 1.0);
    return t;
}

}  // namespace

Var gaussian_kl(const Var& q_mean, const Var& q_log_var, const Var& p_mean, const Var& p_log_var) {
    require_same(q_mean, q_log_var, "gaussian_kl");
    require_same(q_mean, p_mean, "gaussian_kl");
    require_same(q_mean, p_log_var, "gaussian_kl");
    double s = 0.0;
    for (std::size_t i = 0; i < q_mean.numel(); ++i)
        s += kl_term(q_mean.value()[i], q_log_var.value()[i], p_mean.value()[i], p_log_var.value()[i]).value;
    return make_result("gaussian_kl", Tensor::scalar(s), {q_mean, q_log_var, p_mean, p_log_var}, [](Node& n) {
        const double g = n.grad[0];
        Tensor* d[4] = {grad_in(n, 0), grad_in(n, 1), grad_in(n, 2), grad_in(n, 3)};
        for (std::size_t i = 0; i < value_in(n, 0).numel(); ++i) {
            const KlTerm t = kl_term(value_in(n, 0)[i], value_in(n, 1)[i], value_in(n, 2)[i], value_in(n, 3)[i]);
            if (d[0]) (*d[0])[i] += g * t.d_qm;
            if (d[1]) (*d[1])[i] += g * t.d_qlv;
            if (d[2]) (*d[2])[i] += g * t.d_pm;
            if (d[3]) (*d[3])[i] += g * t.d_plv;
        }
    });
}

Var gaussian_kl_rows(const Var& q_mean, const Var& q_log_var, const Var& p_mean, const Var& p_log_var) {
    require_same(q_mean, q_log_var, "gaussian_kl_rows");
    require_same(p_mean, p_log_var, "gaussian_kl_rows");
    if (q_mean.shape().size() != 2 || p_mean.shape() != Shape{q_mean.shape()[1]}) {
        throw DimensionError("gaussian_kl_rows: posterior " + shape_str(q_mean.shape()) + " vs prior " +
                             shape_str(p_mean.shape()));
    }
    const std::size_t B = q_mean.shape()[0], d = q_mean.shape()[1];
    Tensor y({B});
    for (std::size_t b = 0; b < B; ++b) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j)
            s += kl_term(q_mean.value()[b * d + j], q_log_var.value()[b * d + j], p_mean.value()[j],
                         p_log_var.value()[j])
                     .value;
        y[b] = s;
    }
    return make_result("gaussian_kl_rows", std::move(y), {q_mean, q_log_var, p_mean, p_log_var}, [B, d](Node& n) {
        Tensor* g[4] = {grad_in(n, 0), grad_in(n, 1), grad_in(n, 2), grad_in(n, 3)};
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < d; ++j) {
                const double up = n.grad[b];
                const KlTerm t = kl_term(value_in(n, 0)[b * d + j], value_in(n, 1)[b * d + j], value_in(n, 2)[j],
                                         value_in(n, 3)[j]);
                if (g[0]) (*g[0])[b * d + j] += up * t.d_qm;
                if (g[1]) (*g[1])[b * d + j] += up * t.d_qlv;
                if (g[2]) (*g[2])[j] += up * t.d_pm;
                if (g[3]) (*g[3])[j] += up * t.d_plv;
            }
    });
}

Var student_t_assign(const Var& latents, const Var& centroids) {
    const auto& ls = latents.shape();
    const auto& cs = centroids.shape();
    if (ls.size() != 2 || cs.size() != 2 || ls[1] != cs[1]) {
        throw DimensionError("student_t_assign: latents " + shape_str(ls) + " vs centroids " + shape_str(cs));
    }
    const std::size_t N = ls[0], K = cs[0], d = ls[1];
    const double* x = latents.value().data();
    const double* mu = centroids.value().data();
    Tensor q({N, K});
    auto kernel = std::make_shared<std::vector<double>>(N * K);  // (1 + |x - mu|^2)^-1
    for (std::size_t i = 0; i < N; ++i) {
        double z = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            double dist = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double r = x[i * d + j] - mu[k * d + j];
                dist += r * r;
            }
            const double u = 1.0 / (1.0 + dist);
            (*kernel)[i * K + k] = u;
            z += u;
        }
        for (std::size_t k = 0; k < K; ++k) q[i * K + k] = (*kernel)[i * K + k] / z;
    }
    return make_result("student_t_assign", std::move(q), {latents, centroids}, [kernel, N, K, d](Node& n) {
        const double* x = value_in(n, 0).data();
        const double* mu = value_in(n, 1).data();
        Tensor* dx = grad_in(n, 0);
        Tensor* dmu = grad_in(n, 1);
        for (std::size_t i = 0; i < N; ++i) {
            double z = 0.0, dot = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                z += (*kernel)[i * K + k];
                dot += n.grad[i * K + k] * n.value[i * K + k];
            }
            for (std::size_t k = 0; k < K; ++k) {
                const double u = (*kernel)[i * K + k];
                const double du = (n.grad[i * K + k] - dot) / z;
                const double ddist = -du * u * u;
                for (std::size_t j = 0; j < d; ++j) {
                    const double r = 2.0 * (x[i * d + j] - mu[k * d + j]) * ddist;
                    if (dx) (*dx)[i * d + j] += r;
                    if (dmu) (*dmu)[k * d + j] -= r;
                }
            }
        }
    });
}

Var kl_to_target(const Tensor& p, const Var& q) {
    require_same(q, p, "kl_to_target");
    double s = 0.0;
    for (std::size_t i = 0; i < p.numel(); ++i)
        if (p[i] > 0.0) s += p[i] * (std::log(p[i]) - std::log(q.value()[i]));
    return make_result("kl_to_target", Tensor::scalar(s), {q}, [p](Node& n) {
        if (Tensor* d = grad_in(n, 0)) {
            const double g = n.grad[0];
            const Tensor& qv = value_in(n, 0);
            for (std::size_t i = 0; i < p.numel(); ++i)
                if (p[i] > 0.0) (*d)[i] -= g * p[i] / qv[i];
        }
    });
}

Var mix_experts(std::span<const Var> preds, const Var& gates) {
    const std::size_t K = preds.size();
    if (K == 0) throw DimensionError("mix_experts: no experts");
    const auto& ps = preds[0].shape();
    if (ps.size() != 3) throw DimensionError("mix_experts: predictions must be [B,N,T]");
    const std::size_t B = ps[0], N = ps[1], T = ps[2];
    if (gates.shape() != Shape{N, K}) {
        throw DimensionError("mix_experts: gates " + shape_str(gates.shape()) + " for " + std::to_string(N) +
                             " nodes and " + std::to_string(K) + " experts");
    }
    Tensor y(ps);
    std::vector<Var> inputs;
    const double* g = gates.value().data();
    for (std::size_t k = 0; k < K; ++k) {
        if (preds[k].shape() != ps) throw DimensionError("mix_experts: expert prediction shapes differ");
        const double* pv = preds[k].value().data();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t t = 0; t < T; ++t) y[(b * N + i) * T + t] += g[i * K + k] * pv[(b * N + i) * T + t];
        inputs.push_back(preds[k]);
    }
    inputs.push_back(gates);
    return make_result("mix_experts", std::move(y), std::move(inputs), [B, N, T, K](Node& n) {
        const double* g = value_in(n, K).data();
        Tensor* dg = grad_in(n, K);
        for (std::size_t k = 0; k < K; ++k) {
            Tensor* dp = grad_in(n, k);
            const double* pv = value_in(n, k).data();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t i = 0; i < N; ++i)
                    for (std::size_t t = 0; t < T; ++t) {
                        const std::size_t idx = (b * N + i) * T + t;
                        if (dp) (*dp)[idx] += g[i * K + k] * n.grad[idx];
                        if (dg) (*dg)[i * K + k] += pv[idx] * n.grad[idx];
                    }
        }
    });
}

}  // namespace tfmoe::ad
