// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

// The fixed op vocabulary. Every model computation in the library is a
// composition of these functions; each one registers its own backward.

#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>

#include "tfmoe/autodiff.hpp"

namespace tfmoe::ad {

/// A diffusion adjacency with a zero row or column sum has no transition matrix.
class DegenerateDegreeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---- dense layers ---------------------------------------------------------

/// y[..., dout] = x[..., din] * weight[din, dout] + bias[dout]
Var linear(const Var& x, const Var& weight, const Var& bias);
Var linear(const Var& x, const Var& weight);

/// Stride-1 cross-correlation without padding.
/// x[B, Cin, L], kernel[Cout, Cin, K] -> [B, Cout, L-K+1]
Var conv1d(const Var& x, const Var& kernel);
Var conv1d(const Var& x, const Var& kernel, const Var& bias);

/// Zero padding on the last axis of x[B, C, L].
Var pad_last(const Var& x, std::size_t left, std::size_t right);

/// Bidirectional diffusion convolution.
///
///   H[:, q] = sum_p sum_{m=1..M} ( Z[m,0] (Do^-1 A)^m + Z[m,1] (Di^-1 A^T)^m ) X[:, p],  Z = weights[q, p]
///
/// Batched form: adjacency[B,N,N], signal[B,N,D,L], weights[D',D,M,2] -> [B,N,D',L];
/// the same spatial filter is applied at every position of the trailing L axis.
/// Unbatched form: adjacency[N,N], signal[N,D] -> [N,D'].
Var diffusion_conv(const Var& adjacency, const Var& signal, const Var& weights);

/// Softmax over the last axis with per-row max subtraction.
Var softmax_rows(const Var& logits);

/// out[b,i,j] = w[:de].e[b,i] + w[de:].e[b,j] + bias; the linear map of [e_i; e_j].
/// e[B,N,de], weight[2*de, 1], bias[1] -> [B,N,N]
Var pair_logits(const Var& e, const Var& weight, const Var& bias);

// ---- elementwise and structural ------------------------------------------

Var relu(const Var& x);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double s);
Var add_scalar(const Var& x, double s);
/// x + c for a constant tensor c of the same shape.
Var add_constant(const Var& x, const Tensor& c);
Var reshape(const Var& x, Shape shape);
/// Concatenate along the last axis; leading dims must match.
Var concat_last(const Var& a, const Var& b);
/// K vectors of shape [N] -> [N, K].
Var stack_columns(std::span<const Var> columns);
/// Rows of x[N, ...] picked by index.
Var gather_rows(const Var& x, std::span<const std::size_t> rows);

// ---- reductions and losses -------------------------------------------------

Var sum(const Var& x);
Var mean(const Var& x);
Var mean_abs_error(const Var& pred, const Tensor& target);
Var sum_abs_error(const Var& pred, const Tensor& target);
Var mean_squared_error(const Var& pred, const Tensor& target);
/// Per-row sum of squared residuals: pred[B, L] -> [B].
Var row_squared_error(const Var& pred, const Tensor& target);

// ---- probabilistic ---------------------------------------------------------

/// z = mean + exp(0.5 log_var) * noise; noise is a constant draw.
Var reparameterize(const Var& mean, const Var& log_var, const Tensor& noise);

/// KL(N(q_mean, exp(q_log_var)) || N(p_mean, exp(p_log_var))) summed over all
/// elements. All four operands share one shape.
Var gaussian_kl(const Var& q_mean, const Var& q_log_var, const Var& p_mean, const Var& p_log_var);

/// Row-wise KL: q[B, d] against a shared prior p[d] -> [B].
Var gaussian_kl_rows(const Var& q_mean, const Var& q_log_var, const Var& p_mean, const Var& p_log_var);

/// Student's t (one degree of freedom) soft assignment of latents[N, d] to
/// centroids[K, d] -> q[N, K].
Var student_t_assign(const Var& latents, const Var& centroids);

/// sum_ik p_ik log(p_ik / q_ik) for a constant target p.
Var kl_to_target(const Tensor& p, const Var& q);

/// out[b,n,t] = sum_k gates[n,k] * preds[k][b,n,t]
Var mix_experts(std::span<const Var> preds, const Var& gates);

}  // namespace tfmoe::ad
