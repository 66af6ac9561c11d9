// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

// Per-expert graph predictors and their reconstruction-gated mixture.
// Expert k's predictor lives under "expert<k>.pred.*".

#pragma once

#include <random>
#include <string>

#include "tfmoe/param_store.hpp"

namespace tfmoe::pred {

struct PredictorShape {
    std::size_t input_steps = 12;  // T'
    std::size_t horizon = 12;      // T
    std::size_t embed_dim = 32;    // d_e, also the diffusion output channels
    std::size_t diffusion_steps = 1;  // M
    std::size_t kernel = 3;
};

enum class NoiseMode { Train, Eval };

std::string predictor_prefix(std::size_t expert);

void add_predictor_expert(ParamStore& store, std::size_t expert, const PredictorShape& shape, std::mt19937_64& rng);

PredictorShape predictor_shape(const ParamStore& store, std::size_t expert);

/// -ln(-ln u)
double gumbel_from_uniform(double u);

/// i.i.d. Gumbel(0,1) draws.
Tensor gumbel_noise(const Shape& shape, std::mt19937_64& rng);

/// Row-stochastic A[B, N, N] from x[B, N, T']. rng is required in Train mode.
ad::Var learn_adjacency(const ParamStore& store, std::size_t expert, const ad::Var& x, NoiseMode mode,
                        std::mt19937_64* rng);

/// ReLU(diffusion conv) then two same-padded temporal convs: x[B, N, T'] -> [B, N, T].
ad::Var predictor_forward(const ParamStore& store, std::size_t expert, const ad::Var& adjacency, const ad::Var& x);

/// learn_adjacency followed by predictor_forward.
ad::Var expert_predict(const ParamStore& store, std::size_t expert, const ad::Var& x, NoiseMode mode,
                       std::mt19937_64* rng);

/// Row softmax of log-evidence[N, K].
ad::Var gating_weights(const ad::Var& log_evidence);
Tensor gating_weights(const Tensor& log_evidence);

/// sum_k gates[n, k] * P_k(x)[b, n, :]; each expert builds its own adjacency.
ad::Var moe_predict(const ParamStore& store, std::size_t experts, const ad::Var& gates, const ad::Var& x,
                    NoiseMode mode, std::mt19937_64* rng);

/// Mean absolute error over all elements.
ad::Var prediction_loss(const ad::Var& pred, const Tensor& target);

}  // namespace tfmoe::pred
