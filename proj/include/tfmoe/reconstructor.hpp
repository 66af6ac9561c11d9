// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

// Per-expert VAE reconstructors over week vectors. Expert k lives in a shared
// ParamStore under "expert<k>.vae.*" so consolidation, snapshots and
// checkpoints see every expert through one store.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tfmoe/param_store.hpp"

namespace tfmoe::recon {

struct VaeShape {
    std::size_t input_dim = 0;  // steps_per_week
    std::size_t hidden1 = 128;
    std::size_t hidden2 = 64;
    std::size_t latent_dim = 32;
};

inline constexpr double kPriorLogVarBound = 20.0;

std::string vae_prefix(std::size_t expert);

/// Registers encoder trunk, mean/log-variance heads, decoder and prior of one expert.
void add_vae_expert(ParamStore& store, std::size_t expert, const VaeShape& shape, std::mt19937_64& rng);

/// Reads the shape back from a store.
VaeShape vae_shape(const ParamStore& store, std::size_t expert);

struct Posterior {
    ad::Var mean, log_var;  // [B, d_z]
};

Posterior vae_encode(const ParamStore& store, std::size_t expert, const ad::Var& weeks);
ad::Var vae_decode(const ParamStore& store, std::size_t expert, const ad::Var& z);

struct ElboParts {
    ad::Var elbo;            // [B]
    ad::Var log_likelihood;  // [B]
    ad::Var kl;              // [B]
};

/// Single-sample ELBO per row of weeks[B, len] with a fixed noise[B, d_z].
ElboParts vae_elbo_parts(const ParamStore& store, std::size_t expert, const Tensor& weeks, const Tensor& noise);
ad::Var vae_elbo(const ParamStore& store, std::size_t expert, const Tensor& weeks, const Tensor& noise);

Tensor standard_normal(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

using Groups = std::vector<std::vector<std::size_t>>;

/// -sum_k sum_{i in groups[k]} ELBO_k(weeks_i); noise drawn from rng per expert.
/// Undefined (empty Var) when every group is empty.
ad::Var group_elbo_loss(const ParamStore& store, const Groups& groups, const Tensor& weeks, std::mt19937_64& rng);

/// Names of parameters belonging to the experts with a non-empty group.
ParamFilter experts_filter(const Groups& groups);

/// Full-batch Adam on group_elbo_loss; one step per epoch. Returns the mean
/// ELBO per assigned node for each epoch.
std::vector<double> train_group_reconstructors(ParamStore& store, AdamState& adam, const Groups& groups,
                                               const Tensor& weeks, std::size_t epochs, std::mt19937_64& rng);

/// ELBO of every node (row of weeks) under every expert; the noise draw of a
/// node comes from seed and is shared across experts.
Tensor evidence_matrix(const ParamStore& store, std::size_t experts, const Tensor& weeks, std::uint64_t seed);

/// Decoder means at z drawn from the expert's prior; rows are week vectors.
Tensor sample_prior(const ParamStore& store, std::size_t expert, std::size_t count, std::mt19937_64& rng);

}  // namespace tfmoe::recon
