// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

// Pre-training on first-task week vectors: an MLP autoencoder, k-means
// centroids in its latent space, Deep Embedded Clustering refinement, and the
// hard node-to-group assignment the experts are built from.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tfmoe/param_store.hpp"

namespace tfmoe::cluster {

struct AutoencoderShape {
    std::size_t input_dim = 0;  // steps_per_week
    std::size_t hidden1 = 128;
    std::size_t hidden2 = 64;
    std::size_t latent_dim = 32;
};

/// R_pre with its optimizer state, so training can be resumed exactly.
struct PretrainAutoencoder {
    AutoencoderShape shape;
    ParamStore params;  // "pre.enc.*", "pre.dec.*"
    AdamState adam;
    std::vector<double> loss_history;

    ad::Var encode(const ad::Var& weeks) const;
    ad::Var reconstruct(const ad::Var& weeks) const;
};

PretrainAutoencoder make_autoencoder(const AutoencoderShape& shape, std::uint64_t seed);

/// (1/N) sum_i ||x_i - R(x_i)||_1
ad::Var reconstruction_loss(const PretrainAutoencoder& model, const Tensor& weeks);

/// Full-batch Adam steps on the reconstruction loss, one per epoch.
void pretrain_autoencoder(PretrainAutoencoder& model, const Tensor& weeks, std::size_t epochs);

Tensor encode_latents(const PretrainAutoencoder& model, const Tensor& weeks);

struct KMeansOptions {
    std::size_t restarts = 10;
    std::size_t max_iter = 300;
    double tol = 1e-6;
};

struct KMeansResult {
    Tensor centroids;  // [K, d]
    std::vector<int> labels;
    double inertia = 0.0;
    std::size_t iterations = 0;
};

/// k-means++ seeding and Lloyd iterations; best restart by inertia.
KMeansResult kmeans(const Tensor& points, std::size_t k, std::uint64_t seed, const KMeansOptions& opts = {});

Tensor kmeans_init(const Tensor& latents, std::size_t k, std::uint64_t seed);

/// Student's t kernel with one degree of freedom, rows normalized.
Tensor soft_assign(const Tensor& latents, const Tensor& centroids);

/// p_ik proportional to q_ik^2 / f_k with f_k = sum_i q_ik.
Tensor target_distribution(const Tensor& q);

struct HardAssignment {
    std::vector<int> labels;                      // c_i
    std::vector<std::vector<std::size_t>> groups;  // SG_k, ascending node positions
    std::vector<std::size_t> empty_groups;
};

/// argmax per row, ties to the lowest index.
HardAssignment hard_assign(const Tensor& q);

struct ClusterState {
    Tensor centroids;  // [K, d_Z]
    Tensor q, p;       // [N, K]
    HardAssignment assignment;
    double alpha = 1e-4;
    ParamStore centroid_params;  // "centroids", trained jointly with the autoencoder
    AdamState centroid_adam;
    std::vector<double> loss_history;
};

/// Jointly minimizes L_recon + alpha * KL(p || q) over the autoencoder and the
/// centroids. p is recomputed from the current model once per epoch.
ClusterState dec_train(PretrainAutoencoder& model, const Tensor& initial_centroids, const Tensor& weeks,
                       double alpha, std::size_t epochs);

/// Adjusted Rand index between two labelings of the same items.
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

}  // namespace tfmoe::cluster
