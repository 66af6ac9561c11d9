// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

// Continual training across tasks: the pre-training stage, localized groups
// and the consolidation term, synthetic rehearsal from frozen experts,
// replay of poorly reconstructed old nodes, and the per-task loop that the
// four protocols share.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tfmoe/datastream.hpp"
#include "tfmoe/param_store.hpp"
#include "tfmoe/predictor.hpp"
#include "tfmoe/reconstructor.hpp"

namespace tfmoe::engine {

/// Task order or pre-training contract broken (e.g. training task 3 on a task-1 model).
class StateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Protocol { TFMoE, Static, Expansible, Retrained };
const char* to_string(Protocol p);
Protocol protocol_from_string(const std::string& s);

/// Mechanisms applied at tau > 1. Task 1 is the same for every setting.
struct Mechanisms {
    bool consolidation = true;
    bool sampling = true;
    bool replay = true;
};

struct EngineConfig {
    std::size_t experts = 4;          // K
    std::size_t pretrain_latent = 32;  // d_Z
    std::size_t vae_latent = 32;       // d_z
    std::size_t hidden1 = 128;
    std::size_t hidden2 = 64;
    pred::PredictorShape predictor;
    double alpha = 1e-4;
    double beta = 0.1;
    double sample_fraction = 0.09;  // n_s / N^tau
    double replay_fraction = 0.01;  // n_r / N^tau
    std::size_t pretrain_epochs = 200;
    std::size_t dec_epochs = 100;
    std::size_t reconstructor_epochs = 1000;
    std::size_t first_epochs = 50;
    std::size_t later_epochs = 10;
    std::size_t batch_size = 128;
    std::array<double, kParamGroupCount> lr{0.001, 0.0001, 0.01};
    std::uint64_t seed = 1;
    Protocol protocol = Protocol::TFMoE;
    Mechanisms mechanisms;

    /// Throws ConfigError.
    void validate() const;
};

/// What a protocol does at a task after the first.
struct TaskPlan {
    bool train = true;
    bool all_nodes = false;  // pool is V^tau instead of the new nodes
    bool consolidation = true;
    bool sampling = true;
    bool replay = true;
};
TaskPlan plan_for(const EngineConfig& cfg);

std::size_t default_sample_count(const EngineConfig& cfg, std::size_t graph_size);
std::size_t default_replay_count(const EngineConfig& cfg, std::size_t graph_size);

/// Everything needed to continue training or to forecast.
struct ModelState {
    std::size_t experts = 0;
    std::size_t steps_per_week = 0;
    std::uint64_t seed = 1;
    pred::PredictorShape predictor;
    ParamStore params;  // expert<k>.vae.*, expert<k>.pred.*
    AdamState adam;
    int trained_task = 0;  // 0: pre-trained only
    bool pretrained = false;
    data::NormStats norm;  // statistics used for the latest trained task
    std::map<int, data::NormStats> task_norms;
    Tensor centroids;                  // [K, d_Z] after refinement
    std::vector<data::NodeId> sg_nodes;  // task-1 nodes
    std::vector<int> sg_labels;          // SG_k membership per task-1 node
};

/// Registers K reconstructors and predictors with seeded initial weights.
ModelState make_model(const EngineConfig& cfg, std::size_t steps_per_week);

struct PretrainReport {
    std::vector<double> autoencoder_loss;
    std::vector<double> clustering_loss;
    std::vector<double> reconstructor_elbo;
    std::vector<std::size_t> group_sizes;
    std::vector<std::size_t> empty_groups;
    double seconds = 0.0;
};

/// Autoencoder, k-means, refinement, SG_k, then ELBO training of each reconstructor on its group.
PretrainReport pretrain(ModelState& state, const data::TaskDataset& first_task, const EngineConfig& cfg);

// ---- mechanisms ------------------------------------------------------------------

/// Row-wise argmax of previous-task evidence [n, K], ties to the lowest index.
recon::Groups build_localized_groups(const Tensor& evidence);

/// sum_k sum_{i in groups[k]} ELBO_k(weeks_i). A zero scalar when every group is empty.
ad::Var consolidation_loss(const ParamStore& store, const recon::Groups& groups, const Tensor& weeks,
                           std::mt19937_64& rng);

/// floor(n_s / K) each, remainder one apiece to the lowest indices.
std::vector<std::size_t> sample_counts(std::size_t total, std::size_t experts);

struct SyntheticWeekSet {
    Tensor weeks;                     // [n_s, steps_per_week]
    std::vector<std::size_t> expert;  // originating expert per row
    std::vector<std::size_t> counts;  // per expert
    std::size_t size() const { return expert.size(); }
};

SyntheticWeekSet forgetting_resilient_sampling(const ParamStore& frozen, std::size_t experts, std::size_t total,
                                               std::uint64_t seed);

struct SyncedSlices {
    Tensor x;  // [B, S, T']
    Tensor y;  // [B, S, T]
};

/// For sample b at week offset t: x = week[t-T'+1 .. t], y = week[t+1 .. t+T], modulo the week length.
SyncedSlices synchronize_samples(const Tensor& weeks, std::span<const std::size_t> week_offsets,
                                 std::size_t input_steps, std::size_t horizon);

struct ReplaySelection {
    std::vector<data::NodeId> nodes;  // ascending summed evidence
    std::vector<double> scores;
    bool clamped = false;  // n_r exceeded the number of candidates
};

/// Ranks candidates by sum_k evidence[i, k] ascending (ties by id) and keeps the first n_r.
ReplaySelection reconstruction_based_replay(std::span<const data::NodeId> nodes, const Tensor& evidence,
                                            std::size_t count);

// ---- training ----------------------------------------------------------------------

/// Log-evidence [N, K] from the current reconstructors, differentiable.
ad::Var gating_log_evidence(const ParamStore& store, std::size_t experts, const Tensor& weeks, const Tensor& noise);

/// Training pool of one task, derived from the state before any update of that task.
struct TaskPool {
    TaskPlan plan;
    data::NormStats norm;
    std::size_t delta_n = 0;
    ReplaySelection replay;
    std::vector<data::NodeId> real_nodes;  // new nodes and V_R, ascending
    data::WeekMatrix real_weeks;
    SyntheticWeekSet synthetic;
    recon::Groups groups;  // SG_k over task-1 nodes, LG_k over real_nodes after
};

TaskPool build_task_pool(const ModelState& state, const data::TaskDataset& task, const EngineConfig& cfg,
                         const data::FlowReader& reader);

struct EpochLog {
    std::size_t epoch = 0;
    double prediction_loss = 0.0;  // mean L_O over batches
    double consolidation_elbo = 0.0;  // mean L_ELBO over batches
    double loss = 0.0;
};

struct TaskTrainReport {
    int task = 0;
    std::string protocol;
    bool trained = false;
    std::size_t delta_n = 0;  // new nodes in the pool
    std::size_t n_s = 0;
    std::size_t n_r = 0;
    std::size_t pool_size = 0;
    std::vector<data::NodeId> replay_nodes;
    std::vector<double> replay_scores;
    bool replay_clamped = false;
    std::vector<std::size_t> sample_counts;
    std::vector<std::size_t> group_sizes;  // SG_k at task 1, LG_k after
    std::vector<EpochLog> epochs;
    data::AccessLog access;
    std::vector<data::NodeId> audit_violations;  // training reads outside the allowed set
    double seconds = 0.0;
};

/// Trains one task. Task 1 needs a pre-trained state; task tau > 1 needs the state of task tau-1.
TaskTrainReport train_task(ModelState& state, const data::TaskDataset& task, const EngineConfig& cfg);

struct Forecast {
    std::vector<data::NodeId> nodes;
    Tensor pred;   // [windows, nodes, T], denormalized
    Tensor truth;  // same shape
};

/// Evaluation-mode forecasts over every node of the task on a time range.
Forecast forecast(const ModelState& state, const data::TaskDataset& task, data::TimeRange range,
                  std::size_t batch_size);

/// Columns of a forecast restricted to the given nodes.
Forecast select_nodes(const Forecast& f, std::span<const data::NodeId> nodes);

}  // namespace tfmoe::engine
