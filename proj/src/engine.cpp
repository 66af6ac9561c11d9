// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "tfmoe/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "tfmoe/clustering.hpp"
#include "tfmoe/ops.hpp"

namespace tfmoe::engine {

namespace {

// One random stream per purpose so toggling one mechanism leaves the others' draws unchanged.
enum class Stream : std::uint32_t {
    Init = 1,
    Pretrain,
    KMeans,
    Reconstructor,
    Shuffle,
    Gumbel,
    Consolidation,
    Sampling,
    Evidence,
    GateNoise,
};

std::uint64_t derive_seed(std::uint64_t seed, int task, Stream s, std::uint64_t extra = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(task), static_cast<std::uint32_t>(s),
                      static_cast<std::uint32_t>(extra), static_cast<std::uint32_t>(extra >> 32)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::mt19937_64 stream(std::uint64_t seed, int task, Stream s, std::uint64_t extra = 0) {
    return std::mt19937_64(derive_seed(seed, task, s, extra));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// [B, N1, L] and [B, N2, L] -> [B, N1 + N2, L]
Tensor concat_nodes(const Tensor& a, const Tensor& b) {
    if (b.numel() == 0) return a;
    const std::size_t B = a.dim(0), n1 = a.dim(1), n2 = b.dim(1), L = a.dim(2);
    if (b.dim(0) != B || b.dim(2) != L) throw DimensionError("concat_nodes: " + shape_str(a.shape()) + " vs " +
                                                             shape_str(b.shape()));
    Tensor out({B, n1 + n2, L});
    for (std::size_t i = 0; i < B; ++i) {
        std::copy_n(a.data() + i * n1 * L, n1 * L, out.data() + i * (n1 + n2) * L);
        std::copy_n(b.data() + i * n2 * L, n2 * L, out.data() + (i * (n1 + n2) + n1) * L);
    }
    return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    if (b.numel() == 0) return a;
    if (a.numel() == 0) return b;
    if (a.dim(1) != b.dim(1)) throw DimensionError("concat_rows: column counts differ");
    Tensor out({a.dim(0) + b.dim(0), a.dim(1)});
    std::copy(a.values().begin(), a.values().end(), out.data());
    std::copy(b.values().begin(), b.values().end(), out.data() + a.numel());
    return out;
}

recon::VaeShape vae_shape_for(const EngineConfig& cfg, std::size_t steps_per_week) {
    return {steps_per_week, cfg.hidden1, cfg.hidden2, cfg.vae_latent};
}

void check_finite(double v, const char* what, int task, std::size_t epoch) {
    if (!std::isfinite(v))
        throw NumericError(std::string(what) + " diverged at task " + std::to_string(task) + ", epoch " +
                           std::to_string(epoch));
}

}  // namespace

const char* to_string(Protocol p) {
    switch (p) {
        case Protocol::TFMoE: return "tfmoe";
        case Protocol::Static: return "static";
        case Protocol::Expansible: return "expansible";
        case Protocol::Retrained: return "retrained";
    }
    return "?";
}

Protocol protocol_from_string(const std::string& s) {
    if (s == "tfmoe") return Protocol::TFMoE;
    if (s == "static") return Protocol::Static;
    if (s == "expansible") return Protocol::Expansible;
    if (s == "retrained") return Protocol::Retrained;
    throw ConfigError("unknown protocol '" + s + "' (tfmoe, static, expansible, retrained)");
}

void EngineConfig::validate() const {
    if (experts < 1) throw ConfigError("K must be >= 1");
    if (pretrain_latent == 0 || vae_latent == 0 || hidden1 == 0 || hidden2 == 0)
        throw ConfigError("layer sizes must be positive");
    if (sample_fraction < 0.0 || sample_fraction > 1.0) throw ConfigError("sample fraction must lie in [0, 1]");
    if (replay_fraction < 0.0 || replay_fraction > 1.0) throw ConfigError("replay fraction must lie in [0, 1]");
    if (alpha < 0.0 || beta < 0.0) throw ConfigError("loss weights must be >= 0");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (predictor.horizon != predictor.input_steps || predictor.kernel % 2 == 0 || predictor.embed_dim == 0 ||
        predictor.diffusion_steps == 0)
        throw ConfigError("predictor needs horizon == input steps, an odd kernel and positive sizes");
    for (double v : lr)
        if (!(v > 0.0)) throw ConfigError("learning rates must be positive");
}

TaskPlan plan_for(const EngineConfig& cfg) {
    TaskPlan p;
    switch (cfg.protocol) {
        case Protocol::TFMoE:
            p.consolidation = cfg.mechanisms.consolidation;
            p.sampling = cfg.mechanisms.sampling;
            p.replay = cfg.mechanisms.replay;
            break;
        case Protocol::Static:
            p.train = false;
            p.consolidation = p.sampling = p.replay = false;
            break;
        case Protocol::Expansible:
            p.consolidation = p.sampling = p.replay = false;
            break;
        case Protocol::Retrained:
            p.all_nodes = true;
            p.consolidation = cfg.mechanisms.consolidation;
            p.sampling = p.replay = false;
            break;
    }
    return p;
}

std::size_t default_sample_count(const EngineConfig& cfg, std::size_t graph_size) {
    return static_cast<std::size_t>(std::llround(cfg.sample_fraction * static_cast<double>(graph_size)));
}

std::size_t default_replay_count(const EngineConfig& cfg, std::size_t graph_size) {
    return static_cast<std::size_t>(std::llround(cfg.replay_fraction * static_cast<double>(graph_size)));
}

ModelState make_model(const EngineConfig& cfg, std::size_t steps_per_week) {
    cfg.validate();
    if (steps_per_week == 0) throw ConfigError("steps per week must be positive");
    ModelState st;
    st.experts = cfg.experts;
    st.steps_per_week = steps_per_week;
    st.seed = cfg.seed;
    st.predictor = cfg.predictor;
    st.adam.lr = cfg.lr;
    auto rng = stream(cfg.seed, 0, Stream::Init);
    const auto vs = vae_shape_for(cfg, steps_per_week);
    for (std::size_t k = 0; k < cfg.experts; ++k) {
        recon::add_vae_expert(st.params, k, vs, rng);
        pred::add_predictor_expert(st.params, k, cfg.predictor, rng);
    }
    return st;
}

PretrainReport pretrain(ModelState& state, const data::TaskDataset& first, const EngineConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    if (state.pretrained) throw StateError("model is already pre-trained");
    if (first.steps_per_week() != state.steps_per_week)
        throw data::DataError("task week has " + std::to_string(first.steps_per_week()) + " bins, model expects " +
                              std::to_string(state.steps_per_week));
    const data::FlowReader reader(first);
    const auto split = data::split_protocol(first, cfg.predictor.input_steps, cfg.predictor.horizon);
    const auto norm = data::fit_normalizer(reader, split.train, first.nodes);
    const auto weeks = data::extract_week(reader, split.train, norm, first.nodes);

    PretrainReport rep;
    auto ae = cluster::make_autoencoder({state.steps_per_week, cfg.hidden1, cfg.hidden2, cfg.pretrain_latent},
                                        derive_seed(cfg.seed, 1, Stream::Pretrain));
    ae.adam.lr = cfg.lr;
    cluster::pretrain_autoencoder(ae, weeks.weeks, cfg.pretrain_epochs);
    rep.autoencoder_loss = ae.loss_history;
    const Tensor init = cluster::kmeans_init(cluster::encode_latents(ae, weeks.weeks), cfg.experts,
                                             derive_seed(cfg.seed, 1, Stream::KMeans));
    auto cs = cluster::dec_train(ae, init, weeks.weeks, cfg.alpha, cfg.dec_epochs);
    rep.clustering_loss = cs.loss_history;
    for (const auto& g : cs.assignment.groups) rep.group_sizes.push_back(g.size());
    rep.empty_groups = cs.assignment.empty_groups;

    state.adam.lr = cfg.lr;
    auto rng = stream(cfg.seed, 1, Stream::Reconstructor);
    rep.reconstructor_elbo = recon::train_group_reconstructors(state.params, state.adam, cs.assignment.groups,
                                                               weeks.weeks, cfg.reconstructor_epochs, rng);
    state.centroids = cs.centroids;
    state.sg_nodes = first.nodes;
    state.sg_labels = cs.assignment.labels;
    state.norm = norm;
    state.pretrained = true;
    rep.seconds = seconds_since(t0);
    return rep;
}

// ---- mechanisms ---------------------------------------------------------------------

recon::Groups build_localized_groups(const Tensor& evidence) {
    if (evidence.rank() != 2) throw DimensionError("evidence must be [n, K]");
    const std::size_t n = evidence.dim(0), K = evidence.dim(1);
    recon::Groups groups(K);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < K; ++k)
            if (evidence.at(i, k) > evidence.at(i, best)) best = k;
        groups[best].push_back(i);
    }
    return groups;
}

ad::Var consolidation_loss(const ParamStore& store, const recon::Groups& groups, const Tensor& weeks,
                           std::mt19937_64& rng) {
    auto neg = recon::group_elbo_loss(store, groups, weeks, rng);
    if (!neg) return ad::constant(Tensor::scalar(0.0));
    return ad::scale(neg, -1.0);
}

std::vector<std::size_t> sample_counts(std::size_t total, std::size_t experts) {
    if (experts == 0) throw ConfigError("sampling needs at least one expert");
    std::vector<std::size_t> c(experts, total / experts);
    for (std::size_t k = 0; k < total % experts; ++k) ++c[k];
    return c;
}

SyntheticWeekSet forgetting_resilient_sampling(const ParamStore& frozen, std::size_t experts, std::size_t total,
                                               std::uint64_t seed) {
    SyntheticWeekSet out;
    out.counts = sample_counts(total, experts);
    std::mt19937_64 rng(seed);
    const std::size_t len = recon::vae_shape(frozen, 0).input_dim;
    out.weeks = Tensor({0, len});
    for (std::size_t k = 0; k < experts; ++k) {
        if (out.counts[k] == 0) continue;
        out.weeks = concat_rows(out.weeks, recon::sample_prior(frozen, k, out.counts[k], rng));
        out.expert.insert(out.expert.end(), out.counts[k], k);
    }
    if (out.weeks.numel() == 0) out.weeks = Tensor({0, len});
    return out;
}

SyncedSlices synchronize_samples(const Tensor& weeks, std::span<const std::size_t> week_offsets,
                                 std::size_t input_steps, std::size_t horizon) {
    if (weeks.rank() != 2) throw DimensionError("synthetic weeks must be [S, steps_per_week]");
    const std::size_t S = weeks.dim(0), W = weeks.dim(1), B = week_offsets.size();
    if (W == 0) throw DimensionError("synthetic weeks are empty");
    SyncedSlices out{Tensor({B, S, input_steps}), Tensor({B, S, horizon})};
    for (std::size_t b = 0; b < B; ++b) {
        const std::size_t t = week_offsets[b] % W;
        for (std::size_t s = 0; s < S; ++s) {
            const double* w = weeks.data() + s * W;
            double* x = out.x.data() + (b * S + s) * input_steps;
            double* y = out.y.data() + (b * S + s) * horizon;
            // x[j] = week[t - T' + 1 + j]
            for (std::size_t j = 0; j < input_steps; ++j) x[j] = w[(t + W * input_steps + 1 + j - input_steps) % W];
            for (std::size_t j = 0; j < horizon; ++j) y[j] = w[(t + 1 + j) % W];
        }
    }
    return out;
}

ReplaySelection reconstruction_based_replay(std::span<const data::NodeId> nodes, const Tensor& evidence,
                                            std::size_t count) {
    if (evidence.rank() != 2 || evidence.dim(0) != nodes.size())
        throw DimensionError("replay evidence must be [candidates, K]");
    const std::size_t n = nodes.size(), K = evidence.dim(1);
    std::vector<double> score(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < K; ++k) score[i] += evidence.at(i, k);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (score[a] != score[b]) return score[a] < score[b];
        return nodes[a] < nodes[b];
    });
    ReplaySelection sel;
    sel.clamped = count > n;
    const std::size_t keep = std::min(count, n);
    for (std::size_t r = 0; r < keep; ++r) {
        sel.nodes.push_back(nodes[order[r]]);
        sel.scores.push_back(score[order[r]]);
    }
    return sel;
}

// ---- training -------------------------------------------------------------------------

ad::Var gating_log_evidence(const ParamStore& store, std::size_t experts, const Tensor& weeks, const Tensor& noise) {
    std::vector<ad::Var> cols;
    cols.reserve(experts);
    for (std::size_t k = 0; k < experts; ++k) cols.push_back(recon::vae_elbo(store, k, weeks, noise));
    return ad::stack_columns(cols);
}

TaskPool build_task_pool(const ModelState& state, const data::TaskDataset& task, const EngineConfig& cfg,
                         const data::FlowReader& reader) {
    const int tau = task.task_index;
    const std::size_t K = state.experts;
    const auto split = data::split_protocol(task, cfg.predictor.input_steps, cfg.predictor.horizon);
    const std::uint64_t evidence_seed = derive_seed(cfg.seed, tau, Stream::Evidence);
    TaskPool tp;
    if (tau == 1) {
        tp.plan.all_nodes = true;
        tp.plan.sampling = tp.plan.replay = false;
    } else {
        tp.plan = plan_for(cfg);
    }
    const auto& plan = tp.plan;
    const auto& new_nodes = tau == 1 ? task.nodes : task.new_nodes;
    std::vector<data::NodeId> old_nodes;
    std::set_difference(task.nodes.begin(), task.nodes.end(), new_nodes.begin(), new_nodes.end(),
                        std::back_inserter(old_nodes));

    // Statistics are refit only when the pool is the whole graph; otherwise the previous ones carry over.
    tp.norm = state.norm;
    if (plan.all_nodes && plan.train) tp.norm = data::fit_normalizer(reader, split.train, task.nodes);

    if (plan.all_nodes) {
        tp.real_nodes = task.nodes;
        tp.delta_n = task.nodes.size();
    } else {
        const std::size_t n_r = plan.replay ? default_replay_count(cfg, task.nodes.size()) : 0;
        if (n_r > 0) {
            const auto old_weeks = data::extract_week(reader, split.train, tp.norm, old_nodes);
            tp.replay = reconstruction_based_replay(
                old_nodes, recon::evidence_matrix(state.params, K, old_weeks.weeks, evidence_seed), n_r);
        }
        std::set<data::NodeId> p(new_nodes.begin(), new_nodes.end());
        p.insert(tp.replay.nodes.begin(), tp.replay.nodes.end());
        tp.real_nodes.assign(p.begin(), p.end());
        tp.delta_n = new_nodes.size();
    }

    tp.synthetic.weeks = Tensor({0, state.steps_per_week});
    if (plan.sampling)
        tp.synthetic = forgetting_resilient_sampling(state.params, K, default_sample_count(cfg, task.nodes.size()),
                                                     derive_seed(cfg.seed, tau, Stream::Sampling));

    tp.real_weeks = data::extract_week(reader, split.train, tp.norm, tp.real_nodes);
    tp.groups.assign(K, {});
    if (tau == 1) {
        if (state.sg_nodes != task.nodes) throw StateError("pre-training ran on a different node set than task 1");
        for (std::size_t i = 0; i < state.sg_labels.size(); ++i)
            tp.groups[static_cast<std::size_t>(state.sg_labels[i])].push_back(i);
    } else if (!tp.real_nodes.empty()) {
        tp.groups = build_localized_groups(recon::evidence_matrix(state.params, K, tp.real_weeks.weeks, evidence_seed));
    }
    return tp;
}

TaskTrainReport train_task(ModelState& state, const data::TaskDataset& task, const EngineConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const int tau = task.task_index;
    if (!state.pretrained) throw StateError("task " + std::to_string(tau) + " needs a pre-trained model");
    if (tau < 1) throw StateError("task indices start at 1");
    if (state.trained_task != tau - 1)
        throw StateError("task " + std::to_string(tau) + " needs the model of task " + std::to_string(tau - 1) +
                         "; the model has completed task " + std::to_string(state.trained_task));
    if (task.steps_per_week() != state.steps_per_week)
        throw data::DataError("task week has " + std::to_string(task.steps_per_week()) + " bins, model expects " +
                              std::to_string(state.steps_per_week));
    if (state.experts != cfg.experts) throw ConfigError("configured K differs from the model's expert count");

    TaskTrainReport rep;
    rep.task = tau;
    rep.protocol = to_string(cfg.protocol);
    const std::size_t K = state.experts;
    const std::size_t Tin = cfg.predictor.input_steps, Tout = cfg.predictor.horizon;
    data::FlowReader reader(task, &rep.access);
    const auto split = data::split_protocol(task, Tin, Tout);

    TaskPlan plan;  // task 1: all nodes with SG consolidation
    plan.all_nodes = true;
    plan.sampling = plan.replay = false;
    if (tau > 1) plan = plan_for(cfg);

    std::set<data::NodeId> allowed;
    auto finish = [&](const data::NormStats& norm) {
        state.norm = norm;
        state.task_norms[tau] = norm;
        state.trained_task = tau;
        for (data::NodeId id : rep.access.training_reads())
            if (!allowed.count(id)) rep.audit_violations.push_back(id);
        rep.seconds = seconds_since(t0);
    };

    if (!plan.train) {
        finish(state.norm);
        return rep;
    }

    state.adam.lr = cfg.lr;
    // Everything below that depends on parameters reads the state as it was before any step of this task.
    const TaskPool tp = build_task_pool(state, task, cfg, reader);
    const auto& pool = tp.real_nodes;
    const auto& synthetic = tp.synthetic;
    const auto& real_weeks = tp.real_weeks;
    const auto& groups = tp.groups;
    const auto& norm = tp.norm;
    allowed.insert(pool.begin(), pool.end());
    rep.delta_n = tp.delta_n;
    rep.replay_nodes = tp.replay.nodes;
    rep.replay_scores = tp.replay.scores;
    rep.replay_clamped = tp.replay.clamped;
    rep.n_r = tp.replay.nodes.size();
    rep.sample_counts = synthetic.counts;
    rep.n_s = synthetic.size();
    rep.pool_size = pool.size() + synthetic.size();
    for (const auto& g : groups) rep.group_sizes.push_back(g.size());
    const bool consolidate = plan.consolidation && cfg.beta > 0.0;

    if (rep.pool_size < 2 || (pool.empty() && synthetic.size() == 0)) {
        finish(norm);
        return rep;
    }

    const Tensor pool_weeks = concat_rows(real_weeks.weeks, synthetic.weeks);
    auto noise_rng = stream(cfg.seed, tau, Stream::GateNoise);
    const Tensor gate_noise = recon::standard_normal(pool_weeks.dim(0), cfg.vae_latent, noise_rng);
    auto gumbel_rng = stream(cfg.seed, tau, Stream::Gumbel);
    auto elbo_rng = stream(cfg.seed, tau, Stream::Consolidation);
    const std::size_t epochs = tau == 1 ? cfg.first_epochs : cfg.later_epochs;

    for (std::size_t e = 0; e < epochs; ++e) {
        data::WindowSet windows(task, split.train, Tin, Tout, cfg.batch_size,
                                derive_seed(cfg.seed, tau, Stream::Shuffle, e));
        EpochLog log;
        log.epoch = e;
        const std::size_t nb = windows.batch_count();
        for (std::size_t b = 0; b < nb; ++b) {
            auto batch = pool.empty() ? data::WindowBatch{} : windows.batch(b, reader, pool, norm);
            Tensor x = batch.x, y = batch.y;
            if (synthetic.size() > 0) {
                if (pool.empty()) {
                    // offsets still come from the window origins
                    const auto& o = windows.origins();
                    const std::size_t lo = b * cfg.batch_size, hi = std::min(o.size(), lo + cfg.batch_size);
                    for (std::size_t i = lo; i < hi; ++i) batch.week_offsets.push_back(task.time_of_week(o[i]));
                }
                auto s = synchronize_samples(synthetic.weeks, batch.week_offsets, Tin, Tout);
                x = pool.empty() ? s.x : concat_nodes(x, s.x);
                y = pool.empty() ? s.y : concat_nodes(y, s.y);
            }
            auto gates = pred::gating_weights(gating_log_evidence(state.params, K, pool_weeks, gate_noise));
            auto out = pred::moe_predict(state.params, K, gates, ad::constant(x), pred::NoiseMode::Train,
                                         &gumbel_rng);
            auto l_o = pred::prediction_loss(out, y);
            auto loss = l_o;
            double elbo = 0.0;
            if (consolidate) {
                auto c = consolidation_loss(state.params, groups, real_weeks.weeks, elbo_rng);
                elbo = c.item();
                loss = ad::sub(l_o, ad::scale(c, cfg.beta));
            }
            check_finite(loss.item(), "training loss", tau, e);
            log.prediction_loss += l_o.item() / static_cast<double>(nb);
            log.consolidation_elbo += elbo / static_cast<double>(nb);
            log.loss += loss.item() / static_cast<double>(nb);
            loss.backward();
            adam_step(state.params, state.adam);
        }
        rep.epochs.push_back(log);
    }
    rep.trained = true;
    finish(norm);
    return rep;
}

// ---- evaluation -------------------------------------------------------------------------

Forecast forecast(const ModelState& state, const data::TaskDataset& task, data::TimeRange range,
                  std::size_t batch_size) {
    if (!state.pretrained) throw StateError("forecasting needs a trained model");
    ad::NoGradGuard ng;
    const std::size_t K = state.experts;
    const std::size_t Tin = state.predictor.input_steps, Tout = state.predictor.horizon;
    const data::FlowReader reader(task);
    const auto split = data::split_protocol(task, Tin, Tout);
    const auto& norm = state.norm;
    const auto weeks = data::extract_week(reader, split.train, norm, task.nodes);
    auto noise_rng = stream(state.seed, task.task_index, Stream::GateNoise, 1);
    const Tensor noise = recon::standard_normal(task.nodes.size(), recon::vae_shape(state.params, 0).latent_dim,
                                                noise_rng);
    const auto gates = pred::gating_weights(gating_log_evidence(state.params, K, weeks.weeks, noise));

    data::WindowSet windows(task, range, Tin, Tout, batch_size, std::nullopt);
    const std::size_t W = windows.window_count(), N = task.nodes.size();
    Forecast f;
    f.nodes = task.nodes;
    f.pred = Tensor({W, N, Tout});
    f.truth = Tensor({W, N, Tout});
    std::size_t row = 0;
    for (std::size_t b = 0; b < windows.batch_count(); ++b) {
        const auto batch = windows.batch(b, reader, task.nodes, norm);
        const auto out = pred::moe_predict(state.params, K, gates, ad::constant(batch.x), pred::NoiseMode::Eval,
                                           nullptr)
                             .value();
        const std::size_t n = out.numel();
        for (std::size_t i = 0; i < n; ++i) {
            f.pred[row + i] = norm.denormalize(out[i]);
            f.truth[row + i] = norm.denormalize(batch.y[i]);
        }
        row += n;
    }
    return f;
}

Forecast select_nodes(const Forecast& f, std::span<const data::NodeId> nodes) {
    std::vector<std::size_t> cols;
    for (data::NodeId id : nodes) {
        auto it = std::lower_bound(f.nodes.begin(), f.nodes.end(), id);
        if (it == f.nodes.end() || *it != id)
            throw data::DataError("node " + std::to_string(id) + " is not part of the forecast");
        cols.push_back(static_cast<std::size_t>(it - f.nodes.begin()));
    }
    const std::size_t W = f.pred.dim(0), N = f.pred.dim(1), T = f.pred.dim(2), M = cols.size();
    Forecast out;
    out.nodes.assign(nodes.begin(), nodes.end());
    out.pred = Tensor({W, M, T});
    out.truth = Tensor({W, M, T});
    for (std::size_t w = 0; w < W; ++w)
        for (std::size_t j = 0; j < M; ++j) {
            std::copy_n(f.pred.data() + (w * N + cols[j]) * T, T, out.pred.data() + (w * M + j) * T);
            std::copy_n(f.truth.data() + (w * N + cols[j]) * T, T, out.truth.data() + (w * M + j) * T);
        }
    return out;
}

}  // namespace tfmoe::engine
