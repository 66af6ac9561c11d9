// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "tfmoe/engine.hpp"
#include "tfmoe/ops.hpp"

using namespace tfmoe;
using engine::EngineConfig;
using engine::ModelState;
using engine::Protocol;

namespace {

EngineConfig tiny_config() {
    EngineConfig c;
    c.experts = 3;
    c.pretrain_latent = 4;
    c.vae_latent = 4;
    c.hidden1 = 16;
    c.hidden2 = 8;
    c.predictor.embed_dim = 4;
    c.pretrain_epochs = 20;
    c.dec_epochs = 10;
    c.reconstructor_epochs = 20;
    c.first_epochs = 2;
    c.later_epochs = 2;
    c.batch_size = 64;
    c.sample_fraction = 0.1;
    c.replay_fraction = 0.1;
    c.seed = 5;
    return c;
}

std::vector<data::TaskDataset> tiny_stream() {
    data::StreamSpec s;
    s.days_per_task = 14;
    s.seed = 3;
    s.drift_phase = 0.2;
    return data::generate_stream(s);  // 30 -> 40 -> 50 nodes
}

// Task-1 state shared by the tests below; copied before use.
const ModelState& task1_state() {
    static const ModelState st = [] {
        auto tasks = tiny_stream();
        auto cfg = tiny_config();
        auto m = engine::make_model(cfg, tasks[0].steps_per_week());
        engine::pretrain(m, tasks[0], cfg);
        engine::train_task(m, tasks[0], cfg);
        return m;
    }();
    return st;
}

bool same_params(const ParamStore& a, const ParamStore& b) {
    for (const auto& [name, e] : a)
        if (!(e.var.value() == b.get(name).value())) return false;
    return a.size() == b.size();
}

}  // namespace

// ---- localized groups -----------------------------------------------------------

TEST(LocalizedGroups, ArgmaxOfEvidence) {
    const auto g = engine::build_localized_groups(Tensor::from_rows({{-3, -1, -7}}));
    ASSERT_EQ(g.size(), 3u);
    EXPECT_TRUE(g[0].empty());
    EXPECT_EQ(g[1], std::vector<std::size_t>{0});
    EXPECT_TRUE(g[2].empty());
}

TEST(LocalizedGroups, TiesGoToLowestIndex) {
    const auto g = engine::build_localized_groups(Tensor::from_rows({{-2, -2, -5}, {-4, -1, -1}}));
    EXPECT_EQ(g[0], std::vector<std::size_t>{0});
    EXPECT_EQ(g[1], std::vector<std::size_t>{1});
}

TEST(LocalizedGroups, AllToOneExpertIsLegal) {
    const auto g = engine::build_localized_groups(Tensor::from_rows({{0, -1}, {3, 2}, {-1, -9}}));
    EXPECT_EQ(g[0].size(), 3u);
    EXPECT_TRUE(g[1].empty());
}

TEST(LocalizedGroups, EmptyNewNodeSet) {
    const auto g = engine::build_localized_groups(Tensor({0, 4}));
    ASSERT_EQ(g.size(), 4u);
    for (const auto& x : g) EXPECT_TRUE(x.empty());
}

// ---- consolidation ------------------------------------------------------------------

TEST(Consolidation, EmptyGroupsContributeZero) {
    const auto& st = task1_state();
    std::mt19937_64 rng(1);
    const auto c = engine::consolidation_loss(st.params, recon::Groups(3), Tensor({4, st.steps_per_week}), rng);
    EXPECT_EQ(c.item(), 0.0);
}

TEST(Consolidation, EqualsSumOfGroupElbos) {
    const auto& st = task1_state();
    std::mt19937_64 data_rng(2);
    const Tensor weeks = recon::standard_normal(5, st.steps_per_week, data_rng);
    const recon::Groups groups{{0, 3}, {}, {1, 2, 4}};
    std::mt19937_64 rng(9);
    const double got = engine::consolidation_loss(st.params, groups, weeks, rng).item();

    // replay the same noise draws: one [|G_k|, d_z] block per non-empty group, in expert order
    std::mt19937_64 ref_rng(9);
    double want = 0.0;
    for (std::size_t k = 0; k < groups.size(); ++k) {
        if (groups[k].empty()) continue;
        Tensor x({groups[k].size(), st.steps_per_week});
        for (std::size_t r = 0; r < groups[k].size(); ++r)
            for (std::size_t t = 0; t < st.steps_per_week; ++t) x.at(r, t) = weeks.at(groups[k][r], t);
        const Tensor noise = recon::standard_normal(x.dim(0), recon::vae_shape(st.params, k).latent_dim, ref_rng);
        const auto e = recon::vae_elbo(st.params, k, x, noise).value();
        for (double v : e.values()) want += v;
    }
    EXPECT_NEAR(got, want, 1e-9 * std::abs(want));
}

// ---- sampling and synchronization --------------------------------------------------------

TEST(Sampling, FloorRemainderCounts) {
    EXPECT_EQ(engine::sample_counts(10, 4), (std::vector<std::size_t>{3, 3, 2, 2}));
    EXPECT_EQ(engine::sample_counts(0, 3), (std::vector<std::size_t>{0, 0, 0}));
    EXPECT_EQ(engine::sample_counts(2, 5), (std::vector<std::size_t>{1, 1, 0, 0, 0}));
}

TEST(Sampling, ZeroSamplesIsEmpty) {
    const auto s = engine::forgetting_resilient_sampling(task1_state().params, 3, 0, 1);
    EXPECT_EQ(s.size(), 0u);
    EXPECT_EQ(s.weeks.numel(), 0u);
}

TEST(Sampling, TagsCountsAndPriorDraws) {
    const auto& st = task1_state();
    const auto s = engine::forgetting_resilient_sampling(st.params, 3, 7, 42);
    ASSERT_EQ(s.size(), 7u);
    EXPECT_EQ(s.counts, (std::vector<std::size_t>{3, 2, 2}));
    EXPECT_EQ(s.expert, (std::vector<std::size_t>{0, 0, 0, 1, 1, 2, 2}));
    ASSERT_EQ(s.weeks.shape(), (Shape{7, st.steps_per_week}));
    std::mt19937_64 rng(42);
    const Tensor first = recon::sample_prior(st.params, 0, 3, rng);
    for (std::size_t i = 0; i < first.numel(); ++i) EXPECT_EQ(s.weeks[i], first[i]);
}

TEST(Sampling, UsesOnlyTheGivenParameters) {
    auto frozen = task1_state().params;
    const auto a = engine::forgetting_resilient_sampling(frozen, 3, 6, 8);
    auto live = frozen;
    live.assign("expert0.vae.dec.b2", Tensor(live.get("expert0.vae.dec.b2").shape(), 5.0));
    const auto b = engine::forgetting_resilient_sampling(frozen, 3, 6, 8);
    EXPECT_EQ(a.weeks, b.weeks);
}

TEST(Synchronize, WrapsAroundTheWeek) {
    Tensor w({1, 6}, {10, 11, 12, 13, 14, 15});
    const std::size_t off[] = {0, 3, 5};
    const auto s = engine::synchronize_samples(w, off, 2, 2);
    ASSERT_EQ(s.x.shape(), (Shape{3, 1, 2}));
    EXPECT_EQ(s.x[0], 15);
    EXPECT_EQ(s.x[1], 10);
    EXPECT_EQ(s.y[0], 11);
    EXPECT_EQ(s.y[1], 12);
    EXPECT_EQ(s.x[2], 12);
    EXPECT_EQ(s.x[3], 13);
    EXPECT_EQ(s.y[2], 14);
    EXPECT_EQ(s.y[3], 15);
    EXPECT_EQ(s.x[4], 14);
    EXPECT_EQ(s.x[5], 15);
    EXPECT_EQ(s.y[4], 10);
    EXPECT_EQ(s.y[5], 11);
}

TEST(Synchronize, ConstantWeekGivesConstantSlices) {
    const Tensor w({2, 168}, 0.25);
    const std::size_t off[] = {0, 17, 167};
    const auto s = engine::synchronize_samples(w, off, 12, 12);
    for (double v : s.x.values()) EXPECT_EQ(v, 0.25);
    for (double v : s.y.values()) EXPECT_EQ(v, 0.25);
}

TEST(Synchronize, AlignsWithRealWindowsAtTheSameTimeOfWeek) {
    // a real node's flow, cut to its first Monday week, must slice like its own windows
    data::StreamSpec spec;
    spec.num_tasks = 1;
    spec.initial_nodes = 3;
    spec.nodes_added = {};
    spec.first_weekday = data::Weekday::Thursday;
    spec.days_per_task = 21;
    const auto task = data::generate_stream(spec)[0];
    const data::FlowReader reader(task);
    const auto split = data::split_protocol(task);
    const data::NormStats norm{0.0, 1.0};
    const auto week = data::extract_week(reader, split.train, norm, task.nodes);
    data::WindowSet ws(task, split.train, 12, 12, 500, std::nullopt);
    const auto batch = ws.batch(0, reader, task.nodes, norm);
    const auto s = engine::synchronize_samples(week.weeks, batch.week_offsets, 12, 12);
    const std::size_t spw = task.steps_per_week();
    std::size_t checked = 0;
    for (std::size_t b = 0; b < batch.origins.size(); ++b) {
        const std::size_t t = batch.origins[b];
        if (t < week.start_bin + 11 || t + 12 >= week.start_bin + spw) continue;  // span inside the week
        ++checked;
        for (std::size_t n = 0; n < 3; ++n)
            for (std::size_t j = 0; j < 12; ++j) {
                ASSERT_EQ(s.x[(b * 3 + n) * 12 + j], batch.x[(b * 3 + n) * 12 + j]);
                ASSERT_EQ(s.y[(b * 3 + n) * 12 + j], batch.y[(b * 3 + n) * 12 + j]);
            }
    }
    EXPECT_GT(checked, 100u);
}

// ---- replay --------------------------------------------------------------------------------

TEST(Replay, PicksLowestSummedEvidence) {
    const data::NodeId ids[] = {1, 2, 3};  // a, b, c
    const auto sel = engine::reconstruction_based_replay(ids, Tensor::from_rows({{-4, -6}, {-1, -1}, {-3, -3}}), 2);
    EXPECT_EQ(sel.nodes, (std::vector<data::NodeId>{1, 3}));
    EXPECT_EQ(sel.scores, (std::vector<double>{-10, -6}));
    EXPECT_FALSE(sel.clamped);
}

TEST(Replay, ZeroCountIsEmpty) {
    const data::NodeId ids[] = {4, 9};
    EXPECT_TRUE(engine::reconstruction_based_replay(ids, Tensor::from_rows({{1}, {2}}), 0).nodes.empty());
}

TEST(Replay, ClampsToCandidates) {
    const data::NodeId ids[] = {4, 9};
    const auto sel = engine::reconstruction_based_replay(ids, Tensor::from_rows({{1}, {2}}), 5);
    EXPECT_TRUE(sel.clamped);
    EXPECT_EQ(sel.nodes, (std::vector<data::NodeId>{4, 9}));
}

TEST(Replay, MatchesSelectionOracle) {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng() % 40, K = 1 + rng() % 4, nr = rng() % (n + 3);
        std::vector<data::NodeId> ids;
        std::set<data::NodeId> used;
        while (ids.size() < n) {
            const auto id = static_cast<data::NodeId>(rng() % 1000);
            if (used.insert(id).second) ids.push_back(id);
        }
        Tensor ev({n, K});
        for (auto& v : ev.values()) v = -static_cast<double>(rng() % 8);  // coarse values force ties
        const auto sel = engine::reconstruction_based_replay(ids, ev, nr);

        // repeated extraction of the minimum (score, id) pair
        std::vector<bool> taken(n, false);
        std::vector<data::NodeId> want;
        for (std::size_t r = 0; r < std::min(nr, n); ++r) {
            std::size_t best = n;
            double best_score = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (taken[i]) continue;
                double s = 0.0;
                for (std::size_t k = 0; k < K; ++k) s += ev.at(i, k);
                if (best == n || s < best_score || (s == best_score && ids[i] < ids[best])) {
                    best = i;
                    best_score = s;
                }
            }
            taken[best] = true;
            want.push_back(ids[best]);
        }
        ASSERT_EQ(sel.nodes, want) << "trial " << trial;
        EXPECT_TRUE(std::is_sorted(sel.scores.begin(), sel.scores.end()));
    }
}

// ---- protocols and the task loop -----------------------------------------------------------

TEST(TaskLoop, ThreeTaskStreamPoolSizesAndAudit) {
    const auto tasks = tiny_stream();
    const auto cfg = tiny_config();
    auto st = task1_state();
    for (int t = 1; t < 3; ++t) {
        const auto rep = engine::train_task(st, tasks[t], cfg);
        EXPECT_TRUE(rep.trained);
        EXPECT_EQ(rep.delta_n, 10u);
        EXPECT_EQ(rep.n_s, engine::default_sample_count(cfg, tasks[t].nodes.size()));
        EXPECT_EQ(rep.n_r, engine::default_replay_count(cfg, tasks[t].nodes.size()));
        EXPECT_EQ(rep.pool_size, rep.delta_n + rep.n_s + rep.n_r);
        EXPECT_TRUE(rep.audit_violations.empty());
        std::set<data::NodeId> allowed(tasks[t].new_nodes.begin(), tasks[t].new_nodes.end());
        allowed.insert(rep.replay_nodes.begin(), rep.replay_nodes.end());
        EXPECT_EQ(rep.access.training_reads(), allowed);
        std::size_t grouped = 0;
        for (auto g : rep.group_sizes) grouped += g;
        EXPECT_EQ(grouped, rep.delta_n + rep.n_r);
        EXPECT_EQ(rep.epochs.size(), cfg.later_epochs);
        EXPECT_EQ(st.trained_task, t + 1);
    }
}

TEST(TaskLoop, ReplayAndGroupsUseTheFrozenSnapshot) {
    const auto tasks = tiny_stream();
    const auto cfg = tiny_config();
    auto st = task1_state();
    const auto before = st;
    const auto rep = engine::train_task(st, tasks[1], cfg);
    ASSERT_FALSE(rep.replay_nodes.empty());
    ASSERT_FALSE(same_params(st.params, before.params));

    const data::FlowReader reader(tasks[1]);
    const auto snap = engine::build_task_pool(before, tasks[1], cfg, reader);
    EXPECT_EQ(snap.replay.nodes, rep.replay_nodes);
    std::vector<std::size_t> sizes;
    for (const auto& g : snap.groups) sizes.push_back(g.size());
    EXPECT_EQ(sizes, rep.group_sizes);

    // the trained parameters rank differently, so the match above is not vacuous
    auto live = before;
    live.params = st.params;
    const auto moved = engine::build_task_pool(live, tasks[1], cfg, reader);
    EXPECT_NE(moved.replay.scores, snap.replay.scores);
}

TEST(TaskLoop, DisabledMechanismsMatchExpansibleExactly) {
    const auto tasks = tiny_stream();
    auto a = task1_state(), b = task1_state();
    auto ca = tiny_config();
    ca.mechanisms = {false, false, false};
    auto cb = tiny_config();
    cb.protocol = Protocol::Expansible;
    const auto ra = engine::train_task(a, tasks[1], ca);
    const auto rb = engine::train_task(b, tasks[1], cb);
    EXPECT_TRUE(same_params(a.params, b.params));
    ASSERT_EQ(ra.epochs.size(), rb.epochs.size());
    for (std::size_t e = 0; e < ra.epochs.size(); ++e) EXPECT_EQ(ra.epochs[e].loss, rb.epochs[e].loss);
    EXPECT_EQ(rb.pool_size, 10u);
}

TEST(TaskLoop, ZeroBetaReducesToPredictionLoss) {
    const auto tasks = tiny_stream();
    auto a = task1_state(), b = task1_state();
    auto ca = tiny_config();
    ca.beta = 0.0;
    auto cb = tiny_config();
    cb.mechanisms.consolidation = false;
    const auto ra = engine::train_task(a, tasks[1], ca);
    const auto rb = engine::train_task(b, tasks[1], cb);
    for (std::size_t e = 0; e < ra.epochs.size(); ++e) {
        EXPECT_EQ(ra.epochs[e].loss, rb.epochs[e].loss);
        EXPECT_EQ(ra.epochs[e].loss, ra.epochs[e].prediction_loss);
    }
    EXPECT_TRUE(same_params(a.params, b.params));
}

TEST(TaskLoop, StaticKeepsTaskOneParameters) {
    const auto tasks = tiny_stream();
    auto st = task1_state();
    auto cfg = tiny_config();
    cfg.protocol = Protocol::Static;
    const auto rep = engine::train_task(st, tasks[1], cfg);
    EXPECT_FALSE(rep.trained);
    EXPECT_TRUE(same_params(st.params, task1_state().params));
    EXPECT_EQ(st.trained_task, 2);
}

TEST(TaskLoop, RetrainedPoolIsTheWholeGraph) {
    const auto tasks = tiny_stream();
    auto st = task1_state();
    auto cfg = tiny_config();
    cfg.protocol = Protocol::Retrained;
    const auto rep = engine::train_task(st, tasks[1], cfg);
    EXPECT_EQ(rep.pool_size, tasks[1].nodes.size());
    EXPECT_EQ(rep.n_s + rep.n_r, 0u);
    EXPECT_EQ(rep.access.training_reads(), std::set<data::NodeId>(tasks[1].nodes.begin(), tasks[1].nodes.end()));
}

TEST(TaskLoop, TaskOrderIsEnforced) {
    const auto tasks = tiny_stream();
    const auto cfg = tiny_config();
    auto st = task1_state();
    EXPECT_THROW(engine::train_task(st, tasks[2], cfg), engine::StateError);
    auto fresh = engine::make_model(cfg, tasks[0].steps_per_week());
    EXPECT_THROW(engine::train_task(fresh, tasks[0], cfg), engine::StateError);
}

TEST(TaskLoop, SameSeedSameResult) {
    const auto tasks = tiny_stream();
    const auto cfg = tiny_config();
    auto a = task1_state(), b = task1_state();
    engine::train_task(a, tasks[1], cfg);
    engine::train_task(b, tasks[1], cfg);
    EXPECT_TRUE(same_params(a.params, b.params));
}

TEST(Forecast, ShapesAndNodeSelection) {
    const auto tasks = tiny_stream();
    const auto& st = task1_state();
    const auto split = data::split_protocol(tasks[0]);
    const auto f = engine::forecast(st, tasks[0], split.test, 100);
    EXPECT_EQ(f.pred.shape(), (Shape{data::window_count(split.test.size(), 12, 12), 30, 12}));
    EXPECT_TRUE(f.pred.all_finite());
    const data::NodeId pick[] = {tasks[0].nodes[4], tasks[0].nodes[9]};
    const auto g = engine::select_nodes(f, pick);
    EXPECT_EQ(g.pred.dim(1), 2u);
    EXPECT_EQ(g.truth[12 + 3], f.truth[9 * 12 + 3]);
    const data::NodeId missing[] = {123456};
    EXPECT_THROW(engine::select_nodes(f, missing), data::DataError);
}

TEST(Config, RejectsBadValues) {
    auto c = tiny_config();
    c.experts = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_config();
    c.sample_fraction = 1.5;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(engine::protocol_from_string("bogus"), ConfigError);
    EXPECT_EQ(engine::protocol_from_string("retrained"), Protocol::Retrained);
}
