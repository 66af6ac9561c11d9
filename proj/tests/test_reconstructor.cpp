// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "tfmoe/datastream.hpp"
#include "tfmoe/gradcheck.hpp"
#include "tfmoe/ops.hpp"
#include "tfmoe/reconstructor.hpp"

using namespace tfmoe;
using namespace tfmoe::recon;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

Tensor randn(std::size_t r, std::size_t c, std::uint64_t seed, double sd = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, sd);
    Tensor t({r, c});
    for (auto& v : t.values()) v = d(rng);
    return t;
}

void randomize(ParamStore& store, std::uint64_t seed, double sd) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, sd);
    for (const auto& name : store.names()) {
        Tensor t = store.get(name).value();
        for (auto& v : t.values()) v = d(rng);
        store.assign(name, t);
    }
}

// y = x W + b for x[in], W[in, out]
std::vector<double> dense(const std::vector<double>& x, const Tensor& w, const Tensor& b, bool relu) {
    std::vector<double> y(w.dim(1));
    for (std::size_t o = 0; o < w.dim(1); ++o) {
        double s = b[o];
        for (std::size_t i = 0; i < w.dim(0); ++i) s += x[i] * w.at(i, o);
        y[o] = relu ? std::max(0.0, s) : s;
    }
    return y;
}

// Independent evaluation of the two ELBO terms for one row.
double brute_force_elbo(const ParamStore& s, const std::vector<double>& x, const std::vector<double>& eps) {
    auto P = [&](const std::string& n) { return s.get("expert0.vae." + n).value(); };
    auto h = dense(x, P("trunk.W0"), P("trunk.b0"), true);
    h = dense(h, P("trunk.W1"), P("trunk.b1"), true);
    auto mu = dense(h, P("mean.W0"), P("mean.b0"), false);
    auto lv = dense(h, P("logvar.W0"), P("logvar.b0"), false);
    std::vector<double> z(mu.size());
    for (std::size_t j = 0; j < z.size(); ++j) z[j] = mu[j] + std::exp(0.5 * lv[j]) * eps[j];
    auto d = dense(z, P("dec.W0"), P("dec.b0"), true);
    d = dense(d, P("dec.W1"), P("dec.b1"), true);
    d = dense(d, P("dec.W2"), P("dec.b2"), false);
    double sq = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) sq += (x[j] - d[j]) * (x[j] - d[j]);
    const double loglik = -0.5 * sq - 0.5 * static_cast<double>(x.size()) * kLog2Pi;
    const auto pm = P("prior_mean"), plv = P("prior_log_var");
    double kl = 0.0;
    for (std::size_t j = 0; j < mu.size(); ++j)
        kl += 0.5 * (plv[j] - lv[j] + (std::exp(lv[j]) + (mu[j] - pm[j]) * (mu[j] - pm[j])) / std::exp(plv[j]) - 1.0);
    return loglik - kl;
}

ParamStore one_expert(const VaeShape& shape, std::uint64_t seed) {
    ParamStore s;
    std::mt19937_64 rng(seed);
    add_vae_expert(s, 0, shape, rng);
    return s;
}

struct PlantedSet {
    data::TaskDataset ds;
    Tensor weeks;
    std::vector<int> labels;
    data::NormStats norm;
    std::size_t start_bin = 0;
};

data::StreamSpec planted_spec(int clusters, std::size_t nodes, std::uint64_t seed) {
    data::StreamSpec spec;
    spec.num_tasks = 1;
    spec.initial_nodes = nodes;
    spec.num_clusters = clusters;
    spec.noise_level = 0.05;
    spec.seed = seed;
    return spec;
}

PlantedSet planted(int clusters, std::size_t nodes, std::uint64_t seed) {
    const auto spec = planted_spec(clusters, nodes, seed);
    PlantedSet out;
    out.ds = data::generate_stream(spec).front();
    auto split = data::split_protocol(out.ds);
    data::FlowReader reader(out.ds);
    out.norm = data::fit_normalizer(reader, split.train, out.ds.nodes);
    auto w = data::extract_week(reader, split.train, out.norm, out.ds.nodes);
    out.weeks = w.weeks;
    out.start_bin = w.start_bin;
    for (auto id : out.ds.nodes) out.labels.push_back(out.ds.labels.at(id));
    return out;
}

}  // namespace

TEST(VaeElbo, PerfectDecoderAndPosteriorAtPriorGiveConstant) {
    const std::size_t len = 6;
    auto s = one_expert({len, 5, 4, 3}, 1);
    Tensor x({1, len}, {0.3, -1.0, 2.0, 0.0, 0.5, 1.5});
    for (const auto& name : s.names()) s.assign(name, Tensor(s.get(name).value().shape()));
    s.assign("expert0.vae.dec.b2", x.reshaped({len}));
    s.assign("expert0.vae.prior_mean", Tensor({3}, {0.2, -0.1, 0.4}));
    s.assign("expert0.vae.prior_log_var", Tensor({3}, {0.3, -0.5, 1.0}));
    s.assign("expert0.vae.mean.b0", Tensor({3}, {0.2, -0.1, 0.4}));
    s.assign("expert0.vae.logvar.b0", Tensor({3}, {0.3, -0.5, 1.0}));
    auto e = vae_elbo(s, 0, x, randn(1, 3, 2));
    EXPECT_NEAR(e.item(), -0.5 * static_cast<double>(len) * kLog2Pi, 1e-12);
}

TEST(VaeElbo, MatchesBruteForceOnToyExpert) {
    auto s = one_expert({2, 3, 2, 1}, 3);
    randomize(s, 4, 0.7);
    s.assign("expert0.vae.prior_log_var", Tensor({1}, {0.4}));
    auto x = randn(5, 2, 5);
    auto eps = randn(5, 1, 6);
    auto e = vae_elbo(s, 0, x, eps).value();
    for (std::size_t i = 0; i < 5; ++i)
        EXPECT_NEAR(e[i], brute_force_elbo(s, {x.at(i, 0), x.at(i, 1)}, {eps[i]}), 1e-12);
}

TEST(VaeElbo, KlComponentIsNonNegative) {
    auto s = one_expert({8, 6, 5, 4}, 7);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        randomize(s, seed, 0.8);
        auto parts = vae_elbo_parts(s, 0, randn(6, 8, seed + 100, 2.0), randn(6, 4, seed + 200));
        for (double v : parts.kl.value().values()) EXPECT_GE(v, -1e-9);
    }
}

TEST(VaeElbo, GradientsPassFiniteDifferenceCheck) {
    auto s = one_expert({5, 4, 3, 2}, 8);
    randomize(s, 9, 0.5);
    const Tensor x = randn(3, 5, 10), noise = randn(3, 2, 11);
    std::vector<GradCheckParam> params;
    for (const auto& [name, e] : s) params.push_back({name, e.var});
    auto report = finite_difference_check([&] { return ad::sum(vae_elbo(s, 0, x, noise)); }, params);
    EXPECT_TRUE(report.passed) << report.max_rel_error();
}

TEST(TrainReconstructors, OverfitsOneNode) {
    const std::size_t len = 28;
    auto s = one_expert({len, 32, 16, 4}, 12);
    auto x = randn(1, len, 13);
    AdamState adam;
    std::mt19937_64 rng(1);
    train_group_reconstructors(s, adam, {{0}}, x, 20000, rng);
    ad::NoGradGuard ng;
    auto q = vae_encode(s, 0, ad::constant(x));
    auto r = vae_decode(s, 0, q.mean).value();
    double err = 0.0;
    for (std::size_t j = 0; j < len; ++j) err += std::abs(r[j] - x[j]);
    EXPECT_LT(err / static_cast<double>(len), 0.1);
}

TEST(TrainReconstructors, EmptyGroupLeavesExpertUnchanged) {
    ParamStore s;
    std::mt19937_64 init(2);
    for (std::size_t k = 0; k < 3; ++k) add_vae_expert(s, k, {10, 6, 5, 3}, init);
    const ParamStore before = s;
    AdamState adam;
    std::mt19937_64 rng(3);
    train_group_reconstructors(s, adam, {{0, 1}, {}, {2}}, randn(3, 10, 4), 5, rng);
    for (const auto& name : s.names()) {
        const bool expert1 = name.rfind("expert1.", 0) == 0;
        EXPECT_EQ(s.get(name).value() == before.get(name).value(), expert1) << name;
    }
}

TEST(TrainReconstructors, SmoothedMeanElboRises) {
    auto pl = planted(3, 12, 5);
    ParamStore s;
    std::mt19937_64 init(6);
    std::vector<std::vector<std::size_t>> groups(3);
    for (std::size_t i = 0; i < pl.labels.size(); ++i) groups[pl.labels[i]].push_back(i);
    for (std::size_t k = 0; k < 3; ++k) add_vae_expert(s, k, {pl.weeks.dim(1), 32, 16, 4}, init);
    AdamState adam;
    std::mt19937_64 rng(7);
    auto hist = train_group_reconstructors(s, adam, groups, pl.weeks, 300, rng);
    // per-epoch noise from first differences; a difference of two 5-epoch
    // block means then has sd ~ sigma * sqrt(2/5)
    double sd = 0.0;
    for (std::size_t i = 1; i < hist.size(); ++i) sd += (hist[i] - hist[i - 1]) * (hist[i] - hist[i - 1]);
    const double sigma = std::sqrt(sd / (2.0 * static_cast<double>(hist.size() - 1)));
    const double tol = 3.0 * sigma * std::sqrt(2.0 / 5.0);
    std::vector<double> block;
    for (std::size_t i = 0; i + 5 <= hist.size(); i += 5) {
        double m = 0.0;
        for (std::size_t j = i; j < i + 5; ++j) m += hist[j] / 5.0;
        block.push_back(m);
    }
    for (std::size_t i = 1; i < block.size(); ++i) EXPECT_GE(block[i], block[i - 1] - tol) << "block " << i;
    EXPECT_GT(block.back(), block.front());
}

TEST(Evidence, IdenticalExpertsGiveEqualColumns) {
    ParamStore s;
    std::mt19937_64 init(1);
    add_vae_expert(s, 0, {8, 5, 4, 2}, init);
    for (std::size_t k = 1; k < 3; ++k) {
        std::mt19937_64 same(1);
        add_vae_expert(s, k, {8, 5, 4, 2}, same);
    }
    auto ev = evidence_matrix(s, 3, randn(6, 8, 2), 99);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(ev.at(i, 0), ev.at(i, 1));
        EXPECT_EQ(ev.at(i, 0), ev.at(i, 2));
    }
}

TEST(Evidence, DeterministicAndOrderIndependent) {
    ParamStore s;
    std::mt19937_64 init(1);
    for (std::size_t k = 0; k < 2; ++k) add_vae_expert(s, k, {8, 5, 4, 2}, init);
    auto w = randn(4, 8, 3);
    auto a = evidence_matrix(s, 2, w, 5);
    auto b = evidence_matrix(s, 2, w, 5);
    EXPECT_EQ(a, b);
    auto single = evidence_matrix(s, 1, w, 5);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(single.at(i, 0), a.at(i, 0));
}

TEST(Evidence, HeldOutNodesPickTheirGeneratingExpert) {
    auto pl = planted(3, 60, 11);
    const std::size_t n = pl.labels.size();
    std::vector<std::vector<std::size_t>> groups(3);
    std::vector<std::size_t> held;
    for (std::size_t i = 0; i < n; ++i) (i % 3 == 0 ? held.push_back(i) : groups[pl.labels[i]].push_back(i));
    ParamStore s;
    std::mt19937_64 init(12);
    for (std::size_t k = 0; k < 3; ++k) add_vae_expert(s, k, {pl.weeks.dim(1), 32, 16, 4}, init);
    AdamState adam;
    std::mt19937_64 rng(13);
    train_group_reconstructors(s, adam, groups, pl.weeks, 2000, rng);
    auto ev = evidence_matrix(s, 3, pl.weeks, 14);
    std::size_t hit = 0;
    for (auto i : held) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < 3; ++k)
            if (ev.at(i, k) > ev.at(i, best)) best = k;
        hit += static_cast<int>(best) == pl.labels[i];
    }
    EXPECT_GE(static_cast<double>(hit), 0.9 * static_cast<double>(held.size()));
}

TEST(SamplePrior, CollapsedPriorGivesDecoderOfPriorMean) {
    auto s = one_expert({6, 5, 4, 3}, 2);
    s.assign("expert0.vae.prior_mean", Tensor({3}, {0.5, -0.2, 0.1}));
    s.assign("expert0.vae.prior_log_var", Tensor({3}, -kPriorLogVarBound));
    std::mt19937_64 rng(1);
    auto x = sample_prior(s, 0, 4, rng);
    ad::NoGradGuard ng;
    auto ref = vae_decode(s, 0, ad::constant(Tensor({1, 3}, {0.5, -0.2, 0.1}))).value();
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(x.at(i, j), ref[j], 1e-3);
}

TEST(SamplePrior, ZeroCountAndReproducibility) {
    auto s = one_expert({6, 5, 4, 3}, 2);
    std::mt19937_64 r0(1);
    EXPECT_EQ(sample_prior(s, 0, 0, r0).dim(0), 0u);
    std::mt19937_64 a(5), b(5);
    auto xa = sample_prior(s, 0, 7, a), xb = sample_prior(s, 0, 7, b);
    EXPECT_EQ(xa, xb);
    EXPECT_EQ(xa.shape(), (Shape{7, 6}));
    EXPECT_TRUE(xa.all_finite());
}

TEST(SamplePrior, SamplesResembleTheirClusterTemplate) {
    const auto spec = planted_spec(2, 30, 21);
    const auto patterns = data::resolve_patterns(spec);
    auto pl = planted(2, 30, 21);
    std::vector<std::vector<std::size_t>> groups(2);
    for (std::size_t i = 0; i < pl.labels.size(); ++i) groups[pl.labels[i]].push_back(i);
    ParamStore s;
    std::mt19937_64 init(22);
    for (std::size_t k = 0; k < 2; ++k) add_vae_expert(s, k, {pl.weeks.dim(1), 32, 16, 4}, init);
    AdamState adam;
    std::mt19937_64 rng(23);
    train_group_reconstructors(s, adam, groups, pl.weeks, 400, rng);

    const std::size_t len = pl.weeks.dim(1);
    std::vector<std::vector<double>> tmpl(2, std::vector<double>(len));
    for (int c = 0; c < 2; ++c)
        for (std::size_t t = 0; t < len; ++t)
            tmpl[c][t] = pl.norm.normalize(data::template_flow(spec, patterns[c], 1, pl.start_bin + t));
    std::mt19937_64 srng(24);
    auto x = sample_prior(s, 0, 100, srng);
    std::size_t closer = 0;
    for (std::size_t i = 0; i < 100; ++i) {
        double da = 0.0, db = 0.0;
        for (std::size_t t = 0; t < len; ++t) {
            da += (x.at(i, t) - tmpl[0][t]) * (x.at(i, t) - tmpl[0][t]);
            db += (x.at(i, t) - tmpl[1][t]) * (x.at(i, t) - tmpl[1][t]);
        }
        closer += da < db;
    }
    EXPECT_GE(closer, 90u);
}
