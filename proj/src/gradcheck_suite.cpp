// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "tfmoe/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>
#include <random>

#include "tfmoe/clustering.hpp"
#include "tfmoe/ops.hpp"
#include "tfmoe/predictor.hpp"
#include "tfmoe/reconstructor.hpp"

namespace tfmoe {

namespace {

using namespace ad;

struct Ctx {
    std::mt19937_64 rng;
    GradCheckSuiteOptions opts;

    Tensor randn(const Shape& s, double sd = 1.0) {
        std::normal_distribution<double> d(0.0, sd);
        Tensor t(s);
        for (auto& v : t.values()) v = d(rng);
        return t;
    }
    // keeps entries away from the kinks of relu and |.|
    Tensor randn_off_zero(const Shape& s, double gap = 0.05) {
        Tensor t = randn(s);
        for (auto& v : t.values())
            if (std::abs(v) < gap) v = v < 0 ? v - gap : v + gap;
        return t;
    }
    Tensor uniform(const Shape& s, double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        Tensor t(s);
        for (auto& v : t.values()) v = d(rng);
        return t;
    }
    Var project(const Var& y) { return sum(mul(y, constant(randn(y.shape())))); }

    GradCheckReport check(const std::function<Var()>& loss, std::vector<GradCheckParam> params) {
        return finite_difference_check(loss, std::move(params), opts.h, opts.tol, opts.floor);
    }
};

std::vector<GradCheckParam> all_params(const ParamStore& s) {
    std::vector<GradCheckParam> out;
    for (const auto& [name, e] : s) out.push_back({name, e.var});
    return out;
}

// Freshly initialized biases are zero, which puts ReLU inputs exactly on the kink
// wherever a layer sees an all-zero row; shift every value off its init.
void perturb(ParamStore& s, Ctx& k) {
    for (const auto& name : s.names()) {
        Tensor v = s.get(name).value();
        const Tensor d = k.randn(v.shape(), 0.3);
        for (std::size_t i = 0; i < v.numel(); ++i) v[i] += d[i];
        s.assign(name, v);
    }
}

using CaseFn = std::function<GradCheckReport(Ctx&)>;

std::vector<std::pair<std::string, CaseFn>> cases() {
    std::vector<std::pair<std::string, CaseFn>> c;
    c.emplace_back("linear", [](Ctx& k) {
        auto x = leaf(k.randn({2, 3, 4})), w = leaf(k.randn({4, 5})), b = leaf(k.randn({5}));
        const Tensor p = k.randn({2, 3, 5});
        return k.check([&] { return sum(mul(linear(x, w, b), constant(p))); }, {{"x", x}, {"w", w}, {"b", b}});
    });
    c.emplace_back("conv1d", [](Ctx& k) {
        auto x = leaf(k.randn({2, 3, 7})), w = leaf(k.randn({4, 3, 3})), b = leaf(k.randn({4}));
        const Tensor p = k.randn({2, 4, 5});
        return k.check([&] { return sum(mul(conv1d(x, w, b), constant(p))); }, {{"x", x}, {"kernel", w}, {"bias", b}});
    });
    c.emplace_back("pad_last", [](Ctx& k) {
        auto x = leaf(k.randn({2, 2, 4}));
        const Tensor p = k.randn({2, 2, 7});
        return k.check([&] { return sum(mul(pad_last(x, 1, 2), constant(p))); }, {{"x", x}});
    });
    c.emplace_back("diffusion_conv", [](Ctx& k) {
        auto a = leaf(k.uniform({2, 4, 4}, 0.2, 1.5)), x = leaf(k.randn({2, 4, 3, 5})),
             w = leaf(k.randn({2, 3, 2, 2}));
        const Tensor p = k.randn({2, 4, 2, 5});
        return k.check([&] { return sum(mul(diffusion_conv(a, x, w), constant(p))); },
                       {{"adjacency", a}, {"signal", x}, {"weights", w}});
    });
    c.emplace_back("softmax_rows", [](Ctx& k) {
        auto x = leaf(k.randn({3, 5}, 2.0));
        const Tensor p = k.randn({3, 5});
        return k.check([&] { return sum(mul(softmax_rows(x), constant(p))); }, {{"logits", x}});
    });
    c.emplace_back("pair_logits", [](Ctx& k) {
        auto e = leaf(k.randn({2, 4, 3})), w = leaf(k.randn({6, 1})), b = leaf(k.randn({1}));
        const Tensor p = k.randn({2, 4, 4});
        return k.check([&] { return sum(mul(pair_logits(e, w, b), constant(p))); }, {{"e", e}, {"w", w}, {"b", b}});
    });
    c.emplace_back("elementwise", [](Ctx& k) {
        auto a = leaf(k.randn_off_zero({3, 4})), b = leaf(k.randn({3, 4}));
        const Tensor cst = k.randn({3, 4}), p = k.randn({3, 4});
        return k.check(
            [&] {
                auto y = add(mul(relu(a), b), sub(scale(a, 0.7), add_scalar(b, 0.3)));
                return sum(mul(add_constant(y, cst), constant(p)));
            },
            {{"a", a}, {"b", b}});
    });
    c.emplace_back("structural", [](Ctx& k) {
        auto a = leaf(k.randn({4, 3})), b = leaf(k.randn({4, 2}));
        const std::vector<std::size_t> rows{3, 0, 3, 1};
        const Tensor p = k.randn({4, 5});
        const Tensor p2 = k.randn({4, 2}), ps = k.randn({4, 2});
        return k.check(
            [&] {
                auto cat = gather_rows(concat_last(a, b), rows);
                auto flat = reshape(cat, {20});
                std::vector<Var> cols{row_squared_error(a, Tensor({4, 3})), row_squared_error(b, Tensor({4, 2}))};
                auto sc = stack_columns(cols);
                return add(sum(mul(reshape(flat, {4, 5}), constant(p))),
                           add(sum(mul(b, constant(p2))), sum(mul(sc, constant(ps)))));
            },
            {{"a", a}, {"b", b}});
    });
    c.emplace_back("regression_losses", [](Ctx& k) {
        auto x = leaf(k.randn({3, 4}));
        Tensor t = x.value();
        const Tensor off = k.randn_off_zero({3, 4});
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] += off[i];
        const Tensor p = k.randn({3});
        return k.check(
            [&] {
                return add(add(mean_abs_error(x, t), sum_abs_error(x, t)),
                           add(mean_squared_error(x, t), sum(mul(row_squared_error(x, t), constant(p)))));
            },
            {{"pred", x}});
    });
    c.emplace_back("gaussian", [](Ctx& k) {
        auto qm = leaf(k.randn({3, 2})), qv = leaf(k.randn({3, 2}, 0.5)), pm = leaf(k.randn({3, 2})),
             pv = leaf(k.randn({3, 2}, 0.5));
        auto rm = leaf(k.randn({2})), rv = leaf(k.randn({2}, 0.5));
        const Tensor eps = k.randn({3, 2}), p = k.randn({3, 2}), pr = k.randn({3});
        return k.check(
            [&] {
                auto z = sum(mul(reparameterize(qm, qv, eps), constant(p)));
                auto kl = add(gaussian_kl(qm, qv, pm, pv), sum(mul(gaussian_kl_rows(qm, qv, rm, rv), constant(pr))));
                return add(z, kl);
            },
            {{"q_mean", qm}, {"q_log_var", qv}, {"p_mean", pm}, {"p_log_var", pv}, {"prior_mean", rm},
             {"prior_log_var", rv}});
    });
    c.emplace_back("student_t_kl", [](Ctx& k) {
        auto z = leaf(k.randn({5, 3})), mu = leaf(k.randn({2, 3}));
        Tensor target = k.uniform({5, 2}, 0.1, 1.0);
        for (std::size_t i = 0; i < 5; ++i) {
            const double s = target[2 * i] + target[2 * i + 1];
            target[2 * i] /= s;
            target[2 * i + 1] /= s;
        }
        return k.check([&] { return kl_to_target(target, student_t_assign(z, mu)); }, {{"latents", z}, {"centroids", mu}});
    });
    c.emplace_back("mix_experts", [](Ctx& k) {
        auto p0 = leaf(k.randn({2, 3, 4})), p1 = leaf(k.randn({2, 3, 4})), g = leaf(k.uniform({3, 2}, 0.0, 1.0));
        const Tensor p = k.randn({2, 3, 4});
        return k.check(
            [&] {
                std::vector<Var> preds{p0, p1};
                return sum(mul(mix_experts(preds, g), constant(p)));
            },
            {{"pred0", p0}, {"pred1", p1}, {"gates", g}});
    });
    c.emplace_back("pretrain_autoencoder", [](Ctx& k) {
        auto model = cluster::make_autoencoder({6, 5, 4, 3}, k.rng());
        const Tensor x = k.randn({4, 6}), p = k.randn({4, 6});
        return k.check([&] { return sum(mul(model.reconstruct(constant(x)), constant(p))); },
                       all_params(model.params));
    });
    c.emplace_back("dec_clustering_loss", [](Ctx& k) {
        auto model = cluster::make_autoencoder({6, 5, 4, 3}, k.rng());
        const Tensor x = k.randn({5, 6});
        auto mu = leaf(k.randn({2, 3}));
        Tensor q;
        {
            NoGradGuard ng;
            q = student_t_assign(model.encode(constant(x)), mu).value();
        }
        const Tensor target = cluster::target_distribution(q);
        auto params = all_params(model.params);
        params.push_back({"centroids", mu});
        return k.check([&] { return kl_to_target(target, student_t_assign(model.encode(constant(x)), mu)); }, params);
    });
    c.emplace_back("reconstructor_elbo", [](Ctx& k) {
        ParamStore s;
        recon::add_vae_expert(s, 0, {6, 5, 4, 2}, k.rng);
        perturb(s, k);
        const Tensor x = k.randn({3, 6}), noise = k.randn({3, 2});
        return k.check([&] { return sum(recon::vae_elbo(s, 0, x, noise)); }, all_params(s));
    });
    c.emplace_back("predictor_stack", [](Ctx& k) {
        ParamStore s;
        pred::PredictorShape shape{4, 4, 3, 2, 3};
        add_predictor_expert(s, 0, shape, k.rng);
        perturb(s, k);
        const Tensor x = k.randn({2, 3, 4}), p = k.randn({2, 3, 4});
        return k.check(
            [&] {
                auto y = pred::expert_predict(s, 0, constant(x), pred::NoiseMode::Eval, nullptr);
                return sum(mul(y, constant(p)));
            },
            all_params(s));
    });
    c.emplace_back("moe_prediction_loss", [](Ctx& k) {
        ParamStore s;
        pred::PredictorShape shape{4, 4, 3, 1, 3};
        for (std::size_t e = 0; e < 2; ++e) add_predictor_expert(s, e, shape, k.rng);
        recon::VaeShape vshape{6, 5, 4, 2};
        for (std::size_t e = 0; e < 2; ++e) recon::add_vae_expert(s, e, vshape, k.rng);
        perturb(s, k);
        const Tensor x = k.randn({2, 3, 4}), weeks = k.randn({3, 6}), noise = k.randn({3, 2});
        Tensor y = k.randn({2, 3, 4}, 3.0);
        return k.check(
            [&] {
                std::vector<Var> cols;
                for (std::size_t e = 0; e < 2; ++e) cols.push_back(recon::vae_elbo(s, e, weeks, noise));
                auto gates = pred::gating_weights(stack_columns(cols));
                auto out = pred::moe_predict(s, 2, gates, constant(x), pred::NoiseMode::Eval, nullptr);
                return pred::prediction_loss(out, y);
            },
            all_params(s));
    });
    return c;
}

}  // namespace

std::vector<std::string> gradcheck_case_names() {
    std::vector<std::string> out;
    for (const auto& [name, fn] : cases()) out.push_back(name);
    return out;
}

std::vector<GradCheckCase> run_gradcheck_suite(const GradCheckSuiteOptions& opts,
                                               const std::vector<std::string>& only) {
    const auto all = cases();
    for (const auto& n : only)
        if (std::none_of(all.begin(), all.end(), [&](const auto& c) { return c.first == n; }))
            throw ConfigError("unknown gradcheck case '" + n + "'");
    std::vector<GradCheckCase> out;
    std::size_t index = 0;
    for (const auto& [name, fn] : all) {
        ++index;
        if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
        // each case gets its own stream so filtering does not change the draws
        Ctx k{std::mt19937_64(opts.seed * 1000003ULL + index), opts};
        out.push_back({name, fn(k)});
    }
    return out;
}

}  // namespace tfmoe
