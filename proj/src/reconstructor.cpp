// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "tfmoe/reconstructor.hpp"

#include <cmath>
#include <numbers>

#include "tfmoe/mlp.hpp"
#include "tfmoe/ops.hpp"

namespace tfmoe::recon {

std::string vae_prefix(std::size_t expert) { return "expert" + std::to_string(expert) + ".vae"; }

void add_vae_expert(ParamStore& store, std::size_t expert, const VaeShape& shape, std::mt19937_64& rng) {
    if (shape.input_dim == 0 || shape.latent_dim == 0) throw ConfigError("VAE dimensions must be positive");
    const std::string p = vae_prefix(expert);
    const auto g = ParamGroup::Reconstructor;
    const std::size_t trunk[] = {shape.input_dim, shape.hidden1, shape.hidden2};
    const std::size_t head[] = {shape.hidden2, shape.latent_dim};
    const std::size_t dec[] = {shape.latent_dim, shape.hidden2, shape.hidden1, shape.input_dim};
    add_mlp(store, p + ".trunk", trunk, g, rng);
    add_mlp(store, p + ".mean", head, g, rng);
    add_mlp(store, p + ".logvar", head, g, rng);
    add_mlp(store, p + ".dec", dec, g, rng);
    store.add(p + ".prior_mean", g, Tensor({shape.latent_dim}));
    store.add(p + ".prior_log_var", g, Tensor({shape.latent_dim}), Bounds{-kPriorLogVarBound, kPriorLogVarBound});
}

VaeShape vae_shape(const ParamStore& store, std::size_t expert) {
    const std::string p = vae_prefix(expert);
    const auto& w0 = store.get(p + ".trunk.W0").value();
    const auto& w1 = store.get(p + ".trunk.W1").value();
    return {w0.dim(0), w0.dim(1), w1.dim(1), store.get(p + ".prior_mean").value().dim(0)};
}

Posterior vae_encode(const ParamStore& store, std::size_t expert, const ad::Var& weeks) {
    const std::string p = vae_prefix(expert);
    auto h = ad::relu(mlp_forward(store, p + ".trunk", weeks));
    return {mlp_forward(store, p + ".mean", h), mlp_forward(store, p + ".logvar", h)};
}

ad::Var vae_decode(const ParamStore& store, std::size_t expert, const ad::Var& z) {
    return mlp_forward(store, vae_prefix(expert) + ".dec", z);
}

ElboParts vae_elbo_parts(const ParamStore& store, std::size_t expert, const Tensor& weeks, const Tensor& noise) {
    const std::string p = vae_prefix(expert);
    if (weeks.rank() != 2) throw DimensionError("vae_elbo expects weeks [B, len]");
    const double len = static_cast<double>(weeks.dim(1));
    auto q = vae_encode(store, expert, ad::constant(weeks));
    auto z = ad::reparameterize(q.mean, q.log_var, noise);
    auto recon = vae_decode(store, expert, z);
    ElboParts out;
    out.log_likelihood =
        ad::add_scalar(ad::scale(ad::row_squared_error(recon, weeks), -0.5), -0.5 * len * std::log(2.0 * std::numbers::pi));
    out.kl = ad::gaussian_kl_rows(q.mean, q.log_var, store.get(p + ".prior_mean"), store.get(p + ".prior_log_var"));
    out.elbo = ad::sub(out.log_likelihood, out.kl);
    return out;
}

ad::Var vae_elbo(const ParamStore& store, std::size_t expert, const Tensor& weeks, const Tensor& noise) {
    return vae_elbo_parts(store, expert, weeks, noise).elbo;
}

Tensor standard_normal(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    Tensor t({rows, cols});
    for (auto& v : t.values()) v = d(rng);
    return t;
}

namespace {

Tensor select_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
    const std::size_t w = x.dim(1);
    Tensor out({rows.size(), w});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= x.dim(0)) throw DimensionError("group index " + std::to_string(rows[r]) + " out of range");
        std::copy_n(x.data() + rows[r] * w, w, out.data() + r * w);
    }
    return out;
}

}  // namespace

ad::Var group_elbo_loss(const ParamStore& store, const Groups& groups, const Tensor& weeks, std::mt19937_64& rng) {
    ad::Var total;
    for (std::size_t k = 0; k < groups.size(); ++k) {
        if (groups[k].empty()) continue;
        const Tensor x = select_rows(weeks, groups[k]);
        const Tensor noise = standard_normal(x.dim(0), vae_shape(store, k).latent_dim, rng);
        auto term = ad::scale(ad::sum(vae_elbo(store, k, x, noise)), -1.0);
        total = total ? ad::add(total, term) : term;
    }
    return total;
}

ParamFilter experts_filter(const Groups& groups) {
    std::vector<std::string> prefixes;
    for (std::size_t k = 0; k < groups.size(); ++k)
        if (!groups[k].empty()) prefixes.push_back(vae_prefix(k) + ".");
    return [prefixes](const std::string& name, ParamGroup) {
        for (const auto& p : prefixes)
            if (name.compare(0, p.size(), p) == 0) return true;
        return false;
    };
}

std::vector<double> train_group_reconstructors(ParamStore& store, AdamState& adam, const Groups& groups,
                                               const Tensor& weeks, std::size_t epochs, std::mt19937_64& rng) {
    std::size_t assigned = 0;
    for (const auto& g : groups) assigned += g.size();
    std::vector<double> history;
    if (assigned == 0) return history;
    const auto select = experts_filter(groups);
    for (std::size_t e = 0; e < epochs; ++e) {
        auto loss = group_elbo_loss(store, groups, weeks, rng);
        history.push_back(-loss.item() / static_cast<double>(assigned));
        loss.backward();
        adam_step(store, adam, select);
    }
    return history;
}

Tensor evidence_matrix(const ParamStore& store, std::size_t experts, const Tensor& weeks, std::uint64_t seed) {
    if (experts == 0) throw ConfigError("evidence_matrix needs at least one expert");
    ad::NoGradGuard ng;
    const std::size_t n = weeks.dim(0);
    std::mt19937_64 rng(seed);
    const Tensor noise = standard_normal(n, vae_shape(store, 0).latent_dim, rng);
    Tensor ev({n, experts});
    for (std::size_t k = 0; k < experts; ++k) {
        const Tensor e = vae_elbo(store, k, weeks, noise).value();
        for (std::size_t i = 0; i < n; ++i) ev.at(i, k) = e[i];
    }
    return ev;
}

Tensor sample_prior(const ParamStore& store, std::size_t expert, std::size_t count, std::mt19937_64& rng) {
    const auto shape = vae_shape(store, expert);
    if (count == 0) return Tensor({0, shape.input_dim});
    ad::NoGradGuard ng;
    const std::string p = vae_prefix(expert);
    const Tensor eps = standard_normal(count, shape.latent_dim, rng);
    const auto& mu = store.get(p + ".prior_mean").value();
    const auto& lv = store.get(p + ".prior_log_var").value();
    Tensor z({count, shape.latent_dim});
    for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < shape.latent_dim; ++j) z.at(i, j) = mu[j] + std::exp(0.5 * lv[j]) * eps.at(i, j);
    return vae_decode(store, expert, ad::constant(z)).value();
}

}  // namespace tfmoe::recon
