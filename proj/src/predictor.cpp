// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "tfmoe/predictor.hpp"

#include <cmath>
#include <vector>

#include "tfmoe/ops.hpp"

namespace tfmoe::pred {

std::string predictor_prefix(std::size_t expert) { return "expert" + std::to_string(expert) + ".pred"; }

void add_predictor_expert(ParamStore& store, std::size_t expert, const PredictorShape& s, std::mt19937_64& rng) {
    if (s.input_steps == 0 || s.embed_dim == 0 || s.diffusion_steps == 0 || s.kernel % 2 == 0)
        throw ConfigError("predictor needs positive sizes and an odd kernel");
    if (s.horizon != s.input_steps)
        throw ConfigError("same-padded temporal convolutions need horizon == input steps");
    const std::string p = predictor_prefix(expert);
    const auto g = ParamGroup::Predictor;
    const std::size_t de = s.embed_dim, M = s.diffusion_steps, k = s.kernel;
    store.add(p + ".embed.W", g, glorot_uniform({s.input_steps, de}, s.input_steps, de, rng));
    store.add(p + ".embed.b", g, Tensor({de}));
    store.add(p + ".pair.W", g, glorot_uniform({2 * de, 1}, 2 * de, 1, rng));
    store.add(p + ".pair.b", g, Tensor({1}));
    store.add(p + ".diffusion", g, glorot_uniform({de, 1, M, 2}, 2 * M, de, rng));
    store.add(p + ".conv1.W", g, glorot_uniform({de, de, k}, de * k, de * k, rng));
    store.add(p + ".conv1.b", g, Tensor({de}));
    store.add(p + ".conv2.W", g, glorot_uniform({1, de, k}, de * k, k, rng));
    store.add(p + ".conv2.b", g, Tensor({1}));
}

PredictorShape predictor_shape(const ParamStore& store, std::size_t expert) {
    const std::string p = predictor_prefix(expert);
    const auto& we = store.get(p + ".embed.W").value();
    const auto& lam = store.get(p + ".diffusion").value();
    PredictorShape s;
    s.input_steps = we.dim(0);
    s.horizon = we.dim(0);
    s.embed_dim = we.dim(1);
    s.diffusion_steps = lam.dim(2);
    s.kernel = store.get(p + ".conv1.W").value().dim(2);
    return s;
}

double gumbel_from_uniform(double u) { return -std::log(-std::log(u)); }

Tensor gumbel_noise(const Shape& shape, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor t(shape);
    for (auto& v : t.values()) {
        double x = u(rng);
        while (x <= 0.0) x = u(rng);
        v = gumbel_from_uniform(x);
    }
    return t;
}

ad::Var learn_adjacency(const ParamStore& store, std::size_t expert, const ad::Var& x, NoiseMode mode,
                        std::mt19937_64* rng) {
    if (x.shape().size() != 3) throw DimensionError("learn_adjacency expects x [B, N, T']");
    if (x.shape()[1] < 2) throw DimensionError("learn_adjacency needs at least two nodes");
    const std::string p = predictor_prefix(expert);
    auto e = ad::linear(x, store.get(p + ".embed.W"), store.get(p + ".embed.b"));
    auto w = ad::pair_logits(e, store.get(p + ".pair.W"), store.get(p + ".pair.b"));
    if (mode == NoiseMode::Train) {
        if (!rng) throw InvariantError("training-mode adjacency needs a noise generator");
        w = ad::add_constant(w, gumbel_noise(w.shape(), *rng));
    }
    return ad::softmax_rows(w);
}

ad::Var predictor_forward(const ParamStore& store, std::size_t expert, const ad::Var& adjacency, const ad::Var& x) {
    const auto& xs = x.shape();
    if (xs.size() != 3) throw DimensionError("predictor_forward expects x [B, N, T']");
    const std::size_t B = xs[0], N = xs[1], L = xs[2];
    if (adjacency.shape() != Shape{B, N, N})
        throw DimensionError("adjacency " + shape_str(adjacency.shape()) + " does not match x " + shape_str(xs));
    const std::string p = predictor_prefix(expert);
    const auto shape = predictor_shape(store, expert);
    if (L != shape.input_steps) throw DimensionError("x has " + std::to_string(L) + " steps, predictor expects " +
                                                     std::to_string(shape.input_steps));
    const std::size_t de = shape.embed_dim, pad = shape.kernel / 2;
    auto h = ad::diffusion_conv(adjacency, ad::reshape(x, {B, N, 1, L}), store.get(p + ".diffusion"));
    h = ad::reshape(ad::relu(h), {B * N, de, L});
    h = ad::conv1d(ad::pad_last(h, pad, pad), store.get(p + ".conv1.W"), store.get(p + ".conv1.b"));
    h = ad::conv1d(ad::pad_last(ad::relu(h), pad, pad), store.get(p + ".conv2.W"), store.get(p + ".conv2.b"));
    return ad::reshape(h, {B, N, shape.horizon});
}

ad::Var expert_predict(const ParamStore& store, std::size_t expert, const ad::Var& x, NoiseMode mode,
                       std::mt19937_64* rng) {
    return predictor_forward(store, expert, learn_adjacency(store, expert, x, mode, rng), x);
}

ad::Var gating_weights(const ad::Var& log_evidence) {
    if (log_evidence.shape().size() != 2) throw DimensionError("gating expects log-evidence [N, K]");
    return ad::softmax_rows(log_evidence);
}

Tensor gating_weights(const Tensor& log_evidence) {
    ad::NoGradGuard ng;
    return gating_weights(ad::constant(log_evidence)).value();
}

ad::Var moe_predict(const ParamStore& store, std::size_t experts, const ad::Var& gates, const ad::Var& x,
                    NoiseMode mode, std::mt19937_64* rng) {
    std::vector<ad::Var> preds;
    preds.reserve(experts);
    for (std::size_t k = 0; k < experts; ++k) preds.push_back(expert_predict(store, k, x, mode, rng));
    return ad::mix_experts(preds, gates);
}

ad::Var prediction_loss(const ad::Var& pred, const Tensor& target) { return ad::mean_abs_error(pred, target); }

}  // namespace tfmoe::pred
