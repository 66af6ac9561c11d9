// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "tfmoe/param_store.hpp"

#include <algorithm>
#include <cmath>

namespace tfmoe {

const char* to_string(ParamGroup g) {
    switch (g) {
        case ParamGroup::PretrainReconstructor:
            return "pretrain_reconstructor";
        case ParamGroup::Reconstructor:
            return "reconstructor";
        case ParamGroup::Predictor:
            return "predictor";
    }
    return "?";
}

ParamGroup param_group_from_string(const std::string& s) {
    if (s == "pretrain_reconstructor") return ParamGroup::PretrainReconstructor;
    if (s == "reconstructor") return ParamGroup::Reconstructor;
    if (s == "predictor") return ParamGroup::Predictor;
    throw InvariantError("unknown parameter group '" + s + "'");
}

ParamStore::ParamStore(const ParamStore& other) {
    for (const auto& [name, e] : other.entries_) entries_.emplace(name, Entry{e.group, ad::leaf(e.var.value()), e.bounds});
}

ParamStore& ParamStore::operator=(const ParamStore& other) {
    if (this != &other) {
        ParamStore copy(other);
        *this = std::move(copy);
    }
    return *this;
}

const ad::Var& ParamStore::add(const std::string& name, ParamGroup group, Tensor init, std::optional<Bounds> bounds) {
    auto [it, inserted] = entries_.emplace(name, Entry{group, ad::leaf(std::move(init)), bounds});
    if (!inserted) throw InvariantError("duplicate parameter '" + name + "'");
    return it->second.var;
}

const ad::Var& ParamStore::get(const std::string& name) const { return entry(name).var; }

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw InvariantError("no parameter named '" + name + "'");
    return it->second;
}

void ParamStore::assign(const std::string& name, const Tensor& value) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw InvariantError("no parameter named '" + name + "'");
    ad::Var v = it->second.var;
    if (v.shape() != value.shape()) {
        throw DimensionError("assign '" + name + "': shape " + shape_str(value.shape()) + " vs " + shape_str(v.shape()));
    }
    v.mutable_value() = value;
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += e.var.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [_, e] : entries_) {
        ad::Var v = e.var;
        v.zero_grad();
    }
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
}

void adam_step(ParamStore& store, AdamState& state, const ParamFilter& select) {
    ++state.step;
    for (const auto& [name, e] : store) {
        if (select && !select(name, e.group)) continue;
        ad::Var v = e.var;
        if (!v.has_grad()) throw InvariantError("parameter '" + name + "' has no gradient");
        Tensor& g = v.grad();
        Tensor& p = v.mutable_value();
        auto& mo = state.moments[name];
        if (mo.m.shape() != p.shape()) {
            mo.m = Tensor(p.shape());
            mo.v = Tensor(p.shape());
            mo.step = 0;
        }
        ++mo.step;
        const double lr = state.lr_for(e.group);
        const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(mo.step));
        const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(mo.step));
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double gi = g[i];
            if (!std::isfinite(gi)) throw NumericError("non-finite gradient in '" + name + "'");
            mo.m[i] = state.beta1 * mo.m[i] + (1.0 - state.beta1) * gi;
            mo.v[i] = state.beta2 * mo.v[i] + (1.0 - state.beta2) * gi * gi;
            const double mhat = mo.m[i] / c1;
            const double vhat = mo.v[i] / c2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
            if (e.bounds) p[i] = std::clamp(p[i], e.bounds->lo, e.bounds->hi);
        }
        g.fill(0.0);
    }
}

Tensor glorot_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor t(shape);
    for (auto& v : t.values()) v = dist(rng);
    return t;
}

}  // namespace tfmoe
