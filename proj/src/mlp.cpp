// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "tfmoe/mlp.hpp"

#include "tfmoe/ops.hpp"

namespace tfmoe {

void add_mlp(ParamStore& store, const std::string& prefix, std::span<const std::size_t> dims, ParamGroup group,
             std::mt19937_64& rng) {
    if (dims.size() < 2) throw ConfigError("mlp '" + prefix + "' needs at least an input and output width");
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        if (dims[i] == 0 || dims[i + 1] == 0) throw ConfigError("mlp '" + prefix + "' has a zero width");
        store.add(prefix + ".W" + std::to_string(i), group,
                  glorot_uniform({dims[i], dims[i + 1]}, dims[i], dims[i + 1], rng));
        store.add(prefix + ".b" + std::to_string(i), group, Tensor({dims[i + 1]}));
    }
}

std::size_t mlp_depth(const ParamStore& store, const std::string& prefix) {
    std::size_t n = 0;
    while (store.contains(prefix + ".W" + std::to_string(n))) ++n;
    return n;
}

ad::Var mlp_forward(const ParamStore& store, const std::string& prefix, const ad::Var& x) {
    const std::size_t depth = mlp_depth(store, prefix);
    if (depth == 0) throw InvariantError("no mlp registered under '" + prefix + "'");
    ad::Var h = x;
    for (std::size_t i = 0; i < depth; ++i) {
        h = ad::linear(h, store.get(prefix + ".W" + std::to_string(i)), store.get(prefix + ".b" + std::to_string(i)));
        if (i + 1 < depth) h = ad::relu(h);
    }
    return h;
}

}  // namespace tfmoe
