// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

// Stacks of linear layers stored in a ParamStore under "<prefix>.W<i>" and
// "<prefix>.b<i>". ReLU between layers, none after the last.

#pragma once

#include <random>
#include <span>
#include <string>

#include "tfmoe/param_store.hpp"

namespace tfmoe {

/// dims = {in, h1, ..., out}; weights Glorot-uniform, biases zero.
void add_mlp(ParamStore& store, const std::string& prefix, std::span<const std::size_t> dims, ParamGroup group,
             std::mt19937_64& rng);

/// Number of layers registered under prefix.
std::size_t mlp_depth(const ParamStore& store, const std::string& prefix);

ad::Var mlp_forward(const ParamStore& store, const std::string& prefix, const ad::Var& x);

}  // namespace tfmoe
