// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tfmoe/autodiff.hpp"

namespace tfmoe {

/// Raised when a model-state contract is broken (missing gradient, duplicate name...).
class InvariantError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ParamGroup { PretrainReconstructor = 0, Reconstructor = 1, Predictor = 2 };
inline constexpr std::size_t kParamGroupCount = 3;

const char* to_string(ParamGroup g);
ParamGroup param_group_from_string(const std::string& s);

struct Bounds {
    double lo, hi;
};

/// Named trainable tensors. Copies are deep: a copied store shares no
/// storage with its source, which is how frozen snapshots are taken.
class ParamStore {
public:
    struct Entry {
        ParamGroup group;
        ad::Var var;
        std::optional<Bounds> bounds;  // projected after every optimizer step
    };

    ParamStore() = default;
    ParamStore(const ParamStore& other);
    ParamStore& operator=(const ParamStore& other);
    ParamStore(ParamStore&&) noexcept = default;
    ParamStore& operator=(ParamStore&&) noexcept = default;

    const ad::Var& add(const std::string& name, ParamGroup group, Tensor init,
                       std::optional<Bounds> bounds = std::nullopt);
    const ad::Var& get(const std::string& name) const;
    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    const Entry& entry(const std::string& name) const;

    /// Overwrites a value in place (shape must match).
    void assign(const std::string& name, const Tensor& value);

    std::size_t size() const { return entries_.size(); }
    std::size_t scalar_count() const;
    void zero_grad();

    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    std::vector<std::string> names() const;

private:
    std::map<std::string, Entry> entries_;
};

/// Adam with bias correction and per-group learning rates.
struct AdamState {
    struct Moments {
        Tensor m, v;
        long step = 0;
    };
    std::map<std::string, Moments> moments;
    long step = 0;
    std::array<double, kParamGroupCount> lr{0.001, 0.0001, 0.01};
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    double lr_for(ParamGroup g) const { return lr[static_cast<std::size_t>(g)]; }
};

using ParamFilter = std::function<bool(const std::string& name, ParamGroup group)>;

/// One Adam update over the selected parameters, then zeroes their gradients.
/// Every selected parameter must carry a gradient.
void adam_step(ParamStore& store, AdamState& state, const ParamFilter& select = {});

/// Glorot-uniform draw for a [fan_in, fan_out]-like tensor.
Tensor glorot_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

}  // namespace tfmoe
