// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

// Tape-free reverse-mode differentiation. Each Var owns a shared node holding
// its value, an optional gradient buffer, its inputs, and a closure that pushes
// the node's gradient into the inputs. backward() walks the graph in reverse
// topological order from a scalar head.

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tfmoe/tensor.hpp"

namespace tfmoe::ad {

struct Node {
    Tensor value;
    Tensor grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;
    const char* op = "leaf";

    Tensor& ensure_grad();
    bool has_grad() const { return grad.numel() == value.numel() && value.numel() > 0; }
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t numel() const { return node_->value.numel(); }
    double item() const { return node_->value.item(); }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool has_grad() const { return node_ && node_->has_grad(); }
    const Tensor& grad() const { return node_->grad; }
    Tensor& grad() { return node_->ensure_grad(); }
    void zero_grad();

    /// Reverse pass from this scalar. Gradients accumulate into leaves.
    void backward() const;

    const std::shared_ptr<Node>& node() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

private:
    std::shared_ptr<Node> node_;
};

/// Non-trainable leaf.
Var constant(Tensor value);
/// Trainable leaf.
Var leaf(Tensor value);

/// Disables graph recording on this thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool saved_;
};

bool grad_enabled();

/// Builds an op result. Records inputs and the backward closure only when
/// recording is enabled and some input requires a gradient.
Var make_result(const char* op, Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

}  // namespace tfmoe::ad
