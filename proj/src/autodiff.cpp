// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "tfmoe/autodiff.hpp"

#include <unordered_set>

namespace tfmoe::ad {

namespace {
thread_local bool t_grad_enabled = true;
}

Tensor& Node::ensure_grad() {
    if (!has_grad()) grad = Tensor(value.shape(), 0.0);
    return grad;
}

void Var::zero_grad() {
    if (node_ && node_->has_grad()) node_->grad.fill(0.0);
}

void Var::backward() const {
    if (!node_) throw std::logic_error("backward on empty Var");
    if (node_->value.numel() != 1) {
        throw DimensionError("backward requires a scalar head, got " + shape_str(node_->value.shape()));
    }
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->inputs.size()) {
            Node* child = n->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->backward || !n->has_grad()) continue;
        for (auto& in : n->inputs)
            if (in->requires_grad) in->ensure_grad();
        n->backward(*n);
    }
    for (Node* n : order) {
        if (n->inputs.empty() && n->has_grad() && !n->grad.all_finite()) {
            throw NumericError("non-finite gradient reached a leaf");
        }
    }
}

Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(std::move(n));
}

Var leaf(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
}

NoGradGuard::NoGradGuard() : saved_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = saved_; }

bool grad_enabled() { return t_grad_enabled; }

Var make_result(const char* op, Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
    if (!value.all_finite()) throw NumericError(std::string("non-finite output in ") + op);
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = op;
    bool any = false;
    for (const auto& v : inputs) any = any || v.requires_grad();
    if (any && t_grad_enabled) {
        n->requires_grad = true;
        n->inputs.reserve(inputs.size());
        for (auto& v : inputs) n->inputs.push_back(v.node());
        n->backward = std::move(backward);
    }
    return Var(std::move(n));
}

}  // namespace tfmoe::ad
