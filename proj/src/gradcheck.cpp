// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "tfmoe/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace tfmoe {

double GradCheckReport::max_rel_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
}

GradCheckReport finite_difference_check(const std::function<ad::Var()>& loss, std::vector<GradCheckParam> params,
                                        double h, double tol, double floor) {
    for (auto& p : params) p.var.zero_grad();
    loss().backward();
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.push_back(p.var.has_grad() ? p.var.grad() : Tensor(p.var.shape()));

    GradCheckReport report;
    report.tolerance = tol;
    ad::NoGradGuard no_grad;
    for (std::size_t k = 0; k < params.size(); ++k) {
        GradCheckEntry entry;
        entry.name = params[k].name;
        Tensor& value = params[k].var.mutable_value();
        for (std::size_t i = 0; i < value.numel(); ++i) {
            const double saved = value[i];
            value[i] = saved + h;
            const double up = loss().item();
            value[i] = saved - h;
            const double down = loss().item();
            value[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[k][i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            if (rel > entry.max_rel_error || i == 0) {
                entry.max_rel_error = std::max(entry.max_rel_error, rel);
                entry.worst_index = i;
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        report.passed = report.passed && entry.max_rel_error <= tol;
        report.entries.push_back(std::move(entry));
    }
    for (auto& p : params) p.var.zero_grad();
    return report;
}

}  // namespace tfmoe
