// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tfmoe/autodiff.hpp"

namespace tfmoe {

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 0.0;
    bool passed = true;
    double max_rel_error() const;
};

struct GradCheckParam {
    std::string name;
    ad::Var var;
};

/// Compares analytic gradients of a scalar loss with central differences.
///
/// rel = |analytic - numeric| / max(|analytic|, |numeric|, floor). The floor
/// keeps entries whose true gradient is ~0 from being judged on roundoff alone.
GradCheckReport finite_difference_check(const std::function<ad::Var()>& loss, std::vector<GradCheckParam> params,
                                        double h = 1e-5, double tol = 1e-4, double floor = 1e-3);

}  // namespace tfmoe
