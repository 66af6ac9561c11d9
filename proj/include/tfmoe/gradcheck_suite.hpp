// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

// Finite-difference checks over every op and the composed model losses.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tfmoe/gradcheck.hpp"

namespace tfmoe {

struct GradCheckCase {
    std::string name;
    GradCheckReport report;
};

struct GradCheckSuiteOptions {
    std::uint64_t seed = 1;
    double h = 1e-5;
    double tol = 1e-4;
    double floor = 1e-3;
};

std::vector<std::string> gradcheck_case_names();

/// Runs the named cases (all when empty). Throws ConfigError for an unknown name.
std::vector<GradCheckCase> run_gradcheck_suite(const GradCheckSuiteOptions& opts = {},
                                               const std::vector<std::string>& only = {});

}  // namespace tfmoe
