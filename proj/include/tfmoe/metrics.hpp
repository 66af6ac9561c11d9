// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "tfmoe/tensor.hpp"

namespace tfmoe::metrics {

/// Targets with |y| at or below this are left out of MAPE.
inline constexpr double kMapeMask = 1.0;

struct HorizonMetrics {
    std::size_t step = 0;  // 1-based forecast step
    double mae = 0.0;
    double rmse = 0.0;
    double mape = 0.0;  // percent; NaN when every target is masked
    std::size_t count = 0;
    std::size_t mape_count = 0;
};

struct MetricsReport {
    std::vector<HorizonMetrics> horizons;
    double mae_all = 0.0;  // MAE over every step
};

/// pred and truth are denormalized [samples, nodes, T]; each horizon reads only its own step.
MetricsReport compute_metrics(const Tensor& pred, const Tensor& truth, std::span<const std::size_t> horizon_steps,
                              double mape_mask = kMapeMask);

/// Mean of each error field across reports with identical horizon lists; counts are summed.
MetricsReport average(std::span<const MetricsReport> reports);

}  // namespace tfmoe::metrics
