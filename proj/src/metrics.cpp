// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "tfmoe/metrics.hpp"

#include <cmath>
#include <limits>

namespace tfmoe::metrics {

MetricsReport compute_metrics(const Tensor& pred, const Tensor& truth, std::span<const std::size_t> horizon_steps,
                              double mape_mask) {
    if (pred.shape() != truth.shape()) throw DimensionError("metrics: " + shape_str(pred.shape()) + " vs " +
                                                           shape_str(truth.shape()));
    if (pred.rank() != 3) throw DimensionError("metrics expect [samples, nodes, T]");
    const std::size_t S = pred.dim(0), N = pred.dim(1), T = pred.dim(2);
    MetricsReport r;
    for (std::size_t h : horizon_steps) {
        if (h == 0 || h > T) throw ConfigError("horizon step " + std::to_string(h) + " outside 1.." + std::to_string(T));
        HorizonMetrics m;
        m.step = h;
        double abs_sum = 0.0, sq_sum = 0.0, pct_sum = 0.0;
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t n = 0; n < N; ++n) {
                const std::size_t i = (s * N + n) * T + (h - 1);
                const double d = pred[i] - truth[i];
                abs_sum += std::abs(d);
                sq_sum += d * d;
                if (std::abs(truth[i]) > mape_mask) {
                    pct_sum += std::abs(d) / std::abs(truth[i]);
                    ++m.mape_count;
                }
                ++m.count;
            }
        const double c = static_cast<double>(m.count);
        m.mae = m.count ? abs_sum / c : 0.0;
        m.rmse = m.count ? std::sqrt(sq_sum / c) : 0.0;
        m.mape = m.mape_count ? 100.0 * pct_sum / static_cast<double>(m.mape_count)
                              : std::numeric_limits<double>::quiet_NaN();
        r.horizons.push_back(m);
    }
    double all = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) all += std::abs(pred[i] - truth[i]);
    r.mae_all = pred.numel() ? all / static_cast<double>(pred.numel()) : 0.0;
    return r;
}

MetricsReport average(std::span<const MetricsReport> reports) {
    MetricsReport out;
    if (reports.empty()) return out;
    out.horizons = reports[0].horizons;
    const double n = static_cast<double>(reports.size());
    for (auto& h : out.horizons) {
        h.mae = h.rmse = h.mape = 0.0;
        h.count = h.mape_count = 0;
    }
    for (const auto& r : reports) {
        if (r.horizons.size() != out.horizons.size()) throw DimensionError("average: horizon lists differ");
        for (std::size_t i = 0; i < r.horizons.size(); ++i) {
            out.horizons[i].mae += r.horizons[i].mae / n;
            out.horizons[i].rmse += r.horizons[i].rmse / n;
            out.horizons[i].mape += r.horizons[i].mape / n;
            out.horizons[i].count += r.horizons[i].count;
            out.horizons[i].mape_count += r.horizons[i].mape_count;
        }
        out.mae_all += r.mae_all / n;
    }
    return out;
}

}  // namespace tfmoe::metrics
