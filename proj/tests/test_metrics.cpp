// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "tfmoe/metrics.hpp"

using namespace tfmoe;
using namespace tfmoe::metrics;

TEST(Metrics, WorkedExample) {
    const Tensor pred({1, 2, 1}, {2.0, 4.0}), truth({1, 2, 1}, {1.0, 2.0});
    const std::vector<std::size_t> h{1};
    // |y| = 1 sits on the mask, so only the second entry enters MAPE
    auto r = compute_metrics(pred, truth, h, 0.5);
    EXPECT_DOUBLE_EQ(r.horizons[0].mae, 1.5);
    EXPECT_DOUBLE_EQ(r.horizons[0].rmse, std::sqrt(2.5));
    EXPECT_DOUBLE_EQ(r.horizons[0].mape, 100.0);
    auto masked = compute_metrics(pred, truth, h);
    EXPECT_EQ(masked.horizons[0].mape_count, 1u);
    EXPECT_DOUBLE_EQ(masked.horizons[0].mape, 100.0);
}

TEST(Metrics, AllMaskedMapeIsNaN) {
    const Tensor pred({1, 2, 1}, {0.3, 0.1}), truth({1, 2, 1}, {0.0, 0.5});
    const std::vector<std::size_t> h{1};
    auto r = compute_metrics(pred, truth, h);
    EXPECT_TRUE(std::isnan(r.horizons[0].mape));
    EXPECT_EQ(r.horizons[0].count, 2u);
}

TEST(Metrics, MatchesScalarLoopOracle) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> d(50.0, 30.0);
    const std::size_t S = 7, N = 5, T = 12;
    Tensor pred({S, N, T}), truth({S, N, T});
    for (auto& v : pred.values()) v = d(rng);
    for (auto& v : truth.values()) v = d(rng);
    const std::vector<std::size_t> hs{3, 6, 12};
    auto r = compute_metrics(pred, truth, hs);
    for (std::size_t k = 0; k < hs.size(); ++k) {
        double a = 0, q = 0, pc = 0;
        std::size_t n = 0, m = 0;
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t i = 0; i < N; ++i) {
                const std::size_t idx = (s * N + i) * T + hs[k] - 1;
                const double p = pred[idx], y = truth[idx];
                a += std::abs(p - y);
                q += (p - y) * (p - y);
                if (std::abs(y) > kMapeMask) {
                    pc += std::abs(p - y) / std::abs(y);
                    ++m;
                }
                ++n;
            }
        EXPECT_NEAR(r.horizons[k].mae, a / n, 1e-12);
        EXPECT_NEAR(r.horizons[k].rmse, std::sqrt(q / n), 1e-12);
        EXPECT_NEAR(r.horizons[k].mape, 100.0 * pc / m, 1e-12);
        EXPECT_EQ(r.horizons[k].step, hs[k]);
    }
}

TEST(Metrics, HorizonReadsOnlyItsOwnStep) {
    Tensor pred({2, 3, 4}, 0.0), truth({2, 3, 4}, 0.0);
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t n = 0; n < 3; ++n) pred[(s * 3 + n) * 4 + 2] = 9.0;
    const std::vector<std::size_t> hs{1, 2, 3, 4};
    auto r = compute_metrics(pred, truth, hs);
    EXPECT_EQ(r.horizons[0].mae, 0.0);
    EXPECT_EQ(r.horizons[1].mae, 0.0);
    EXPECT_EQ(r.horizons[2].mae, 9.0);
    EXPECT_EQ(r.horizons[3].mae, 0.0);
    EXPECT_DOUBLE_EQ(r.mae_all, 9.0 / 4.0);
}

TEST(Metrics, RejectsBadInput) {
    const Tensor a({1, 1, 3}), b({1, 1, 2});
    const std::vector<std::size_t> h{1}, h0{0}, h4{4};
    EXPECT_THROW(compute_metrics(a, b, h), DimensionError);
    EXPECT_THROW(compute_metrics(a, a, h0), ConfigError);
    EXPECT_THROW(compute_metrics(a, a, h4), ConfigError);
}

TEST(Metrics, AverageOfReports) {
    MetricsReport a, b;
    a.horizons = {{3, 1.0, 2.0, 10.0, 4, 4}};
    b.horizons = {{3, 3.0, 4.0, 20.0, 6, 5}};
    a.mae_all = 1.0;
    b.mae_all = 2.0;
    const std::vector<MetricsReport> rs{a, b};
    auto m = average(rs);
    EXPECT_DOUBLE_EQ(m.horizons[0].mae, 2.0);
    EXPECT_DOUBLE_EQ(m.horizons[0].rmse, 3.0);
    EXPECT_DOUBLE_EQ(m.horizons[0].mape, 15.0);
    EXPECT_DOUBLE_EQ(m.mae_all, 1.5);
    EXPECT_EQ(m.horizons[0].count, 10u);
    EXPECT_EQ(m.horizons[0].mape_count, 9u);
}
