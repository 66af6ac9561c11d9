// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "tfmoe/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "tfmoe/mlp.hpp"
#include "tfmoe/ops.hpp"

namespace tfmoe::cluster {

namespace {

const ParamFilter kAll = [](const std::string&, ParamGroup) { return true; };

double sq_dist(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return s;
}

void require_finite_loss(double loss, double last_finite, const char* stage, std::size_t epoch) {
    if (!std::isfinite(loss))
        throw NumericError(std::string(stage) + " diverged at epoch " + std::to_string(epoch) +
                           "; last finite loss " + std::to_string(last_finite));
}

}  // namespace

// ---- autoencoder ---------------------------------------------------------------------

ad::Var PretrainAutoencoder::encode(const ad::Var& weeks) const { return mlp_forward(params, "pre.enc", weeks); }

ad::Var PretrainAutoencoder::reconstruct(const ad::Var& weeks) const {
    return mlp_forward(params, "pre.dec", encode(weeks));
}

PretrainAutoencoder make_autoencoder(const AutoencoderShape& shape, std::uint64_t seed) {
    if (shape.input_dim == 0 || shape.latent_dim == 0) throw ConfigError("autoencoder dimensions must be positive");
    PretrainAutoencoder m;
    m.shape = shape;
    std::mt19937_64 rng(seed);
    const std::size_t enc[] = {shape.input_dim, shape.hidden1, shape.hidden2, shape.latent_dim};
    const std::size_t dec[] = {shape.latent_dim, shape.hidden2, shape.hidden1, shape.input_dim};
    add_mlp(m.params, "pre.enc", enc, ParamGroup::PretrainReconstructor, rng);
    add_mlp(m.params, "pre.dec", dec, ParamGroup::PretrainReconstructor, rng);
    return m;
}

ad::Var reconstruction_loss(const PretrainAutoencoder& model, const Tensor& weeks) {
    require_shape(weeks, {weeks.dim(0), model.shape.input_dim}, "week matrix");
    auto recon = model.reconstruct(ad::constant(weeks));
    return ad::scale(ad::sum_abs_error(recon, weeks), 1.0 / static_cast<double>(weeks.dim(0)));
}

void pretrain_autoencoder(PretrainAutoencoder& model, const Tensor& weeks, std::size_t epochs) {
    double last = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t e = 0; e < epochs; ++e) {
        ad::Var loss;
        try {
            loss = reconstruction_loss(model, weeks);
        } catch (const NumericError&) {
            require_finite_loss(std::numeric_limits<double>::infinity(), last, "autoencoder pretraining", e);
        }
        require_finite_loss(loss.item(), last, "autoencoder pretraining", e);
        last = loss.item();
        model.loss_history.push_back(last);
        loss.backward();
        adam_step(model.params, model.adam, kAll);
    }
}

Tensor encode_latents(const PretrainAutoencoder& model, const Tensor& weeks) {
    ad::NoGradGuard ng;
    return model.encode(ad::constant(weeks)).value();
}

// ---- k-means -------------------------------------------------------------------

namespace {

KMeansResult lloyd(const Tensor& x, Tensor centroids, const KMeansOptions& opts) {
    const std::size_t n = x.dim(0), d = x.dim(1), k = centroids.dim(0);
    KMeansResult r;
    r.labels.assign(n, 0);
    for (std::size_t it = 0; it < opts.max_iter; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double dd = sq_dist(x.data() + i * d, centroids.data() + c * d, d);
                if (dd < best) best = dd, r.labels[i] = static_cast<int>(c);
            }
        }
        Tensor next({k, d});
        std::vector<std::size_t> count(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = static_cast<std::size_t>(r.labels[i]);
            ++count[c];
            for (std::size_t j = 0; j < d; ++j) next.at(c, j) += x.at(i, j);
        }
        double shift = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t j = 0; j < d; ++j)
                next.at(c, j) = count[c] ? next.at(c, j) / static_cast<double>(count[c]) : centroids.at(c, j);
            shift = std::max(shift, std::sqrt(sq_dist(next.data() + c * d, centroids.data() + c * d, d)));
        }
        centroids = std::move(next);
        r.iterations = it + 1;
        if (shift < opts.tol) break;
    }
    r.inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
            const double dd = sq_dist(x.data() + i * d, centroids.data() + c * d, d);
            if (dd < best) best = dd, r.labels[i] = static_cast<int>(c);
        }
        r.inertia += best;
    }
    r.centroids = std::move(centroids);
    return r;
}

Tensor plus_plus_seed(const Tensor& x, std::size_t k, std::mt19937_64& rng) {
    const std::size_t n = x.dim(0), d = x.dim(1);
    Tensor c({k, d});
    std::uniform_int_distribution<std::size_t> first(0, n - 1);
    std::size_t pick = first(rng);
    std::copy_n(x.data() + pick * d, d, c.data());
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) dist[i] = sq_dist(x.data() + i * d, c.data(), d);
    for (std::size_t m = 1; m < k; ++m) {
        double total = 0.0;
        for (double v : dist) total += v;
        if (total <= 0.0) {
            pick = first(rng);  // all points coincide with chosen centroids
        } else {
            std::uniform_real_distribution<double> u(0.0, total);
            const double target = u(rng);
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += dist[i];
                if (acc >= target && dist[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        std::copy_n(x.data() + pick * d, d, c.data() + m * d);
        for (std::size_t i = 0; i < n; ++i) dist[i] = std::min(dist[i], sq_dist(x.data() + i * d, c.data() + m * d, d));
    }
    return c;
}

}  // namespace

KMeansResult kmeans(const Tensor& points, std::size_t k, std::uint64_t seed, const KMeansOptions& opts) {
    if (points.rank() != 2) throw DimensionError("kmeans expects [N, d] points");
    if (k == 0 || points.dim(0) < k)
        throw ConfigError("kmeans needs at least K=" + std::to_string(k) + " points, got " +
                          std::to_string(points.dim(0)));
    std::mt19937_64 rng(seed);
    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < std::max<std::size_t>(opts.restarts, 1); ++r) {
        auto res = lloyd(points, plus_plus_seed(points, k, rng), opts);
        if (res.inertia < best.inertia) best = std::move(res);
    }
    return best;
}

Tensor kmeans_init(const Tensor& latents, std::size_t k, std::uint64_t seed) {
    return kmeans(latents, k, seed).centroids;
}

// ---- assignments ------------------------------------------------------------------

Tensor soft_assign(const Tensor& latents, const Tensor& centroids) {
    ad::NoGradGuard ng;
    return ad::student_t_assign(ad::constant(latents), ad::constant(centroids)).value();
}

Tensor target_distribution(const Tensor& q) {
    if (q.rank() != 2) throw DimensionError("target_distribution expects [N, K]");
    const std::size_t n = q.dim(0), k = q.dim(1);
    std::vector<double> f(k, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < k; ++c) f[c] += q.at(i, c);
    Tensor p({n, k});
    for (std::size_t i = 0; i < n; ++i) {
        double z = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            p.at(i, c) = f[c] > 0.0 ? q.at(i, c) * q.at(i, c) / f[c] : 0.0;
            z += p.at(i, c);
        }
        for (std::size_t c = 0; c < k; ++c) p.at(i, c) /= z;
    }
    return p;
}

HardAssignment hard_assign(const Tensor& q) {
    if (q.rank() != 2) throw DimensionError("hard_assign expects [N, K]");
    const std::size_t n = q.dim(0), k = q.dim(1);
    HardAssignment h;
    h.groups.resize(k);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c)
            if (q.at(i, c) > q.at(i, best)) best = c;
        h.labels.push_back(static_cast<int>(best));
        h.groups[best].push_back(i);
    }
    for (std::size_t c = 0; c < k; ++c)
        if (h.groups[c].empty()) h.empty_groups.push_back(c);
    return h;
}

// ---- DEC --------------------------------------------------------------------------

ClusterState dec_train(PretrainAutoencoder& model, const Tensor& initial_centroids, const Tensor& weeks,
                       double alpha, std::size_t epochs) {
    if (alpha < 0.0) throw ConfigError("clustering weight alpha must be >= 0");
    require_shape(initial_centroids, {initial_centroids.dim(0), model.shape.latent_dim}, "centroids");
    ClusterState st;
    st.alpha = alpha;
    st.centroid_params.add("centroids", ParamGroup::PretrainReconstructor, initial_centroids);
    st.centroid_adam.lr = model.adam.lr;
    const auto& mu = st.centroid_params.get("centroids");
    double last = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t e = 0; e < epochs; ++e) {
        const Tensor p = target_distribution(soft_assign(encode_latents(model, weeks), mu.value()));
        ad::Var loss;
        try {
            auto q = ad::student_t_assign(model.encode(ad::constant(weeks)), mu);
            loss = ad::add(reconstruction_loss(model, weeks), ad::scale(ad::kl_to_target(p, q), alpha));
        } catch (const NumericError&) {
            require_finite_loss(std::numeric_limits<double>::infinity(), last, "clustering refinement", e);
        }
        last = loss.item();
        st.loss_history.push_back(last);
        model.loss_history.push_back(last);
        loss.backward();
        adam_step(model.params, model.adam, kAll);
        adam_step(st.centroid_params, st.centroid_adam, kAll);
    }
    st.centroids = mu.value();
    st.q = soft_assign(encode_latents(model, weeks), st.centroids);
    st.p = target_distribution(st.q);
    st.assignment = hard_assign(st.q);
    return st;
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size()) throw DimensionError("adjusted_rand_index: label vectors differ in length");
    const std::size_t n = a.size();
    if (n < 2) return 1.0;
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> ra, rb;
    for (std::size_t i = 0; i < n; ++i) {
        joint[{a[i], b[i]}] += 1.0;
        ra[a[i]] += 1.0;
        rb[b[i]] += 1.0;
    }
    auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
    double sum_ij = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (const auto& [key, v] : joint) sum_ij += c2(v);
    for (const auto& [key, v] : ra) sum_a += c2(v);
    for (const auto& [key, v] : rb) sum_b += c2(v);
    const double expected = sum_a * sum_b / c2(static_cast<double>(n));
    const double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) return 1.0;  // both labelings trivial
    return (sum_ij - expected) / (max_index - expected);
}

}  // namespace tfmoe::cluster
