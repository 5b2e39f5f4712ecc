// Copyright 2026 The lfir Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

// Diagonal-covariance Gaussian mixtures: EM fitting, responsibilities, and the
// closed-form divergences used by the model-based retrieval baselines.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "lfir/clustering.hpp"
#include "lfir/error.hpp"
#include "lfir/featurestore.hpp"
#include "lfir/parallel.hpp"

namespace lfir {

struct Gaussian {
    std::vector<double> mean;
    std::vector<double> variances;

    std::size_t dimension() const noexcept { return mean.size(); }
    friend bool operator==(const Gaussian&, const Gaussian&) = default;
};

class GaussianMixture {
public:
    GaussianMixture() = default;
    GaussianMixture(std::vector<double> weights, std::vector<Gaussian> components)
        : weights_(std::move(weights)), components_(std::move(components)) {
        if (components_.empty()) throw std::invalid_argument("GaussianMixture: at least one component required");
        if (weights_.size() != components_.size()) throw std::invalid_argument("GaussianMixture: weight count != component count");
        double total = 0.0;
        for (double w : weights_) {
            if (!(w > 0.0) || !std::isfinite(w)) throw std::invalid_argument("GaussianMixture: weights must be positive");
            total += w;
        }
        if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("GaussianMixture: weights must sum to 1");
        const std::size_t d = components_.front().dimension();
        if (d == 0) throw std::invalid_argument("GaussianMixture: zero dimension");
        for (const auto& g : components_) {
            if (g.mean.size() != d || g.variances.size() != d) throw DimensionError("GaussianMixture: inconsistent dimensions");
            for (double v : g.variances)
                if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("GaussianMixture: variances must be positive");
            for (double m : g.mean)
                if (!std::isfinite(m)) throw std::invalid_argument("GaussianMixture: non-finite mean");
        }
        log_weights_.reserve(weights_.size());
        for (double w : weights_) log_weights_.push_back(std::log(w));
    }

    static GaussianMixture single(Gaussian g) { return GaussianMixture({1.0}, {std::move(g)}); }

    std::size_t component_count() const noexcept { return components_.size(); }
    std::size_t dimension() const noexcept { return components_.empty() ? 0 : components_.front().dimension(); }
    const std::vector<double>& weights() const noexcept { return weights_; }
    const std::vector<double>& log_weights() const noexcept { return log_weights_; }
    const std::vector<Gaussian>& components() const noexcept { return components_; }
    const Gaussian& operator[](std::size_t q) const { return components_[q]; }

    friend bool operator==(const GaussianMixture& a, const GaussianMixture& b) {
        return a.weights_ == b.weights_ && a.components_ == b.components_;
    }

private:
    std::vector<double> weights_;
    std::vector<double> log_weights_;
    std::vector<Gaussian> components_;
};

struct EmConfig {
    std::size_t max_iterations = 200;
    /// Convergence threshold on the change of mean log-likelihood per vector.
    double tolerance = 1e-6;
    /// Variance floor as a fraction of the per-dimension data variance.
    double variance_floor = 1e-6;
    /// Absolute lower bound on any variance (covers constant dimensions).
    double min_variance = 1e-10;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
};

inline double log_sum_exp(std::span<const double> values) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : values) m = std::max(m, v);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double v : values) s += std::exp(v - m);
    return m + std::log(s);
}

inline double log_gaussian(const Gaussian& g, std::span<const double> x) {
    require_same_dimension(x.size(), g.dimension(), "log_gaussian");
    constexpr double log_two_pi = 1.8378770664093454835606594728112;  // log(2*pi)
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - g.mean[i];
        s += log_two_pi + std::log(g.variances[i]) + d * d / g.variances[i];
    }
    return -0.5 * s;
}

/// log(pi_q) + log N(x | mu_q, Sigma_q) for every component.
inline std::vector<double> component_log_terms(const GaussianMixture& m, std::span<const double> x) {
    require_same_dimension(x.size(), m.dimension(), "GaussianMixture");
    std::vector<double> terms(m.component_count());
    for (std::size_t q = 0; q < terms.size(); ++q) terms[q] = m.log_weights()[q] + log_gaussian(m[q], x);
    return terms;
}

/// log sum_q pi_q N(x | mu_q, Sigma_q), evaluated with log-sum-exp.
inline double log_pdf(const GaussianMixture& m, std::span<const double> x) {
    const auto terms = component_log_terms(m, x);
    return log_sum_exp(terms);
}

/// Posterior component probabilities gamma_q(x).
inline std::vector<double> responsibilities(const GaussianMixture& m, std::span<const double> x) {
    auto terms = component_log_terms(m, x);
    const double norm = log_sum_exp(terms);
    for (auto& t : terms) t = std::exp(t - norm);
    return terms;
}

/// Closed-form KL(p || q) between diagonal Gaussians.
inline double kl_gaussian(const Gaussian& p, const Gaussian& q) {
    require_same_dimension(p.dimension(), q.dimension(), "kl_gaussian");
    double s = 0.0;
    for (std::size_t i = 0; i < p.dimension(); ++i) {
        const double d = q.mean[i] - p.mean[i];
        s += 0.5 * (p.variances[i] / q.variances[i] + d * d / q.variances[i] - 1.0 + std::log(q.variances[i] / p.variances[i]));
    }
    return std::max(0.0, s);
}

/// log of the integral of N(x|a) N(x|b) dx = log N(mu_a | mu_b, Sigma_a + Sigma_b).
inline double log_gaussian_product_integral(const Gaussian& a, const Gaussian& b) {
    require_same_dimension(a.dimension(), b.dimension(), "gaussian_product_integral");
    constexpr double log_two_pi = 1.8378770664093454835606594728112;
    double s = 0.0;
    for (std::size_t i = 0; i < a.dimension(); ++i) {
        const double v = a.variances[i] + b.variances[i];
        const double d = a.mean[i] - b.mean[i];
        s += log_two_pi + std::log(v) + d * d / v;
    }
    return -0.5 * s;
}

inline double gaussian_product_integral(const Gaussian& a, const Gaussian& b) {
    return std::exp(log_gaussian_product_integral(a, b));
}

/// log S_pq = log of the integral of p(x) q(x) dx for two mixtures. Terms are summed in
/// sorted order so that log_overlap(p, q) == log_overlap(q, p) bit for bit.
inline double log_overlap(const GaussianMixture& p, const GaussianMixture& q) {
    require_same_dimension(p.dimension(), q.dimension(), "mixture overlap");
    std::vector<double> terms;
    terms.reserve(p.component_count() * q.component_count());
    for (std::size_t i = 0; i < p.component_count(); ++i)
        for (std::size_t j = 0; j < q.component_count(); ++j)
            terms.push_back(p.log_weights()[i] + q.log_weights()[j] + log_gaussian_product_integral(p[i], q[j]));
    std::sort(terms.begin(), terms.end());
    return log_sum_exp(terms);
}

inline double overlap(const GaussianMixture& p, const GaussianMixture& q) { return std::exp(log_overlap(p, q)); }

/// C2 = -log(2 S_pq / (S_pp + S_qq)), computed relative to max(S_pp, S_qq) to avoid overflow.
inline double c2_distance(const GaussianMixture& p, const GaussianMixture& q) {
    const double lpq = log_overlap(p, q);
    const double lpp = log_overlap(p, p);
    const double lqq = log_overlap(q, q);
    const double m = std::max(lpp, lqq);
    const double ratio = 2.0 * std::exp(lpq - m) / (std::exp(lpp - m) + std::exp(lqq - m));
    return std::max(0.0, -std::log(ratio));
}

/// KL between single-component models; mixtures with Q > 1 have no closed form here.
inline double kl_divergence(const GaussianMixture& p, const GaussianMixture& q) {
    if (p.component_count() != 1 || q.component_count() != 1) {
        throw UnsupportedError("KL divergence is only available for single-Gaussian models");
    }
    return kl_gaussian(p[0], q[0]);
}

struct GmmFit {
    GaussianMixture mixture;
    /// Mean log-likelihood per vector measured at every E-step.
    std::vector<double> log_likelihood_trace;
    std::size_t iterations = 0;
    bool converged = false;
    /// Components that emptied and were reseeded from the worst-fit vector.
    std::size_t reseeded = 0;
};

/// EM for a Q-component diagonal mixture, initialised from k-means (same seed).
inline GmmFit fit_gmm_traced(PointsView points, std::size_t Q, const EmConfig& cfg = {}) {
    const std::size_t n = points.size();
    const std::size_t d = points.dim;
    if (Q == 0) throw std::invalid_argument("fit_gmm: Q must be positive");
    if (n < Q || count_distinct(points, Q) < Q) throw std::invalid_argument("fit_gmm: fewer distinct vectors than components");

    std::vector<double> global_mean(d, 0.0), global_var(d, 0.0), floor(d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < d; ++t) global_mean[t] += points[i][t];
    for (auto& m : global_mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < d; ++t) {
            const double x = points[i][t] - global_mean[t];
            global_var[t] += x * x;
        }
    for (std::size_t t = 0; t < d; ++t) {
        global_var[t] /= static_cast<double>(n);
        floor[t] = std::max(cfg.variance_floor * global_var[t], cfg.min_variance);
    }

    KMeansConfig km;
    km.restarts = 1;
    km.max_iterations = 100;
    const auto init = kmeans(points, Q, cfg.seed, km);
    std::vector<double> weights(Q, 0.0);
    std::vector<Gaussian> comps(Q, Gaussian{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)});
    for (std::size_t q = 0; q < Q; ++q) comps[q].mean = init.centroids[q];
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t q = init.assignments[i];
        weights[q] += 1.0;
        for (std::size_t t = 0; t < d; ++t) {
            const double x = points[i][t] - comps[q].mean[t];
            comps[q].variances[t] += x * x;
        }
    }
    for (std::size_t q = 0; q < Q; ++q) {
        for (std::size_t t = 0; t < d; ++t) comps[q].variances[t] = std::max(comps[q].variances[t] / weights[q], floor[t]);
        weights[q] /= static_cast<double>(n);
    }

    GmmFit fit;
    GaussianMixture model(weights, comps);
    std::vector<double> resp(n * Q), point_ll(n);
    for (std::size_t iter = 0; iter < cfg.max_iterations; ++iter) {
        parallel_for(n, cfg.threads, [&](std::size_t i) {
            auto terms = component_log_terms(model, points[i]);
            const double norm = log_sum_exp(terms);
            point_ll[i] = norm;
            for (std::size_t q = 0; q < Q; ++q) resp[i * Q + q] = std::exp(terms[q] - norm);
        });
        double ll = 0.0;
        for (double v : point_ll) ll += v;
        ll /= static_cast<double>(n);
        const bool done = !fit.log_likelihood_trace.empty() && ll - fit.log_likelihood_trace.back() < cfg.tolerance;
        fit.log_likelihood_trace.push_back(ll);
        fit.iterations = iter + 1;
        if (done) {
            fit.converged = true;
            break;
        }

        std::vector<double> nk(Q, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t q = 0; q < Q; ++q) nk[q] += resp[i * Q + q];
        for (std::size_t q = 0; q < Q; ++q) {
            auto& g = comps[q];
            if (nk[q] < 1e-10 * static_cast<double>(n)) {
                std::size_t worst = 0;
                for (std::size_t i = 1; i < n; ++i)
                    if (point_ll[i] < point_ll[worst]) worst = i;
                g.mean.assign(points[worst].begin(), points[worst].end());
                for (std::size_t t = 0; t < d; ++t) g.variances[t] = std::max(global_var[t], floor[t]);
                weights[q] = 1.0 / static_cast<double>(n);
                point_ll[worst] = std::numeric_limits<double>::infinity();
                ++fit.reseeded;
                continue;
            }
            std::fill(g.mean.begin(), g.mean.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const double w = resp[i * Q + q];
                for (std::size_t t = 0; t < d; ++t) g.mean[t] += w * points[i][t];
            }
            for (auto& m : g.mean) m /= nk[q];
            std::fill(g.variances.begin(), g.variances.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const double w = resp[i * Q + q];
                for (std::size_t t = 0; t < d; ++t) {
                    const double x = points[i][t] - g.mean[t];
                    g.variances[t] += w * x * x;
                }
            }
            for (std::size_t t = 0; t < d; ++t) g.variances[t] = std::max(g.variances[t] / nk[q], floor[t]);
            weights[q] = nk[q] / static_cast<double>(n);
        }
        double total = 0.0;
        for (double w : weights) total += w;
        for (auto& w : weights) w /= total;
        model = GaussianMixture(weights, comps);
    }
    fit.mixture = std::move(model);
    return fit;
}

inline GaussianMixture fit_gmm(PointsView points, std::size_t Q, const EmConfig& cfg = {}) {
    return fit_gmm_traced(points, Q, cfg).mixture;
}

inline GaussianMixture fit_gmm(const LocalFeatureSet& set, std::size_t Q, const EmConfig& cfg = {}) {
    return fit_gmm(PointsView{set.data(), set.dimension()}, Q, cfg);
}

/// Local vectors of every image pooled in ascending image-id order.
inline std::vector<double> pool_vectors(const FeatureDatabase& db) {
    std::vector<std::size_t> order(db.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return db[a].image_id() < db[b].image_id(); });
    std::vector<double> pooled;
    pooled.reserve(db.total_vectors() * db.dimension());
    for (std::size_t i : order) pooled.insert(pooled.end(), db[i].data().begin(), db[i].data().end());
    return pooled;
}

/// Universal background model: one mixture over the pooled local vectors of the database.
inline GaussianMixture fit_ubm(const FeatureDatabase& db, std::size_t Q, const EmConfig& cfg = {}) {
    if (db.empty()) throw std::invalid_argument("fit_ubm: empty database");
    const auto pooled = pool_vectors(db);
    return fit_gmm(PointsView{pooled, db.dimension()}, Q, cfg);
}

// ---------------------------------------------------------------------------
// Text format: `GMM 1 <d> <Q>`, then per component a weight line, a mean line, a variance line.

inline void write_gmm(const GaussianMixture& m, std::ostream& out) {
    out << "GMM 1 " << m.dimension() << ' ' << m.component_count() << '\n';
    auto row = [&out](const std::vector<double>& v) {
        for (std::size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << format_real(v[i]);
        out << '\n';
    };
    for (std::size_t q = 0; q < m.component_count(); ++q) {
        out << format_real(m.weights()[q]) << '\n';
        row(m[q].mean);
        row(m[q].variances);
    }
}

inline GaussianMixture read_gmm(std::istream& in) {
    LineReader reader(in);
    std::string line;
    if (!reader.next(line)) throw FormatError("missing GMM header", 1);
    auto h = split_ws(line);
    if (h.size() != 4 || h[0] != "GMM" || h[1] != "1") throw FormatError("malformed header, expected 'GMM 1 <d> <Q>'", reader.line_number());
    const std::size_t d = parse_count(h[2], reader.line_number());
    const std::size_t Q = parse_count(h[3], reader.line_number());
    if (d == 0 || Q == 0) throw FormatError("dimension and component count must be positive", reader.line_number());
    auto reals = [&](std::size_t count) {
        if (!reader.next(line)) throw FormatError("unexpected end of GMM file", reader.line_number());
        auto tok = split_ws(line);
        if (tok.size() != count) throw FormatError("expected " + std::to_string(count) + " values", reader.line_number());
        std::vector<double> v;
        for (auto t : tok) v.push_back(parse_real(t, reader.line_number()));
        return v;
    };
    std::vector<double> weights;
    std::vector<Gaussian> comps;
    for (std::size_t q = 0; q < Q; ++q) {
        weights.push_back(reals(1).front());
        Gaussian g;
        g.mean = reals(d);
        g.variances = reals(d);
        comps.push_back(std::move(g));
    }
    if (reader.next(line)) throw FormatError("trailing data after GMM components", reader.line_number());
    try {
        return GaussianMixture(std::move(weights), std::move(comps));
    } catch (const std::invalid_argument& e) {
        throw FormatError(e.what());
    }
}

inline void save_gmm(const GaussianMixture& m, const std::string& path) {
    auto out = open_output(path);
    write_gmm(m, out);
    finish_output(out, path);
}

inline GaussianMixture load_gmm(const std::string& path) {
    auto in = open_input(path);
    return read_gmm(in);
}

}  // namespace lfir
