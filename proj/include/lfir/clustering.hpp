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

// k-means over vectors, k-medoids over an arbitrary dissimilarity, and affinity
// propagation over a similarity matrix whose diagonal carries the preferences.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include "lfir/featurestore.hpp"
#include "lfir/matrix.hpp"

namespace lfir {

/// Row-major view over n points of dimension dim.
struct PointsView {
    std::span<const double> data;
    std::size_t dim = 1;

    std::size_t size() const noexcept { return dim ? data.size() / dim : 0; }
    std::span<const double> operator[](std::size_t i) const { return data.subspan(i * dim, dim); }
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    require_same_dimension(a.size(), b.size(), "squared_distance");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

struct ClusteringResult {
    std::vector<std::size_t> assignments;
    /// k-means: centroid vectors.
    std::vector<FeatureVector> centroids;
    /// k-medoids / affinity propagation: item indices (ascending).
    std::vector<std::size_t> exemplars;
    double objective = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
    /// Objective after every assignment step, in iteration order.
    std::vector<double> objective_trace;

    std::size_t cluster_count() const noexcept { return centroids.empty() ? exemplars.size() : centroids.size(); }
};

enum class InitMethod { PlusPlus, Random };

struct KMeansConfig {
    std::size_t max_iterations = 300;
    /// Independent seeded restarts; the lowest objective wins (earliest on ties).
    std::size_t restarts = 8;
    InitMethod init = InitMethod::PlusPlus;
};

/// Concatenation of the set's vectors in stored order (length d*n).
inline FeatureVector supervector(const LocalFeatureSet& set) {
    return FeatureVector(set.data().begin(), set.data().end());
}

inline std::size_t count_distinct(PointsView points, std::size_t stop_at) {
    std::set<std::vector<double>> seen;
    for (std::size_t i = 0; i < points.size() && seen.size() < stop_at; ++i) {
        auto row = points[i];
        seen.emplace(row.begin(), row.end());
    }
    return seen.size();
}

namespace detail {

/// Seeds k distinct items. PlusPlus draws each next item with probability proportional
/// to weight(distance to nearest chosen); Random draws uniformly among unchosen items.
template <typename Dist, typename Weight>
std::vector<std::size_t> seed_items(std::size_t n, std::size_t k, InitMethod method, std::mt19937_64& rng, Dist&& dist,
                                    Weight&& weight) {
    std::vector<std::size_t> chosen;
    std::vector<char> taken(n, 0);
    std::uniform_int_distribution<std::size_t> first(0, n - 1);
    chosen.push_back(first(rng));
    taken[chosen.back()] = 1;
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    while (chosen.size() < k) {
        const std::size_t last = chosen.back();
        std::vector<double> w(n, 0.0);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) continue;
            nearest[i] = std::min(nearest[i], dist(i, last));
            w[i] = method == InitMethod::PlusPlus ? weight(nearest[i]) : 1.0;
            total += w[i];
        }
        if (total <= 0.0) {
            for (std::size_t i = 0; i < n; ++i) w[i] = taken[i] ? 0.0 : 1.0;
        }
        std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
        const std::size_t next = pick(rng);
        chosen.push_back(next);
        taken[next] = 1;
    }
    return chosen;
}

inline ClusteringResult kmeans_single(PointsView points, std::size_t k, std::mt19937_64& rng, const KMeansConfig& cfg) {
    const std::size_t n = points.size();
    const std::size_t dim = points.dim;
    auto seeds = seed_items(
        n, k, cfg.init, rng, [&](std::size_t a, std::size_t b) { return squared_distance(points[a], points[b]); },
        [](double d2) { return d2; });
    if (cfg.init == InitMethod::Random) {
        // uniform draws may land on duplicate values; replace them with unused distinct points
        std::set<std::vector<double>> seen;
        for (auto& s : seeds) {
            auto row = points[s];
            if (seen.emplace(row.begin(), row.end()).second) continue;
            for (std::size_t i = 0; i < n; ++i) {
                auto r = points[i];
                if (seen.emplace(r.begin(), r.end()).second) {
                    s = i;
                    break;
                }
            }
        }
    }
    ClusteringResult res;
    res.centroids.resize(k);
    for (std::size_t c = 0; c < k; ++c) {
        auto row = points[seeds[c]];
        res.centroids[c].assign(row.begin(), row.end());
    }
    res.assignments.assign(n, k);  // sentinel: nothing assigned yet
    std::vector<double> point_cost(n, 0.0);

    for (std::size_t iter = 0; iter < cfg.max_iterations; ++iter) {
        bool changed = false;
        double j = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = squared_distance(points[i], res.centroids[0]);
            for (std::size_t c = 1; c < k; ++c) {
                const double d = squared_distance(points[i], res.centroids[c]);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (res.assignments[i] != best) changed = true;
            res.assignments[i] = best;
            point_cost[i] = best_d;
            j += best_d;
        }
        res.objective_trace.push_back(j);
        res.objective = j;
        res.iterations = iter + 1;
        if (!changed) {
            res.converged = true;
            break;
        }
        std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto row = points[i];
            auto& s = sums[res.assignments[i]];
            for (std::size_t t = 0; t < dim; ++t) s[t] += row[t];
            ++counts[res.assignments[i]];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                // empty cluster: reseed with the point farthest from its own centroid
                std::size_t far = 0;
                for (std::size_t i = 1; i < n; ++i)
                    if (point_cost[i] > point_cost[far]) far = i;
                auto row = points[far];
                res.centroids[c].assign(row.begin(), row.end());
                point_cost[far] = 0.0;
                continue;
            }
            for (std::size_t t = 0; t < dim; ++t) res.centroids[c][t] = sums[c][t] / static_cast<double>(counts[c]);
        }
    }
    return res;
}

}  // namespace detail

/// Lloyd's k-means with squared Euclidean objective. Each restart is seeded from `seed`.
inline ClusteringResult kmeans(PointsView points, std::size_t k, std::uint64_t seed, const KMeansConfig& cfg = {}) {
    if (k == 0) throw std::invalid_argument("kmeans: k must be positive");
    if (points.size() < k || count_distinct(points, k) < k) {
        throw std::invalid_argument("kmeans: fewer distinct vectors than k");
    }
    std::mt19937_64 rng(seed);
    std::optional<ClusteringResult> best;
    for (std::size_t r = 0; r < std::max<std::size_t>(1, cfg.restarts); ++r) {
        auto res = detail::kmeans_single(points, k, rng, cfg);
        if (!best || res.objective < best->objective) best = std::move(res);
    }
    return std::move(*best);
}

inline ClusteringResult kmeans(const std::vector<FeatureVector>& vectors, std::size_t k, std::uint64_t seed,
                               std::size_t max_iterations = 300) {
    if (vectors.empty()) throw std::invalid_argument("kmeans: no vectors");
    std::vector<double> flat;
    const std::size_t dim = vectors.front().size();
    for (const auto& v : vectors) {
        require_same_dimension(v.size(), dim, "kmeans");
        flat.insert(flat.end(), v.begin(), v.end());
    }
    KMeansConfig cfg;
    cfg.max_iterations = max_iterations;
    return kmeans(PointsView{flat, dim}, k, seed, cfg);
}

struct KMedoidsConfig {
    std::size_t max_iterations = 100;
    std::size_t restarts = 8;
    InitMethod init = InitMethod::PlusPlus;
};

namespace detail {

inline ClusteringResult kmedoids_single(const SquareMatrix& d, std::size_t k, std::mt19937_64& rng,
                                        const KMedoidsConfig& cfg) {
    const std::size_t n = d.size();
    auto medoids = seed_items(
        n, k, cfg.init, rng, [&](std::size_t a, std::size_t b) { return d(a, b); }, [](double x) { return x * x; });
    std::sort(medoids.begin(), medoids.end());

    ClusteringResult res;
    res.assignments.assign(n, 0);
    for (std::size_t iter = 0; iter < cfg.max_iterations; ++iter) {
        double cost = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < k; ++c)
                if (d(i, medoids[c]) < d(i, medoids[best])) best = c;
            res.assignments[i] = best;
            cost += d(i, medoids[best]);
        }
        res.objective_trace.push_back(cost);
        res.objective = cost;
        res.iterations = iter + 1;

        std::vector<std::vector<std::size_t>> members(k);
        for (std::size_t i = 0; i < n; ++i) members[res.assignments[i]].push_back(i);
        auto updated = medoids;
        for (std::size_t c = 0; c < k; ++c) {
            if (members[c].empty()) continue;
            auto member_sum = [&](std::size_t cand) {
                double s = 0.0;
                for (std::size_t j : members[c]) s += d(cand, j);
                return s;
            };
            // The incumbent stays unless beaten by more than rounding noise, so
            // equal-cost swaps cannot make the recorded cost creep upwards.
            const bool incumbent = std::binary_search(members[c].begin(), members[c].end(), medoids[c]);
            double best_sum = incumbent ? member_sum(medoids[c]) : std::numeric_limits<double>::infinity();
            const double margin = incumbent ? 1e-12 * best_sum : 0.0;
            for (std::size_t cand : members[c]) {  // members are in ascending index order
                const double s = member_sum(cand);
                if (s < best_sum - margin) {
                    best_sum = s;
                    updated[c] = cand;
                }
            }
        }
        std::vector<std::size_t> order(k);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return updated[a] < updated[b]; });
        std::vector<std::size_t> sorted(k);
        for (std::size_t c = 0; c < k; ++c) sorted[c] = updated[order[c]];
        if (sorted == medoids) {
            res.converged = true;
            break;
        }
        medoids = std::move(sorted);
    }
    res.exemplars = medoids;
    return res;
}

}  // namespace detail

/// Alternating k-medoids over the full dissimilarity matrix (symmetric, zero diagonal).
/// Each cluster's medoid minimises the summed distance to its members; the current medoid
/// wins ties, otherwise the lowest index does.
inline ClusteringResult kmedoids(const SquareMatrix& distances, std::size_t k, std::uint64_t seed,
                                 const KMedoidsConfig& cfg = {}) {
    const std::size_t n = distances.size();
    if (k == 0 || k > n) throw std::invalid_argument("kmedoids: k must be in [1, item_count]");
    std::mt19937_64 rng(seed);
    std::optional<ClusteringResult> best;
    for (std::size_t r = 0; r < std::max<std::size_t>(1, cfg.restarts); ++r) {
        auto res = detail::kmedoids_single(distances, k, rng, cfg);
        if (!best || res.objective < best->objective) best = std::move(res);
    }
    return std::move(*best);
}

/// Oracle form: distances are materialised once into a matrix.
template <typename DistanceOracle>
ClusteringResult kmedoids(std::size_t item_count, DistanceOracle&& distance, std::size_t k, std::uint64_t seed,
                          const KMedoidsConfig& cfg = {}) {
    SquareMatrix d(item_count);
    for (std::size_t i = 0; i < item_count; ++i)
        for (std::size_t j = i + 1; j < item_count; ++j) d(i, j) = d(j, i) = distance(i, j);
    return kmedoids(d, k, seed, cfg);
}

struct ApConfig {
    double damping = 0.5;
    std::size_t max_iterations = 500;
    std::size_t convergence_window = 15;
    /// Shared preference; empty means the median of the off-diagonal similarities.
    std::optional<double> preference;
};

/// Writes the shared preference onto the diagonal.
inline void set_preference(SquareMatrix& s, std::optional<double> preference) {
    const double p = preference ? *preference : upper_triangle_median(s);
    for (std::size_t i = 0; i < s.size(); ++i) s(i, i) = p;
}

/// Affinity propagation with damped responsibility/availability messages; diagonal
/// entries of `s` are the preferences. Exemplars are k with a(k,k) + r(k,k) > 0.
inline ClusteringResult affinity_propagation(const SquareMatrix& s, const ApConfig& cfg = {}) {
    const std::size_t n = s.size();
    if (n == 0) throw std::invalid_argument("affinity_propagation: empty similarity matrix");
    if (!(cfg.damping >= 0.0 && cfg.damping < 1.0)) throw std::invalid_argument("affinity_propagation: damping not in [0,1)");
    if (cfg.max_iterations == 0 || cfg.convergence_window == 0) {
        throw std::invalid_argument("affinity_propagation: iteration limits must be positive");
    }
    ClusteringResult res;
    if (n == 1) {
        res.assignments = {0};
        res.exemplars = {0};
        res.objective = s(0, 0);
        res.converged = true;
        return res;
    }
    const double lambda = cfg.damping;
    SquareMatrix r(n), a(n);
    std::vector<std::size_t> exemplars, previous;
    std::size_t stable = 0;

    for (std::size_t iter = 0; iter < cfg.max_iterations; ++iter) {
        for (std::size_t i = 0; i < n; ++i) {
            double first = -std::numeric_limits<double>::infinity(), second = first;
            std::size_t arg = 0;
            for (std::size_t k = 0; k < n; ++k) {
                const double v = a(i, k) + s(i, k);
                if (v > first) {
                    second = first;
                    first = v;
                    arg = k;
                } else if (v > second) {
                    second = v;
                }
            }
            for (std::size_t k = 0; k < n; ++k) {
                const double computed = s(i, k) - (k == arg ? second : first);
                r(i, k) = lambda * r(i, k) + (1.0 - lambda) * computed;
            }
        }
        for (std::size_t k = 0; k < n; ++k) {
            double positive = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                if (i != k) positive += std::max(0.0, r(i, k));
            for (std::size_t i = 0; i < n; ++i) {
                const double computed =
                    i == k ? positive : std::min(0.0, r(k, k) + positive - std::max(0.0, r(i, k)));
                a(i, k) = lambda * a(i, k) + (1.0 - lambda) * computed;
            }
        }
        exemplars.clear();
        for (std::size_t k = 0; k < n; ++k)
            if (a(k, k) + r(k, k) > 0.0) exemplars.push_back(k);
        res.iterations = iter + 1;
        if (!exemplars.empty() && exemplars == previous) {
            if (++stable + 1 >= cfg.convergence_window) {
                res.converged = true;
                break;
            }
        } else {
            stable = 0;
        }
        previous = exemplars;
    }
    if (exemplars.empty()) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < n; ++k)
            if (a(k, k) + r(k, k) > a(best, best) + r(best, best)) best = k;
        exemplars = {best};
    }
    res.exemplars = exemplars;
    res.assignments.assign(n, 0);
    res.objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        auto self = std::find(exemplars.begin(), exemplars.end(), i);
        if (self != exemplars.end()) {
            best = static_cast<std::size_t>(self - exemplars.begin());
        } else {
            for (std::size_t c = 1; c < exemplars.size(); ++c)
                if (s(i, exemplars[c]) > s(i, exemplars[best])) best = c;
        }
        res.assignments[i] = best;
        res.objective += s(i, exemplars[best]);
    }
    return res;
}

/// Similarity matrix for clustering whole sets with a set kernel: off-diagonal kernel
/// values, diagonal = shared preference (median of off-diagonals unless given).
template <typename Item, typename Kernel>
SquareMatrix kernel_similarity_matrix(std::span<const Item> items, Kernel&& kernel, std::optional<double> preference = {},
                                      std::size_t threads = 1) {
    auto s = gram_matrix(items, std::forward<Kernel>(kernel), threads);
    set_preference(s, preference);
    return s;
}

}  // namespace lfir
