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

// Bag-of-visual-words histograms over a k-means codebook and k-nearest-neighbour
// classification with any similarity oracle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lfir/clustering.hpp"
#include "lfir/error.hpp"
#include "lfir/featurestore.hpp"
#include "lfir/gmm.hpp"
#include "lfir/parallel.hpp"

namespace lfir {

class Codebook {
public:
    Codebook() = default;
    Codebook(std::size_t dim, std::vector<double> words) : dim_(dim), words_(std::move(words)) {
        if (dim_ == 0 || words_.empty() || words_.size() % dim_) throw std::invalid_argument("Codebook: need at least one word of positive dimension");
    }

    std::size_t size() const noexcept { return dim_ ? words_.size() / dim_ : 0; }
    std::size_t dimension() const noexcept { return dim_; }
    std::span<const double> word(std::size_t i) const { return std::span<const double>(words_).subspan(i * dim_, dim_); }
    const std::vector<double>& data() const noexcept { return words_; }

    /// Nearest word by squared Euclidean distance; ties go to the lowest index.
    std::size_t quantize(std::span<const double> v) const {
        require_same_dimension(v.size(), dim_, "Codebook::quantize");
        std::size_t best = 0;
        double best_d = squared_distance(v, word(0));
        for (std::size_t i = 1; i < size(); ++i) {
            const double d = squared_distance(v, word(i));
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        return best;
    }

    /// The codebook as a single-image feature set (one row per word).
    LocalFeatureSet as_feature_set(std::string id = "codebook") const { return LocalFeatureSet(std::move(id), dim_, words_); }

    static Codebook from_feature_set(const LocalFeatureSet& set) {
        return Codebook(set.dimension(), std::vector<double>(set.data().begin(), set.data().end()));
    }

    friend bool operator==(const Codebook&, const Codebook&) = default;

private:
    std::size_t dim_ = 0;
    std::vector<double> words_;
};

/// k-means centres over the pooled local features of every image.
inline Codebook build_codebook(const FeatureDatabase& db, std::size_t n_words, std::uint64_t seed, const KMeansConfig& cfg = {}) {
    if (n_words == 0) throw std::invalid_argument("build_codebook: n_words must be positive");
    const auto pooled = pool_vectors(db);
    const PointsView points{pooled, db.dimension()};
    if (points.size() < n_words) throw std::invalid_argument("build_codebook: fewer pooled vectors than words");
    const auto res = kmeans(points, n_words, seed, cfg);
    std::vector<double> words;
    for (const auto& c : res.centroids) words.insert(words.end(), c.begin(), c.end());
    return Codebook(db.dimension(), std::move(words));
}

using BowVector = std::vector<std::uint64_t>;

inline BowVector bow_vector(const LocalFeatureSet& set, const Codebook& codebook) {
    require_same_dimension(set.dimension(), codebook.dimension(), "bow_vector");
    BowVector counts(codebook.size(), 0);
    for (std::size_t i = 0; i < set.size(); ++i) ++counts[codebook.quantize(set[i])];
    return counts;
}

/// Counts as reals, optionally divided by the set size.
inline std::vector<double> bow_histogram(const BowVector& counts, bool l1_normalize) {
    const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}));
    std::vector<double> h(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) {
        h[i] = static_cast<double>(counts[i]);
        if (l1_normalize && total > 0) h[i] /= total;
    }
    return h;
}

/// Every image of the database as a one-row set holding its BoW histogram.
inline FeatureDatabase bow_database(const FeatureDatabase& db, const Codebook& codebook, bool l1_normalize) {
    FeatureDatabase out(codebook.size());
    for (const auto& set : db.sets()) out.add(LocalFeatureSet(set.image_id(), codebook.size(), bow_histogram(bow_vector(set, codebook), l1_normalize)));
    return out;
}

inline double negative_euclidean(std::span<const double> a, std::span<const double> b) { return -std::sqrt(squared_distance(a, b)); }

struct Neighbor {
    std::size_t index = 0;
    double similarity = 0.0;
};

/// The k most similar of n training items: descending similarity, ties by ascending index.
template <typename Similarity>
std::vector<Neighbor> nearest_neighbors(std::size_t n, std::size_t k, Similarity&& similarity, std::size_t threads = 1) {
    if (k == 0 || k > n) throw std::invalid_argument("knn: k must be in [1, training size]");
    std::vector<Neighbor> all(n);
    parallel_for(n, threads, [&](std::size_t i) { all[i] = {i, similarity(i)}; });
    for (const auto& nb : all)
        if (std::isnan(nb.similarity)) throw std::invalid_argument("knn: NaN similarity");
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), [](const Neighbor& a, const Neighbor& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.index < b.index;
    });
    all.resize(k);
    return all;
}

/// Majority vote over the k nearest neighbours. Vote ties go to the label with the
/// highest summed similarity, then to the lexicographically lowest label.
template <typename Similarity>
std::string knn_classify(const std::vector<std::string>& labels, std::size_t k, Similarity&& similarity, std::size_t threads = 1) {
    const auto nbs = nearest_neighbors(labels.size(), k, similarity, threads);
    struct Tally {
        std::size_t votes = 0;
        double similarity = 0.0;
    };
    std::map<std::string, Tally> tally;
    for (const auto& nb : nbs) {
        auto& t = tally[labels[nb.index]];
        ++t.votes;
        t.similarity += nb.similarity;
    }
    auto best = tally.begin();
    for (auto it = std::next(tally.begin()); it != tally.end(); ++it) {
        if (it->second.votes > best->second.votes ||
            (it->second.votes == best->second.votes && it->second.similarity > best->second.similarity)) {
            best = it;
        }
    }
    return best->first;
}

}  // namespace lfir
