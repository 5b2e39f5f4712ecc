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

// Seeded random inputs shared by the test binaries.

#include <random>
#include <string>
#include <vector>

#include "lfir/featurestore.hpp"
#include "lfir/gmm.hpp"

namespace fixtures {

inline lfir::LocalFeatureSet random_set(std::mt19937_64& rng, std::size_t n, std::size_t d, std::string id = "s",
                                        double scale = 1.0) {
    std::normal_distribution<double> value(0.0, scale);
    std::vector<double> data(n * d);
    for (auto& v : data) v = value(rng);
    return lfir::LocalFeatureSet(std::move(id), d, std::move(data));
}

/// Coordinates drawn uniformly from [0, D).
inline lfir::LocalFeatureSet random_set_in_box(std::mt19937_64& rng, std::size_t n, std::size_t d, double D, std::string id = "s") {
    std::uniform_real_distribution<double> value(0.0, D);
    std::vector<double> data(n * d);
    for (auto& v : data) v = value(rng);
    return lfir::LocalFeatureSet(std::move(id), d, std::move(data));
}

inline lfir::FeatureDatabase random_db(std::mt19937_64& rng, std::size_t images, std::size_t min_n, std::size_t max_n, std::size_t d) {
    std::uniform_int_distribution<std::size_t> count(min_n, max_n);
    lfir::FeatureDatabase db(d);
    for (std::size_t i = 0; i < images; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "img%03zu", i);
        db.add(random_set(rng, count(rng), d, id));
    }
    return db;
}

inline lfir::GaussianMixture random_mixture(std::mt19937_64& rng, std::size_t Q, std::size_t d, double spread = 1.0) {
    std::normal_distribution<double> mean(0.0, spread);
    std::uniform_real_distribution<double> var(0.3, 1.5), w(0.2, 1.0);
    std::vector<double> weights(Q);
    double total = 0.0;
    for (auto& x : weights) total += (x = w(rng));
    for (auto& x : weights) x /= total;
    std::vector<lfir::Gaussian> comps;
    for (std::size_t q = 0; q < Q; ++q) {
        lfir::Gaussian g{std::vector<double>(d), std::vector<double>(d)};
        for (auto& m : g.mean) m = mean(rng);
        for (auto& v : g.variances) v = var(rng);
        comps.push_back(std::move(g));
    }
    return lfir::GaussianMixture(std::move(weights), std::move(comps));
}

/// n points per blob around the given 1-D or d-D centres with unit standard deviation.
inline std::vector<double> blobs(std::mt19937_64& rng, const std::vector<std::vector<double>>& centres, std::size_t n, double sd,
                                 std::vector<std::size_t>* membership = nullptr) {
    std::normal_distribution<double> noise(0.0, sd);
    std::vector<double> out;
    for (std::size_t c = 0; c < centres.size(); ++c)
        for (std::size_t i = 0; i < n; ++i) {
            for (double m : centres[c]) out.push_back(m + noise(rng));
            if (membership) membership->push_back(c);
        }
    return out;
}

/// True when two labelings describe the same partition.
inline bool same_partition(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = i + 1; j < a.size(); ++j)
            if ((a[i] == a[j]) != (b[i] == b[j])) return false;
    return true;
}

}  // namespace fixtures
