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

// Seeded class-structured synthetic databases: every class owns a diagonal GMM whose
// components sit around a vertex of a scaled simplex; every image draws its local
// vectors from its class model. Ground truth for an image is the rest of its class.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "lfir/featurestore.hpp"
#include "lfir/gmm.hpp"

namespace lfir {

struct SynthSpec {
    std::size_t class_count = 5;
    std::size_t images_per_class = 40;
    std::size_t min_vectors = 30;
    std::size_t max_vectors = 60;
    std::size_t dimension = 8;
    /// Distance between class centres in units of component standard deviation.
    double class_separation = 3.0;
    std::size_t components_per_class = 2;
    /// Length of the per-image visual signature (0 disables signatures).
    std::size_t signature_dim = 48;
    /// Class offset of signature means relative to their unit per-image noise.
    double signature_separation = 0.5;
    std::uint64_t seed = 1;

    void validate() const {
        if (class_count < 2) throw std::invalid_argument("SynthSpec: class_count must be >= 2");
        if (images_per_class < 2) throw std::invalid_argument("SynthSpec: images_per_class must be >= 2");
        if (min_vectors == 0 || min_vectors > max_vectors) throw std::invalid_argument("SynthSpec: need 1 <= min_vectors <= max_vectors");
        if (dimension == 0) throw std::invalid_argument("SynthSpec: dimension must be positive");
        if (!(class_separation >= 0.0) || !std::isfinite(class_separation)) throw std::invalid_argument("SynthSpec: class_separation must be >= 0");
        if (components_per_class == 0) throw std::invalid_argument("SynthSpec: components_per_class must be positive");
        if (!(signature_separation >= 0.0) || !std::isfinite(signature_separation)) {
            throw std::invalid_argument("SynthSpec: signature_separation must be >= 0");
        }
    }
};

struct SynthData {
    FeatureDatabase db;
    GroundTruthTable truth;
    LabelTable labels;
    SignatureTable signatures;
    std::vector<std::size_t> class_of;  // per image, in database order
    std::vector<GaussianMixture> class_models;
};

inline std::string synth_image_id(std::size_t c, std::size_t i) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "c%02zu_%04zu", c, i);
    return buf;
}

inline std::string synth_label(std::size_t c) { return "class" + std::to_string(c); }

inline FeatureVector sample_mixture(const GaussianMixture& m, std::mt19937_64& rng) {
    std::discrete_distribution<std::size_t> pick(m.weights().begin(), m.weights().end());
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto& g = m[pick(rng)];
    FeatureVector x(g.dimension());
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = g.mean[k] + std::sqrt(g.variances[k]) * normal(rng);
    return x;
}

/// Unit-variance components. Class centres are simplex vertices scaled so neighbouring
/// centres lie class_separation apart (random unit directions when classes outnumber
/// dimensions); component means scatter around the centre by 0.3 x separation.
inline SynthData generate(const SynthSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t d = spec.dimension;
    const double scale = spec.class_separation / std::sqrt(2.0);

    SynthData out{FeatureDatabase(d), {}, {}, {}, {}, {}};
    for (std::size_t c = 0; c < spec.class_count; ++c) {
        std::vector<double> centre(d, 0.0);
        if (spec.class_count <= d) {
            centre[c] = scale;
        } else {
            double norm = 0.0;
            for (auto& v : centre) {
                v = normal(rng);
                norm += v * v;
            }
            norm = std::sqrt(norm);
            for (auto& v : centre) v = norm > 0 ? v / norm * scale : 0.0;
        }
        std::vector<Gaussian> comps;
        for (std::size_t q = 0; q < spec.components_per_class; ++q) {
            Gaussian g{centre, std::vector<double>(d, 1.0)};
            for (auto& v : g.mean) v += 0.3 * spec.class_separation * normal(rng);
            comps.push_back(std::move(g));
        }
        std::vector<double> w(spec.components_per_class, 1.0 / static_cast<double>(spec.components_per_class));
        out.class_models.emplace_back(std::move(w), std::move(comps));
    }

    std::vector<std::vector<double>> signature_means(spec.class_count, std::vector<double>(spec.signature_dim));
    for (auto& m : signature_means)
        for (auto& v : m) v = spec.signature_separation * normal(rng);

    std::uniform_int_distribution<std::size_t> count(spec.min_vectors, spec.max_vectors);
    for (std::size_t c = 0; c < spec.class_count; ++c) {
        for (std::size_t i = 0; i < spec.images_per_class; ++i) {
            const std::string id = synth_image_id(c, i);
            const std::size_t n = count(rng);
            std::vector<double> data;
            data.reserve(n * d);
            for (std::size_t v = 0; v < n; ++v) {
                auto x = sample_mixture(out.class_models[c], rng);
                data.insert(data.end(), x.begin(), x.end());
            }
            out.db.add(LocalFeatureSet(id, d, std::move(data)));
            out.labels.add(id, synth_label(c));
            out.class_of.push_back(c);
            if (spec.signature_dim) {
                std::vector<double> sig(spec.signature_dim);
                for (std::size_t k = 0; k < sig.size(); ++k) sig[k] = signature_means[c][k] + normal(rng);
                out.signatures.add(id, std::move(sig));
            }
        }
    }

    for (std::size_t c = 0; c < spec.class_count; ++c) {
        for (std::size_t i = 0; i < spec.images_per_class; ++i) {
            std::set<std::string> rel;
            for (std::size_t k = 0; k < spec.images_per_class; ++k)
                if (k != i) rel.insert(synth_image_id(c, k));
            out.truth.add(synth_image_id(c, i), std::move(rel));
        }
    }
    return out;
}

}  // namespace lfir
