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

// Base RBF kernel and set kernels over variable-size sets of local feature vectors:
// summation, matching, intermediate matching (IMK) and pyramid match.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "lfir/clustering.hpp"
#include "lfir/error.hpp"
#include "lfir/featurestore.hpp"
#include "lfir/gmm.hpp"
#include "lfir/matrix.hpp"

namespace lfir {

/// Correctly rounded sum of a sequence of finite doubles (Shewchuk partials with
/// half-even correction). The result does not depend on the order of the terms.
inline double exact_sum(std::span<const double> values) {
    std::vector<double> partials;
    for (double x : values) {
        std::size_t i = 0;
        for (double y : partials) {
            if (std::abs(x) < std::abs(y)) std::swap(x, y);
            const double hi = x + y;
            const double lo = y - (hi - x);
            if (lo != 0.0) partials[i++] = lo;
            x = hi;
        }
        partials.resize(i);
        partials.push_back(x);
    }
    std::size_t n = partials.size();
    if (n == 0) return 0.0;
    double hi = partials[--n];
    double lo = 0.0;
    while (n > 0) {
        const double x = hi;
        const double y = partials[--n];
        hi = x + y;
        const double yr = hi - x;
        lo = y - yr;
        if (lo != 0.0) break;
    }
    if (n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0))) {
        const double y = lo * 2.0;
        const double x = hi + y;
        const double yr = x - hi;
        if (y == yr) hi = x;
    }
    return hi;
}

/// exp(-delta * ||x - y||^2).
inline double rbf(std::span<const double> x, std::span<const double> y, double delta) {
    require_same_dimension(x.size(), y.size(), "rbf");
    return std::exp(-delta * squared_distance(x, y));
}

struct BaseKernel {
    double delta = 1.0;

    explicit BaseKernel(double d = 1.0) : delta(d) {
        if (!(d > 0.0) || !std::isfinite(d)) throw std::invalid_argument("BaseKernel: delta must be positive");
    }
    double operator()(std::span<const double> x, std::span<const double> y) const { return rbf(x, y, delta); }
};

/// Sum of base kernel values over all M_i * M_j cross pairs.
inline double summation_kernel(const LocalFeatureSet& X, const LocalFeatureSet& Y, const BaseKernel& base) {
    require_same_dimension(X.dimension(), Y.dimension(), "summation_kernel");
    std::vector<double> terms;
    terms.reserve(X.size() * Y.size());
    for (std::size_t m = 0; m < X.size(); ++m)
        for (std::size_t n = 0; n < Y.size(); ++n) terms.push_back(base(X[m], Y[n]));
    return exact_sum(terms);
}

/// For every vector, the best base-kernel match in the other set; both directions summed.
inline double matching_kernel(const LocalFeatureSet& X, const LocalFeatureSet& Y, const BaseKernel& base) {
    require_same_dimension(X.dimension(), Y.dimension(), "matching_kernel");
    std::vector<double> k(X.size() * Y.size());
    for (std::size_t m = 0; m < X.size(); ++m)
        for (std::size_t n = 0; n < Y.size(); ++n) k[m * Y.size() + n] = base(X[m], Y[n]);
    double forward = 0.0;
    for (std::size_t m = 0; m < X.size(); ++m) {
        double best = k[m * Y.size()];
        for (std::size_t n = 1; n < Y.size(); ++n) best = std::max(best, k[m * Y.size() + n]);
        forward += best;
    }
    double backward = 0.0;
    for (std::size_t n = 0; n < Y.size(); ++n) {
        double best = k[n];
        for (std::size_t m = 1; m < X.size(); ++m) best = std::max(best, k[m * Y.size() + n]);
        backward += best;
    }
    return forward + backward;
}

/// Index of the member of X nearest to v (Euclidean); ties to the lowest index.
inline std::size_t closest_to_center_index(const LocalFeatureSet& X, std::span<const double> v) {
    require_same_dimension(X.dimension(), v.size(), "select_closest_to_center");
    std::size_t best = 0;
    double best_d = squared_distance(X[0], v);
    for (std::size_t i = 1; i < X.size(); ++i) {
        const double d = squared_distance(X[i], v);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

inline FeatureVector select_closest_to_center(const LocalFeatureSet& X, std::span<const double> v) {
    return X.vector(closest_to_center_index(X, v));
}

/// log gamma_q(x) for every member of X: row-major |X| x Q.
inline std::vector<double> log_responsibilities(const LocalFeatureSet& X, const GaussianMixture& ubm) {
    require_same_dimension(X.dimension(), ubm.dimension(), "UBM responsibilities");
    const std::size_t Q = ubm.component_count();
    std::vector<double> out(X.size() * Q);
    for (std::size_t i = 0; i < X.size(); ++i) {
        const auto terms = component_log_terms(ubm, X[i]);
        const double norm = log_sum_exp(terms);
        for (std::size_t q = 0; q < Q; ++q) out[i * Q + q] = terms[q] - norm;
    }
    return out;
}

/// Index of the member of X with the highest responsibility for component q (0-based).
inline std::size_t closest_to_component_index(const LocalFeatureSet& X, const GaussianMixture& ubm, std::size_t q) {
    const std::size_t Q = ubm.component_count();
    if (q >= Q) throw std::out_of_range("select_closest_to_component: component index out of range");
    const auto lg = log_responsibilities(X, ubm);
    std::size_t best = 0;
    for (std::size_t i = 1; i < X.size(); ++i)
        if (lg[i * Q + q] > lg[best * Q + q]) best = i;
    return best;
}

inline FeatureVector select_closest_to_component(const LocalFeatureSet& X, const GaussianMixture& ubm, std::size_t q) {
    return X.vector(closest_to_component_index(X, ubm, q));
}

/// The Q virtual feature vectors that pair up members of two sets in the IMK:
/// either cluster centers (nearest member) or UBM components (highest responsibility).
struct VocabularyCenters {
    std::size_t dim = 0;
    std::vector<double> flat;
};

class VirtualVocabulary {
public:
    using Centers = VocabularyCenters;

    static VirtualVocabulary centers(const std::vector<FeatureVector>& centers) {
        if (centers.empty()) throw std::invalid_argument("VirtualVocabulary: at least one center required");
        Centers c{centers.front().size(), {}};
        for (const auto& v : centers) {
            require_same_dimension(v.size(), c.dim, "VirtualVocabulary");
            c.flat.insert(c.flat.end(), v.begin(), v.end());
        }
        VirtualVocabulary voc;
        voc.variant_ = std::move(c);
        return voc;
    }

    static VirtualVocabulary centers(const LocalFeatureSet& set) {
        VirtualVocabulary voc;
        voc.variant_ = Centers{set.dimension(), std::vector<double>(set.data().begin(), set.data().end())};
        return voc;
    }

    static VirtualVocabulary ubm(GaussianMixture mixture) {
        VirtualVocabulary voc;
        voc.variant_ = std::move(mixture);
        return voc;
    }

    bool is_ubm() const noexcept { return std::holds_alternative<GaussianMixture>(variant_); }

    std::size_t size() const {
        if (auto* c = std::get_if<Centers>(&variant_)) return c->flat.size() / c->dim;
        return std::get<GaussianMixture>(variant_).component_count();
    }

    std::size_t dimension() const {
        if (auto* c = std::get_if<Centers>(&variant_)) return c->dim;
        return std::get<GaussianMixture>(variant_).dimension();
    }

    std::span<const double> center(std::size_t q) const {
        const auto& c = std::get<Centers>(variant_);
        return std::span<const double>(c.flat).subspan(q * c.dim, c.dim);
    }

    const GaussianMixture& mixture() const { return std::get<GaussianMixture>(variant_); }

    /// For each q, the index of the selected member of X.
    std::vector<std::size_t> select(const LocalFeatureSet& X) const {
        require_same_dimension(X.dimension(), dimension(), "IMK vocabulary");
        const std::size_t Q = size();
        std::vector<std::size_t> sel(Q, 0);
        if (std::holds_alternative<Centers>(variant_)) {
            for (std::size_t q = 0; q < Q; ++q) sel[q] = closest_to_center_index(X, center(q));
            return sel;
        }
        const auto lg = log_responsibilities(X, mixture());
        for (std::size_t q = 0; q < Q; ++q) {
            std::size_t best = 0;
            for (std::size_t i = 1; i < X.size(); ++i)
                if (lg[i * Q + q] > lg[best * Q + q]) best = i;
            sel[q] = best;
        }
        return sel;
    }

private:
    std::variant<Centers, GaussianMixture> variant_;
};

/// Selected vectors of one set, flattened (Q x d), ready for repeated IMK evaluation.
inline std::vector<double> imk_selected_vectors(const LocalFeatureSet& X, const VirtualVocabulary& vocab) {
    const auto sel = vocab.select(X);
    std::vector<double> out;
    out.reserve(sel.size() * X.dimension());
    for (auto i : sel) out.insert(out.end(), X[i].begin(), X[i].end());
    return out;
}

inline double imk_from_selected(std::span<const double> sx, std::span<const double> sy, std::size_t dim,
                                const BaseKernel& base) {
    require_same_dimension(sx.size(), sy.size(), "imk");
    double s = 0.0;
    for (std::size_t off = 0; off < sx.size(); off += dim) s += base(sx.subspan(off, dim), sy.subspan(off, dim));
    return s;
}

/// Sum over the Q virtual vectors of the base kernel between the members each set selects.
inline double imk(const LocalFeatureSet& X, const LocalFeatureSet& Y, const VirtualVocabulary& vocab, const BaseKernel& base) {
    require_same_dimension(X.dimension(), Y.dimension(), "imk");
    return imk_from_selected(imk_selected_vectors(X, vocab), imk_selected_vectors(Y, vocab), X.dimension(), base);
}

inline double histogram_intersection(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("histogram_intersection: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] < 0.0 || b[i] < 0.0) throw std::invalid_argument("histogram_intersection: negative bin");
        s += std::min(a[i], b[i]);
    }
    return s;
}

/// Multi-resolution histograms H_0..H_L of a set; level k uses bins of side 2^k, L = ceil(log2 D).
class PyramidHistogram {
public:
    using Bin = std::vector<std::int64_t>;

    PyramidHistogram(const LocalFeatureSet& X, double diameter) : count_(X.size()) {
        if (!(diameter >= 1.0)) throw std::invalid_argument("pyramid_match: diameter must be >= 1");
        levels_ = static_cast<std::size_t>(std::ceil(std::log2(diameter)));
        for (std::size_t i = 0; i < X.size(); ++i)
            for (double v : X[i])
                if (!(v >= 0.0 && v < diameter)) throw std::out_of_range("pyramid_match: coordinate outside [0, D)");
        histograms_.resize(levels_ + 1);
        for (std::size_t k = 0; k <= levels_; ++k) {
            const double side = std::ldexp(1.0, static_cast<int>(k));
            for (std::size_t i = 0; i < X.size(); ++i) {
                Bin bin;
                bin.reserve(X.dimension());
                for (double v : X[i]) bin.push_back(static_cast<std::int64_t>(std::floor(v / side)));
                ++histograms_[k][bin];
            }
        }
    }

    std::size_t levels() const noexcept { return levels_; }
    std::size_t set_size() const noexcept { return count_; }
    const std::map<Bin, std::size_t>& level(std::size_t k) const { return histograms_[k]; }

private:
    std::size_t levels_ = 0;
    std::size_t count_ = 0;
    std::vector<std::map<Bin, std::size_t>> histograms_;
};

inline std::size_t sparse_intersection(const std::map<PyramidHistogram::Bin, std::size_t>& a,
                                       const std::map<PyramidHistogram::Bin, std::size_t>& b) {
    std::size_t s = 0;
    auto ia = a.begin();
    auto ib = b.begin();
    while (ia != a.end() && ib != b.end()) {
        if (ia->first < ib->first) {
            ++ia;
        } else if (ib->first < ia->first) {
            ++ib;
        } else {
            s += std::min(ia->second, ib->second);
            ++ia;
            ++ib;
        }
    }
    return s;
}

/// Unnormalised pyramid match: sum_k (I_k - I_{k-1}) / 2^k, with I_{-1} = 0.
inline double pyramid_match_unnormalized(const PyramidHistogram& x, const PyramidHistogram& y) {
    if (x.levels() != y.levels()) throw std::invalid_argument("pyramid_match: histograms built with different diameters");
    double s = 0.0;
    std::size_t previous = 0;
    for (std::size_t k = 0; k <= x.levels(); ++k) {
        const std::size_t current = sparse_intersection(x.level(k), y.level(k));
        s += static_cast<double>(current - previous) / std::ldexp(1.0, static_cast<int>(k));
        previous = current;
    }
    return s;
}

inline double pyramid_match(const PyramidHistogram& x, const PyramidHistogram& y) {
    const double kxy = pyramid_match_unnormalized(x, y);
    const double kxx = pyramid_match_unnormalized(x, x);
    const double kyy = pyramid_match_unnormalized(y, y);
    return kxy / std::sqrt(kxx * kyy);
}

/// Normalised pyramid match kernel in (0, 1]; coordinates must lie in [0, D).
inline double pyramid_match(const LocalFeatureSet& X, const LocalFeatureSet& Y, double diameter) {
    require_same_dimension(X.dimension(), Y.dimension(), "pyramid_match");
    return pyramid_match(PyramidHistogram(X, diameter), PyramidHistogram(Y, diameter));
}

/// Per-dimension min-max map of database coordinates onto [0, D), D a power of two.
class PyramidScaler {
public:
    PyramidScaler() = default;
    PyramidScaler(std::vector<double> lo, std::vector<double> hi, double diameter)
        : lo_(std::move(lo)), hi_(std::move(hi)), diameter_(diameter) {}

    /// D defaults to 2^ceil(log2 R) where R is the widest raw coordinate range, at least 2.
    static PyramidScaler fit(const FeatureDatabase& db, double diameter = 0.0) {
        if (db.empty()) throw std::invalid_argument("PyramidScaler: empty database");
        const std::size_t d = db.dimension();
        std::vector<double> lo(d, std::numeric_limits<double>::infinity()), hi(d, -std::numeric_limits<double>::infinity());
        for (const auto& set : db)
            for (std::size_t i = 0; i < set.size(); ++i)
                for (std::size_t t = 0; t < d; ++t) {
                    lo[t] = std::min(lo[t], set[i][t]);
                    hi[t] = std::max(hi[t], set[i][t]);
                }
        if (diameter <= 0.0) {
            double range = 2.0;
            for (std::size_t t = 0; t < d; ++t) range = std::max(range, hi[t] - lo[t]);
            diameter = std::ldexp(1.0, static_cast<int>(std::ceil(std::log2(range))));
        }
        return PyramidScaler(std::move(lo), std::move(hi), diameter);
    }

    double diameter() const noexcept { return diameter_; }

    /// Values outside the fitted range are clamped into [0, D).
    LocalFeatureSet apply(const LocalFeatureSet& X) const {
        require_same_dimension(X.dimension(), lo_.size(), "PyramidScaler");
        const double top = std::nextafter(diameter_, 0.0);
        std::vector<double> out;
        out.reserve(X.data().size());
        for (std::size_t i = 0; i < X.size(); ++i)
            for (std::size_t t = 0; t < X.dimension(); ++t) {
                const double span = hi_[t] - lo_[t];
                const double u = span > 0.0 ? (X[i][t] - lo_[t]) / span * diameter_ : 0.0;
                out.push_back(std::clamp(u, 0.0, top));
            }
        return LocalFeatureSet(X.image_id(), X.dimension(), std::move(out));
    }

private:
    std::vector<double> lo_, hi_;
    double diameter_ = 1.0;
};

/// delta = 1 / (2 * median squared distance) over seeded random pairs of pooled local vectors.
inline double median_delta(const FeatureDatabase& db, std::uint64_t seed, std::size_t pairs = 1000) {
    const auto pooled = pool_vectors(db);
    const PointsView pts{pooled, db.dimension()};
    if (pts.size() < 2) return 1.0;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
    std::vector<double> d2;
    d2.reserve(pairs);
    while (d2.size() < pairs) {
        const std::size_t a = pick(rng), b = pick(rng);
        if (a == b) continue;
        d2.push_back(squared_distance(pts[a], pts[b]));
    }
    std::sort(d2.begin(), d2.end());
    const std::size_t h = d2.size() / 2;
    const double median = d2.size() % 2 ? d2[h] : 0.5 * (d2[h - 1] + d2[h]);
    return median > 0.0 ? 1.0 / (2.0 * median) : 1.0;
}

enum class KernelKind { Summation, Matching, Imk, PyramidMatch };

inline std::string to_string(KernelKind k) {
    switch (k) {
        case KernelKind::Summation: return "summation";
        case KernelKind::Matching: return "matching";
        case KernelKind::Imk: return "imk";
        case KernelKind::PyramidMatch: return "pyramid";
    }
    return "unknown";
}

inline KernelKind parse_kernel_kind(const std::string& s) {
    if (s == "summation") return KernelKind::Summation;
    if (s == "matching") return KernelKind::Matching;
    if (s == "imk") return KernelKind::Imk;
    if (s == "pyramid") return KernelKind::PyramidMatch;
    throw std::invalid_argument("unknown kernel '" + s + "' (summation|matching|imk|pyramid)");
}

/// A configured set kernel. prepare() caches whatever a set needs for repeated
/// evaluation (IMK selections, pyramid histograms) so scoring a query against a
/// database does the per-set work once.
class SetKernel {
public:
    struct Prepared {
        std::shared_ptr<const LocalFeatureSet> set;
        std::vector<double> selected;
        std::shared_ptr<const PyramidHistogram> pyramid;
    };

    static SetKernel summation(BaseKernel base) { return SetKernel(KernelKind::Summation, base); }
    static SetKernel matching(BaseKernel base) { return SetKernel(KernelKind::Matching, base); }
    static SetKernel imk(VirtualVocabulary vocab, BaseKernel base) {
        SetKernel k(KernelKind::Imk, base);
        k.vocab_ = std::make_shared<const VirtualVocabulary>(std::move(vocab));
        return k;
    }
    static SetKernel pyramid(PyramidScaler scaler) {
        SetKernel k(KernelKind::PyramidMatch, BaseKernel{1.0});
        k.scaler_ = std::make_shared<const PyramidScaler>(std::move(scaler));
        return k;
    }

    KernelKind kind() const noexcept { return kind_; }
    const BaseKernel& base() const noexcept { return base_; }
    const VirtualVocabulary* vocabulary() const noexcept { return vocab_.get(); }

    Prepared prepare(const LocalFeatureSet& X) const {
        Prepared p;
        switch (kind_) {
            case KernelKind::Summation:
            case KernelKind::Matching: p.set = std::make_shared<const LocalFeatureSet>(X); break;
            case KernelKind::Imk:
                p.set = std::make_shared<const LocalFeatureSet>(X);
                p.selected = imk_selected_vectors(X, *vocab_);
                break;
            case KernelKind::PyramidMatch:
                p.set = std::make_shared<const LocalFeatureSet>(X);
                p.pyramid = std::make_shared<const PyramidHistogram>(scaler_->apply(X), scaler_->diameter());
                break;
        }
        return p;
    }

    double operator()(const Prepared& x, const Prepared& y) const {
        switch (kind_) {
            case KernelKind::Summation: return summation_kernel(*x.set, *y.set, base_);
            case KernelKind::Matching: return matching_kernel(*x.set, *y.set, base_);
            case KernelKind::Imk:
                require_same_dimension(x.set->dimension(), y.set->dimension(), "imk");
                return imk_from_selected(x.selected, y.selected, x.set->dimension(), base_);
            case KernelKind::PyramidMatch: return pyramid_match(*x.pyramid, *y.pyramid);
        }
        return 0.0;
    }

    double operator()(const LocalFeatureSet& x, const LocalFeatureSet& y) const { return (*this)(prepare(x), prepare(y)); }

    /// Prepared forms of every database set, in database order.
    std::vector<Prepared> prepare_all(const FeatureDatabase& db, std::size_t threads = 1) const {
        std::vector<Prepared> out(db.size());
        parallel_for(db.size(), threads, [&](std::size_t i) { out[i] = prepare(db[i]); });
        return out;
    }

    /// Gram matrix over a database.
    SquareMatrix gram(const FeatureDatabase& db, std::size_t threads = 1) const {
        const auto prepared = prepare_all(db, threads);
        return gram_matrix(std::span<const Prepared>(prepared), [this](const Prepared& a, const Prepared& b) { return (*this)(a, b); },
                           threads);
    }

private:
    SetKernel(KernelKind kind, BaseKernel base) : kind_(kind), base_(base) {}

    KernelKind kind_;
    BaseKernel base_;
    std::shared_ptr<const VirtualVocabulary> vocab_;
    std::shared_ptr<const PyramidScaler> scaler_;
};

}  // namespace lfir
