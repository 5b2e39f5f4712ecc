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

// One-step exhaustive retrieval, two-step cluster-pruned retrieval, and the
// per-image Gaussian model baselines.

#include <algorithm>
#include <cstdint>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "lfir/clustering.hpp"
#include "lfir/error.hpp"
#include "lfir/featurestore.hpp"
#include "lfir/gmm.hpp"
#include "lfir/kernels.hpp"
#include "lfir/metrics.hpp"
#include "lfir/parallel.hpp"

namespace lfir {

/// A retrieval scorer binds a query and then scores database images by index.
template <typename S>
concept RetrievalScorer = requires(const S& s, const LocalFeatureSet& q, std::size_t j) {
    { s.bind(q)(j) } -> std::convertible_to<double>;
};

/// Scores database images with a set kernel; database sets are prepared once.
class KernelScorer {
public:
    KernelScorer(const FeatureDatabase& db, SetKernel kernel, std::size_t threads = 1)
        : kernel_(std::move(kernel)), prepared_(std::make_shared<const std::vector<SetKernel::Prepared>>(kernel_.prepare_all(db, threads))) {}

    auto bind(const LocalFeatureSet& query) const {
        auto q = std::make_shared<const SetKernel::Prepared>(kernel_.prepare(query));
        return [this, q](std::size_t j) { return kernel_(*q, (*prepared_)[j]); };
    }

    const SetKernel& kernel() const noexcept { return kernel_; }

private:
    SetKernel kernel_;
    std::shared_ptr<const std::vector<SetKernel::Prepared>> prepared_;
};

enum class ModelKind { Gaussian, TwoComponent };
enum class Divergence { Kld, C2 };

inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "gaussian") return ModelKind::Gaussian;
    if (s == "2gmm") return ModelKind::TwoComponent;
    throw std::invalid_argument("unknown model kind '" + s + "' (gaussian|2gmm)");
}

inline Divergence parse_divergence(const std::string& s) {
    if (s == "kld") return Divergence::Kld;
    if (s == "c2") return Divergence::C2;
    throw std::invalid_argument("unknown divergence '" + s + "' (kld|c2)");
}

inline std::size_t model_components(ModelKind k) { return k == ModelKind::Gaussian ? 1 : 2; }

/// Per-image mixture; sets with fewer distinct vectors than the model needs fall back to fewer components.
inline GaussianMixture fit_image_model(const LocalFeatureSet& set, ModelKind kind, const EmConfig& cfg) {
    const PointsView pts{set.data(), set.dimension()};
    const std::size_t q = std::min(model_components(kind), count_distinct(pts, model_components(kind)));
    return fit_gmm(pts, q, cfg);
}

/// Score = -divergence(query model, image model). KLD requires single-Gaussian models.
class BaselineScorer {
public:
    BaselineScorer(const FeatureDatabase& db, ModelKind kind, Divergence divergence, EmConfig cfg = {}, std::size_t threads = 1)
        : kind_(kind), divergence_(divergence), cfg_(cfg) {
        if (divergence == Divergence::Kld && kind != ModelKind::Gaussian) {
            throw UnsupportedError("KLD baseline requires single-Gaussian models (use --divergence c2 with 2gmm)");
        }
        auto models = std::make_shared<std::vector<GaussianMixture>>(db.size());
        parallel_for(db.size(), threads, [&](std::size_t i) { (*models)[i] = fit_image_model(db[i], kind, cfg_); });
        models_ = std::move(models);
    }

    auto bind(const LocalFeatureSet& query) const {
        auto q = std::make_shared<const GaussianMixture>(fit_image_model(query, kind_, cfg_));
        return [this, q](std::size_t j) { return -divergence(*q, (*models_)[j]); };
    }

    double divergence(const GaussianMixture& p, const GaussianMixture& q) const {
        return divergence_ == Divergence::Kld ? kl_divergence(p, q) : c2_distance(p, q);
    }

    const std::vector<GaussianMixture>& models() const { return *models_; }

private:
    ModelKind kind_;
    Divergence divergence_;
    EmConfig cfg_;
    std::shared_ptr<const std::vector<GaussianMixture>> models_;
};

/// Ranks the given database indices by a bound scorer, descending, ties by image id.
template <typename Bound>
Ranking rank_candidates(const FeatureDatabase& db, const std::string& query_id, const std::vector<std::size_t>& candidates,
                        const Bound& bound, std::size_t threads = 1) {
    std::vector<RankedItem> items(candidates.size());
    parallel_for(candidates.size(), threads, [&](std::size_t t) {
        items[t] = RankedItem{db[candidates[t]].image_id(), bound(candidates[t])};
    });
    return Ranking::from_scores(query_id, std::move(items));
}

struct RetrieveOptions {
    bool exclude_self = false;
    std::size_t threads = 1;
};

inline std::vector<std::size_t> search_space(const FeatureDatabase& db, const LocalFeatureSet& query, bool exclude_self) {
    std::vector<std::size_t> all;
    all.reserve(db.size());
    for (std::size_t i = 0; i < db.size(); ++i)
        if (!(exclude_self && db[i].image_id() == query.image_id())) all.push_back(i);
    return all;
}

/// Scores every database image against the query.
template <RetrievalScorer Scorer>
Ranking one_step_retrieve(const FeatureDatabase& db, const LocalFeatureSet& query, const Scorer& scorer,
                          const RetrieveOptions& opt = {}) {
    require_same_dimension(query.dimension(), db.dimension(), "one_step_retrieve");
    const auto bound = scorer.bind(query);
    return rank_candidates(db, query.image_id(), search_space(db, query, opt.exclude_self), bound, opt.threads);
}

enum class ClusterMethod { KmeansSupervector, KmedoidsKernel, ApKernel };

inline std::string to_string(ClusterMethod m) {
    switch (m) {
        case ClusterMethod::KmeansSupervector: return "kmeans-supervector";
        case ClusterMethod::KmedoidsKernel: return "kmedoids-kernel";
        case ClusterMethod::ApKernel: return "ap-kernel";
    }
    return "unknown";
}

inline ClusterMethod parse_cluster_method(const std::string& s) {
    if (s == "kmeans-supervector") return ClusterMethod::KmeansSupervector;
    if (s == "kmedoids-kernel") return ClusterMethod::KmedoidsKernel;
    if (s == "ap-kernel") return ClusterMethod::ApKernel;
    throw std::invalid_argument("unknown clustering method '" + s + "' (kmeans-supervector|kmedoids-kernel|ap-kernel)");
}

/// Partition of the database into clusters, each with a representative: a centroid
/// supervector (k-means) or a member image (k-medoids / affinity propagation).
struct ClusteredIndex {
    ClusterMethod method = ClusterMethod::KmedoidsKernel;
    std::vector<std::size_t> assignments;        // per database image
    std::vector<FeatureVector> centroids;        // KmeansSupervector
    std::vector<std::size_t> representatives;    // kernel methods: database index per cluster

    std::size_t cluster_count() const noexcept {
        return method == ClusterMethod::KmeansSupervector ? centroids.size() : representatives.size();
    }

    std::vector<std::vector<std::size_t>> members() const {
        std::vector<std::vector<std::size_t>> out(cluster_count());
        for (std::size_t i = 0; i < assignments.size(); ++i) out[assignments[i]].push_back(i);
        return out;
    }

    friend bool operator==(const ClusteredIndex&, const ClusteredIndex&) = default;
};

struct IndexOptions {
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    ApConfig ap;
};

inline ClusteredIndex build_clustered_index(const FeatureDatabase& db, ClusterMethod method, std::size_t K,
                                            const SetKernel* kernel, const IndexOptions& opt = {}) {
    if (db.empty()) throw std::invalid_argument("build_clustered_index: empty database");
    ClusteredIndex idx;
    idx.method = method;
    if (method == ClusterMethod::KmeansSupervector) {
        if (K == 0 || K > db.size()) throw std::invalid_argument("build_clustered_index: K must be in [1, |db|]");
        const std::size_t n = db[0].size();
        std::vector<double> flat;
        for (const auto& s : db) {
            if (s.size() != n) throw std::invalid_argument("kmeans-supervector requires equal vector counts per image");
            const auto sv = supervector(s);
            flat.insert(flat.end(), sv.begin(), sv.end());
        }
        auto res = kmeans(PointsView{flat, n * db.dimension()}, K, opt.seed);
        idx.assignments = std::move(res.assignments);
        idx.centroids = std::move(res.centroids);
        return idx;
    }
    if (!kernel) throw std::invalid_argument("kernel-based clustering requires a kernel");
    const auto gram = kernel->gram(db, opt.threads);
    ClusteringResult res;
    if (method == ClusterMethod::KmedoidsKernel) {
        if (K == 0 || K > db.size()) throw std::invalid_argument("build_clustered_index: K must be in [1, |db|]");
        res = kmedoids(kernel_distance_matrix(gram), K, opt.seed);
    } else {
        auto s = gram;
        set_preference(s, opt.ap.preference);
        res = affinity_propagation(s, opt.ap);
    }
    idx.assignments = std::move(res.assignments);
    idx.representatives = std::move(res.exemplars);
    return idx;
}

struct RetrievalReport {
    Ranking ranking;
    std::size_t searched_count = 0;
    std::size_t total_count = 0;
    std::vector<std::size_t> selected_clusters;

    double reduction() const { return reduction_percentage(searched_count, total_count); }
};

/// Scores the query against every cluster representative, keeps the best n_clusters,
/// and ranks the union of their members. Kernel-method clusters are scored with the
/// same bound scorer at the representative image.
template <RetrievalScorer Scorer>
RetrievalReport two_step_retrieve(const FeatureDatabase& db, const ClusteredIndex& index, const LocalFeatureSet& query,
                                  const Scorer& scorer, std::size_t n_clusters, const RetrieveOptions& opt = {}) {
    require_same_dimension(query.dimension(), db.dimension(), "two_step_retrieve");
    if (index.assignments.size() != db.size()) throw std::invalid_argument("two_step_retrieve: index does not match database");
    const std::size_t K = index.cluster_count();
    if (n_clusters == 0 || n_clusters > K) throw std::invalid_argument("two_step_retrieve: n_clusters must be in [1, K]");

    const auto bound = scorer.bind(query);
    std::vector<double> cluster_score(K);
    if (index.method == ClusterMethod::KmeansSupervector) {
        const auto sv = supervector(query);
        for (std::size_t c = 0; c < K; ++c) {
            require_same_dimension(sv.size(), index.centroids[c].size(), "two_step_retrieve (supervector)");
            cluster_score[c] = -std::sqrt(squared_distance(sv, index.centroids[c]));
        }
    } else {
        for (std::size_t c = 0; c < K; ++c) cluster_score[c] = bound(index.representatives[c]);
    }
    std::vector<std::size_t> order(K);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cluster_score[a] > cluster_score[b]; });
    order.resize(n_clusters);

    std::vector<char> chosen(K, 0);
    for (auto c : order) chosen[c] = 1;
    std::vector<std::size_t> candidates;
    std::size_t total = 0;
    for (std::size_t i = 0; i < db.size(); ++i) {
        if (opt.exclude_self && db[i].image_id() == query.image_id()) continue;
        ++total;
        if (chosen[index.assignments[i]]) candidates.push_back(i);
    }
    RetrievalReport rep;
    rep.ranking = rank_candidates(db, query.image_id(), candidates, bound, opt.threads);
    rep.searched_count = candidates.size();
    rep.total_count = total;
    rep.selected_clusters = std::move(order);
    return rep;
}

/// Model-based baseline over the whole database.
inline Ranking baseline_retrieve(const FeatureDatabase& db, const LocalFeatureSet& query, ModelKind kind, Divergence divergence,
                                 const EmConfig& cfg = {}, const RetrieveOptions& opt = {}) {
    BaselineScorer scorer(db, kind, divergence, cfg, opt.threads);
    return one_step_retrieve(db, query, scorer, opt);
}

// ---------------------------------------------------------------------------
// Index text format:
//   INDEX 1 <method> <K>
//   cluster <id> <image_id>          (kernel methods)
//   cluster <id> <reals...>          (kmeans-supervector centroid)
//   assign <image_id> <cluster_id>

inline void write_index(const ClusteredIndex& idx, const FeatureDatabase& db, std::ostream& out) {
    out << "INDEX 1 " << to_string(idx.method) << ' ' << idx.cluster_count() << '\n';
    for (std::size_t c = 0; c < idx.cluster_count(); ++c) {
        out << "cluster " << c;
        if (idx.method == ClusterMethod::KmeansSupervector) {
            for (double v : idx.centroids[c]) out << ' ' << format_real(v);
        } else {
            out << ' ' << db[idx.representatives[c]].image_id();
        }
        out << '\n';
    }
    for (std::size_t i = 0; i < idx.assignments.size(); ++i) out << "assign " << db[i].image_id() << ' ' << idx.assignments[i] << '\n';
}

inline ClusteredIndex read_index(std::istream& in, const FeatureDatabase& db) {
    LineReader reader(in);
    std::string line;
    if (!reader.next(line)) throw FormatError("missing INDEX header", 1);
    auto h = split_ws(line);
    if (h.size() != 4 || h[0] != "INDEX" || h[1] != "1") throw FormatError("malformed header, expected 'INDEX 1 <method> <K>'", reader.line_number());
    ClusteredIndex idx;
    try {
        idx.method = parse_cluster_method(std::string(h[2]));
    } catch (const std::invalid_argument& e) {
        throw FormatError(e.what(), reader.line_number());
    }
    const std::size_t K = parse_count(h[3], reader.line_number());
    if (K == 0) throw FormatError("cluster count must be positive", reader.line_number());
    const bool centroid = idx.method == ClusterMethod::KmeansSupervector;
    (centroid ? idx.centroids.resize(K) : idx.representatives.resize(K));
    std::vector<char> seen_cluster(K, 0);
    idx.assignments.assign(db.size(), K);
    while (reader.next(line)) {
        auto t = split_ws(line);
        if (t.size() >= 3 && t[0] == "cluster") {
            const std::size_t c = parse_count(t[1], reader.line_number());
            if (c >= K || seen_cluster[c]) throw FormatError("bad or duplicate cluster id", reader.line_number());
            seen_cluster[c] = 1;
            if (centroid) {
                for (std::size_t k = 2; k < t.size(); ++k) idx.centroids[c].push_back(parse_real(t[k], reader.line_number()));
            } else {
                if (t.size() != 3) throw FormatError("expected 'cluster <id> <image_id>'", reader.line_number());
                auto pos = db.find(std::string(t[2]));
                if (!pos) throw FormatError("representative '" + std::string(t[2]) + "' not in database", reader.line_number());
                idx.representatives[c] = *pos;
            }
        } else if (t.size() == 3 && t[0] == "assign") {
            auto pos = db.find(std::string(t[1]));
            if (!pos) throw FormatError("image '" + std::string(t[1]) + "' not in database", reader.line_number());
            const std::size_t c = parse_count(t[2], reader.line_number());
            if (c >= K) throw FormatError("cluster id out of range", reader.line_number());
            if (idx.assignments[*pos] != K) throw FormatError("image assigned twice", reader.line_number());
            idx.assignments[*pos] = c;
        } else {
            throw FormatError("expected 'cluster' or 'assign' line", reader.line_number());
        }
    }
    for (std::size_t c = 0; c < K; ++c)
        if (!seen_cluster[c]) throw FormatError("cluster " + std::to_string(c) + " has no representative");
    for (std::size_t i = 0; i < db.size(); ++i)
        if (idx.assignments[i] == K) throw FormatError("image '" + db[i].image_id() + "' is not assigned");
    return idx;
}

inline void save_index(const ClusteredIndex& idx, const FeatureDatabase& db, const std::string& path) {
    auto out = open_output(path);
    write_index(idx, db, out);
    finish_output(out, path);
}

inline ClusteredIndex load_index(const std::string& path, const FeatureDatabase& db) {
    auto in = open_input(path);
    return read_index(in, db);
}

}  // namespace lfir
