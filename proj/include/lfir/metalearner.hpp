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

// Probabilistic meta-learner over a black-box retrieval system. Per database image
// it combines (a) how often the black-box is right about that image, (b) how the
// image's correctness co-varies with which other images the black-box returned, and
// (c) per-image Gaussians over a 48-d visual signature of the query, into log-odds
// used to re-rank the whole search space.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "lfir/error.hpp"
#include "lfir/featurestore.hpp"

namespace lfir {

using IndicatorVector = std::vector<std::uint8_t>;

/// Ordered image ids of the search space with reverse lookup.
class Universe {
public:
    Universe() = default;
    explicit Universe(std::vector<std::string> ids) : ids_(std::move(ids)) {
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            if (!index_.emplace(ids_[i], i).second) throw std::invalid_argument("Universe: duplicate id '" + ids_[i] + "'");
        }
    }
    std::size_t size() const noexcept { return ids_.size(); }
    const std::string& operator[](std::size_t i) const { return ids_[i]; }
    const std::vector<std::string>& ids() const noexcept { return ids_; }
    std::optional<std::size_t> find(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

private:
    std::vector<std::string> ids_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// 1 for the top-min(T, |ranking|) ranked images, 0 elsewhere.
inline IndicatorVector blackbox_indicators(const Ranking& ranking, std::size_t T, const Universe& universe) {
    IndicatorVector out(universe.size(), 0);
    for (std::size_t k = 0; k < ranking.size(); ++k) {
        auto pos = universe.find(ranking[k].image_id);
        if (!pos) throw std::invalid_argument("blackbox_indicators: '" + ranking[k].image_id + "' is not in the search space");
        if (k < T) out[*pos] = 1;
    }
    return out;
}

inline IndicatorVector truth_indicators(const std::set<std::string>& relevant, const Universe& universe) {
    IndicatorVector out(universe.size(), 0);
    for (const auto& id : relevant)
        if (auto pos = universe.find(id)) out[*pos] = 1;
    return out;
}

struct TrainingQuery {
    IndicatorVector retrieved;  // black-box output R
    IndicatorVector truth;      // ground truth G
    std::vector<double> signature;
};

class TrainingCorpus {
public:
    TrainingCorpus(std::size_t search_space, std::size_t signature_dim) : K_(search_space), D_(signature_dim) {}

    void add(TrainingQuery q) {
        if (q.retrieved.size() != K_ || q.truth.size() != K_) throw DimensionError("TrainingCorpus: indicator length != K");
        if (q.signature.size() != D_) throw DimensionError("TrainingCorpus: signature length mismatch");
        for (auto v : q.retrieved)
            if (v > 1) throw std::invalid_argument("TrainingCorpus: indicators must be 0/1");
        for (auto v : q.truth)
            if (v > 1) throw std::invalid_argument("TrainingCorpus: indicators must be 0/1");
        queries_.push_back(std::move(q));
    }

    std::size_t search_space() const noexcept { return K_; }
    std::size_t signature_dim() const noexcept { return D_; }
    std::size_t size() const noexcept { return queries_.size(); }
    const std::vector<TrainingQuery>& queries() const noexcept { return queries_; }
    const TrainingQuery& operator[](std::size_t n) const { return queries_[n]; }

private:
    std::size_t K_, D_;
    std::vector<TrainingQuery> queries_;
};

struct ConditionalEstimate {
    std::optional<double> value;  // empty when the image never had R_j = r
    std::size_t support = 0;      // m: number of training queries with R_j = r
};

/// Fraction of training queries with R_j = r in which image j was truly relevant.
inline ConditionalEstimate estimate_conditional(const TrainingCorpus& corpus, std::size_t j, int r) {
    std::size_t hits = 0, m = 0;
    for (const auto& q : corpus.queries()) {
        if (q.retrieved[j] != r) continue;
        ++m;
        hits += q.truth[j];
    }
    ConditionalEstimate e;
    e.support = m;
    if (m) e.value = static_cast<double>(hits) / static_cast<double>(m);
    return e;
}

/// Same ratio pooled over all images; 0.5 when no image ever had R = r.
inline double prior_estimate(const TrainingCorpus& corpus, int r) {
    if (corpus.size() == 0) throw std::invalid_argument("prior_estimate: empty corpus");
    std::size_t hits = 0, den = 0;
    for (const auto& q : corpus.queries())
        for (std::size_t j = 0; j < corpus.search_space(); ++j) {
            if (q.retrieved[j] != r) continue;
            ++den;
            hits += q.truth[j];
        }
    return den ? static_cast<double>(hits) / static_cast<double>(den) : 0.5;
}

/// Prior for m <= 1, otherwise (1/m) prior + ((m-1)/m) estimate.
inline double smooth(double estimate, double prior, double m) {
    if (m < 0.0) throw std::invalid_argument("smooth: m must be non-negative");
    if (m <= 1.0) return prior;
    return prior / m + (m - 1.0) / m * estimate;
}

inline constexpr double kPairwiseFallback = 0.5;

/// P(R_i = r_i | G_j = g_j, R_j = r_j) from counts; 0.5 when the conditioning never occurred.
inline double estimate_pairwise(const TrainingCorpus& corpus, std::size_t i, std::size_t j, int r_j, int g_j, int r_i) {
    if (i == j) throw std::invalid_argument("estimate_pairwise: i must differ from j");
    std::size_t num = 0, den = 0;
    for (const auto& q : corpus.queries()) {
        if (q.retrieved[j] != r_j || q.truth[j] != g_j) continue;
        ++den;
        num += q.retrieved[i] == r_i;
    }
    return den ? static_cast<double>(num) / static_cast<double>(den) : kPairwiseFallback;
}

struct UnivariateGaussian {
    double mean = 0.0;
    double stddev = 1.0;

    double log_density(double x) const {
        const double z = (x - mean) / stddev;
        return -0.5 * z * z - std::log(stddev) - 0.5 * std::log(2.0 * std::numbers::pi);
    }
    friend bool operator==(const UnivariateGaussian&, const UnivariateGaussian&) = default;
};

inline constexpr double kVisualStdFloor = 1e-3;
inline constexpr double kProbabilityClamp = 1e-6;

/// Per image j, signature dimension d and truth value g: Gaussian over query signatures.
struct VisualModel {
    std::size_t K = 0, D = 0;
    std::vector<UnivariateGaussian> gaussians;  // index (j * D + d) * 2 + g

    const UnivariateGaussian& at(std::size_t j, std::size_t d, int g) const { return gaussians[(j * D + d) * 2 + static_cast<std::size_t>(g)]; }
    UnivariateGaussian& at(std::size_t j, std::size_t d, int g) { return gaussians[(j * D + d) * 2 + static_cast<std::size_t>(g)]; }
    friend bool operator==(const VisualModel&, const VisualModel&) = default;
};

inline UnivariateGaussian fit_univariate(const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return {mean, std::max(std::sqrt(var), kVisualStdFloor)};
}

/// Empty strata fall back to the global per-dimension Gaussian over all training queries.
inline VisualModel fit_visual_gaussians(const TrainingCorpus& corpus) {
    if (corpus.size() == 0) throw std::invalid_argument("fit_visual_gaussians: empty corpus");
    VisualModel vm;
    vm.K = corpus.search_space();
    vm.D = corpus.signature_dim();
    vm.gaussians.resize(vm.K * vm.D * 2);
    std::vector<UnivariateGaussian> global(vm.D);
    for (std::size_t d = 0; d < vm.D; ++d) {
        std::vector<double> xs;
        for (const auto& q : corpus.queries()) xs.push_back(q.signature[d]);
        global[d] = fit_univariate(xs);
    }
    std::vector<double> xs;
    for (std::size_t j = 0; j < vm.K; ++j)
        for (int g = 0; g <= 1; ++g)
            for (std::size_t d = 0; d < vm.D; ++d) {
                xs.clear();
                for (const auto& q : corpus.queries())
                    if (q.truth[j] == g) xs.push_back(q.signature[d]);
                vm.at(j, d, g) = xs.empty() ? global[d] : fit_univariate(xs);
            }
    return vm;
}

struct LogOdds {
    double conditional = 0.0;
    double pairwise = 0.0;
    double visual = 0.0;
    double total() const { return conditional + pairwise + visual; }
};

inline double clamp_probability(double p) { return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp); }

/// Trained meta-learner. Estimates are held as integer counts and turned into
/// probabilities on demand; pairwise counts take K*K*4 integers.
class MetaModel {
public:
    MetaModel() = default;

    /// `universe` names the K images (decimal indices when empty); `threshold` is the
    /// black-box cut-off T recorded for re-ranking time.
    static MetaModel train(const TrainingCorpus& corpus, Universe universe = {}, std::size_t threshold = 0) {
        if (corpus.size() == 0) throw std::invalid_argument("MetaModel::train: empty corpus");
        MetaModel m;
        if (universe.size() == 0) {
            std::vector<std::string> ids;
            for (std::size_t j = 0; j < corpus.search_space(); ++j) ids.push_back(std::to_string(j));
            universe = Universe(std::move(ids));
        }
        if (universe.size() != corpus.search_space()) throw DimensionError("MetaModel::train: universe size != K");
        m.universe_ = std::move(universe);
        m.threshold_ = threshold;
        m.K_ = corpus.search_space();
        m.D_ = corpus.signature_dim();
        m.L_ = corpus.size();
        m.joint_.assign(m.K_ * 4, 0);
        m.ones_.assign(m.K_ * m.K_ * 4, 0);
        std::vector<std::size_t> retrieved;
        for (const auto& q : corpus.queries()) {
            retrieved.clear();
            for (std::size_t i = 0; i < m.K_; ++i)
                if (q.retrieved[i]) retrieved.push_back(i);
            for (std::size_t j = 0; j < m.K_; ++j) {
                const std::size_t cell = q.retrieved[j] * 2u + q.truth[j];
                ++m.joint_[j * 4 + cell];
                for (std::size_t i : retrieved) ++m.ones_[(i * m.K_ + j) * 4 + cell];
            }
        }
        m.visual_ = fit_visual_gaussians(corpus);
        m.finalize();
        return m;
    }

    bool trained() const noexcept { return K_ > 0; }
    std::size_t search_space() const noexcept { return K_; }
    std::size_t signature_dim() const noexcept { return D_; }
    std::size_t training_size() const noexcept { return L_; }
    const VisualModel& visual() const noexcept { return visual_; }
    const Universe& universe() const noexcept { return universe_; }
    std::size_t threshold() const noexcept { return threshold_; }

    /// Training queries with R_j = r and G_j = g.
    std::uint32_t joint_count(std::size_t j, int r, int g) const { return joint_[j * 4 + static_cast<std::size_t>(r * 2 + g)]; }

    double prior(int r) const { return prior_[static_cast<std::size_t>(r)]; }

    ConditionalEstimate conditional(std::size_t j, int r) const {
        ConditionalEstimate e;
        e.support = joint_count(j, r, 0) + joint_count(j, r, 1);
        if (e.support) e.value = static_cast<double>(joint_count(j, r, 1)) / static_cast<double>(e.support);
        return e;
    }

    /// Smoothed P(G_j = 1 | R_j = r).
    double smoothed_conditional(std::size_t j, int r) const {
        const auto e = conditional(j, r);
        return smooth(e.value.value_or(prior(r)), prior(r), static_cast<double>(e.support));
    }

    double pairwise(std::size_t i, std::size_t j, int r_j, int g_j, int r_i) const {
        if (i == j) throw std::invalid_argument("MetaModel::pairwise: i must differ from j");
        const std::uint32_t den = joint_count(j, r_j, g_j);
        if (!den) return kPairwiseFallback;
        const std::uint32_t ones = ones_[(i * K_ + j) * 4 + static_cast<std::size_t>(r_j * 2 + g_j)];
        return static_cast<double>(r_i ? ones : den - ones) / static_cast<double>(den);
    }

    LogOdds log_odds(const IndicatorVector& retrieved, const std::vector<double>& signature, std::size_t j) const {
        check_query(retrieved, signature);
        if (j >= K_) throw std::out_of_range("MetaModel::log_odds: image index out of range");
        LogOdds out;
        const int r_j = retrieved[j];
        const double p = clamp_probability(smoothed_conditional(j, r_j));
        out.conditional = std::log(p / (1.0 - p));
        for (std::size_t i = 0; i < K_; ++i) {
            if (i == j) continue;
            const double p1 = clamp_probability(pairwise(i, j, r_j, 1, retrieved[i]));
            const double p0 = clamp_probability(pairwise(i, j, r_j, 0, retrieved[i]));
            out.pairwise += std::log(p1 / p0);
        }
        for (std::size_t d = 0; d < D_; ++d) {
            out.visual += visual_.at(j, d, 1).log_density(signature[d]) - visual_.at(j, d, 0).log_density(signature[d]);
        }
        return out;
    }

    /// Every image of the search space by descending log-odds, ties by image id.
    Ranking rerank(const std::string& query_id, const IndicatorVector& retrieved, const std::vector<double>& signature,
                   const std::optional<std::string>& exclude = {}) const {
        check_query(retrieved, signature);
        std::vector<RankedItem> items;
        items.reserve(K_);
        for (std::size_t j = 0; j < K_; ++j) {
            if (exclude && universe_[j] == *exclude) continue;
            items.push_back({universe_[j], log_odds(retrieved, signature, j).total()});
        }
        return Ranking::from_scores(query_id, std::move(items));
    }

    /// Re-ranks a black-box ranking using the stored threshold T.
    Ranking rerank(const Ranking& blackbox, const std::vector<double>& signature, const std::optional<std::string>& exclude = {}) const {
        return rerank(blackbox.query_id(), blackbox_indicators(blackbox, threshold_, universe_), signature, exclude);
    }

    // Text format:
    //   META 1 <K> <D> <L> <T>
    //   image <j> <image_id>
    //   prior <p(r=0)> <p(r=1)>
    //   joint <j> <n00> <n01> <n10> <n11>           counts of (R_j, G_j)
    //   pair <i> <j> <c00> <c01> <c10> <c11>        counts of R_i = 1 per (R_j, G_j); zero rows omitted
    //   visual <j> <g> <mean_1..mean_D> <std_1..std_D>
    void write(std::ostream& out) const {
        out << "META 1 " << K_ << ' ' << D_ << ' ' << L_ << ' ' << threshold_ << '\n';
        for (std::size_t j = 0; j < K_; ++j) out << "image " << j << ' ' << universe_[j] << '\n';
        out << "prior " << format_real(prior_[0]) << ' ' << format_real(prior_[1]) << '\n';
        for (std::size_t j = 0; j < K_; ++j) {
            out << "joint " << j;
            for (int c = 0; c < 4; ++c) out << ' ' << joint_[j * 4 + static_cast<std::size_t>(c)];
            out << '\n';
        }
        for (std::size_t i = 0; i < K_; ++i)
            for (std::size_t j = 0; j < K_; ++j) {
                const std::size_t base = (i * K_ + j) * 4;
                if (!(ones_[base] | ones_[base + 1] | ones_[base + 2] | ones_[base + 3])) continue;
                out << "pair " << i << ' ' << j;
                for (int c = 0; c < 4; ++c) out << ' ' << ones_[base + static_cast<std::size_t>(c)];
                out << '\n';
            }
        for (std::size_t j = 0; j < K_; ++j)
            for (int g = 0; g <= 1; ++g) {
                out << "visual " << j << ' ' << g;
                for (std::size_t d = 0; d < D_; ++d) out << ' ' << format_real(visual_.at(j, d, g).mean);
                for (std::size_t d = 0; d < D_; ++d) out << ' ' << format_real(visual_.at(j, d, g).stddev);
                out << '\n';
            }
    }

    static MetaModel read(std::istream& in) {
        LineReader reader(in);
        std::string line;
        if (!reader.next(line)) throw FormatError("missing META header", 1);
        auto h = split_ws(line);
        if (h.size() != 6 || h[0] != "META" || h[1] != "1") {
            throw FormatError("malformed header, expected 'META 1 <K> <D> <L> <T>'", reader.line_number());
        }
        MetaModel m;
        m.K_ = parse_count(h[2], reader.line_number());
        m.D_ = parse_count(h[3], reader.line_number());
        m.L_ = parse_count(h[4], reader.line_number());
        m.threshold_ = parse_count(h[5], reader.line_number());
        if (!m.K_ || !m.L_) throw FormatError("K and L must be positive", reader.line_number());
        m.joint_.assign(m.K_ * 4, 0);
        m.ones_.assign(m.K_ * m.K_ * 4, 0);
        m.visual_.K = m.K_;
        m.visual_.D = m.D_;
        m.visual_.gaussians.resize(m.K_ * m.D_ * 2);
        std::vector<char> visual_seen(m.K_ * 2, 0);
        std::vector<std::string> ids(m.K_);
        std::optional<std::array<double, 2>> stored_prior;
        auto count = [&](std::string_view t) {
            const std::size_t v = parse_count(t, reader.line_number());
            if (v > m.L_) throw FormatError("count exceeds training size", reader.line_number());
            return static_cast<std::uint32_t>(v);
        };
        auto index = [&](std::string_view t) {
            const std::size_t v = parse_count(t, reader.line_number());
            if (v >= m.K_) throw FormatError("image index out of range", reader.line_number());
            return v;
        };
        while (reader.next(line)) {
            auto t = split_ws(line);
            if (t.empty()) continue;
            if (t[0] == "image" && t.size() == 3) {
                const std::size_t j = index(t[1]);
                if (!ids[j].empty()) throw FormatError("duplicate image line", reader.line_number());
                ids[j] = std::string(t[2]);
            } else if (t[0] == "prior" && t.size() == 3) {
                stored_prior = std::array<double, 2>{parse_real(t[1], reader.line_number()), parse_real(t[2], reader.line_number())};
            } else if (t[0] == "joint" && t.size() == 6) {
                const std::size_t j = index(t[1]);
                for (std::size_t c = 0; c < 4; ++c) m.joint_[j * 4 + c] = count(t[2 + c]);
            } else if (t[0] == "pair" && t.size() == 7) {
                const std::size_t i = index(t[1]), j = index(t[2]);
                for (std::size_t c = 0; c < 4; ++c) m.ones_[(i * m.K_ + j) * 4 + c] = count(t[3 + c]);
            } else if (t[0] == "visual" && t.size() == 3 + 2 * m.D_) {
                const std::size_t j = index(t[1]);
                const std::size_t g = parse_count(t[2], reader.line_number());
                if (g > 1) throw FormatError("g must be 0 or 1", reader.line_number());
                for (std::size_t d = 0; d < m.D_; ++d) {
                    auto& gauss = m.visual_.at(j, d, static_cast<int>(g));
                    gauss.mean = parse_real(t[3 + d], reader.line_number());
                    gauss.stddev = parse_real(t[3 + m.D_ + d], reader.line_number());
                    if (!(gauss.stddev > 0.0)) throw FormatError("visual std must be positive", reader.line_number());
                }
                visual_seen[j * 2 + g] = 1;
            } else {
                throw FormatError("unrecognised meta-model line", reader.line_number());
            }
        }
        for (std::size_t j = 0; j < m.K_; ++j) {
            std::uint32_t total = 0;
            for (std::size_t c = 0; c < 4; ++c) total += m.joint_[j * 4 + c];
            if (total != m.L_) throw FormatError("joint counts for image " + std::to_string(j) + " do not sum to L");
        }
        for (const auto& id : ids)
            if (id.empty()) throw FormatError("missing image id line");
        try {
            m.universe_ = Universe(std::move(ids));
        } catch (const std::invalid_argument& e) {
            throw FormatError(e.what());
        }
        for (char seen : visual_seen)
            if (!seen) throw FormatError("missing visual Gaussian section");
        m.finalize();
        if (stored_prior && (std::abs((*stored_prior)[0] - m.prior_[0]) > 1e-12 || std::abs((*stored_prior)[1] - m.prior_[1]) > 1e-12)) {
            throw FormatError("stored prior disagrees with counts");
        }
        return m;
    }

private:
    void finalize() {
        for (int r = 0; r <= 1; ++r) {
            std::size_t hits = 0, den = 0;
            for (std::size_t j = 0; j < K_; ++j) {
                hits += joint_count(j, r, 1);
                den += joint_count(j, r, 0) + joint_count(j, r, 1);
            }
            prior_[static_cast<std::size_t>(r)] = den ? static_cast<double>(hits) / static_cast<double>(den) : 0.5;
        }
    }

    void check_query(const IndicatorVector& retrieved, const std::vector<double>& signature) const {
        if (!trained()) throw std::logic_error("MetaModel: model is not trained");
        if (retrieved.size() != K_) throw DimensionError("MetaModel: indicator length != K");
        if (signature.size() != D_) throw DimensionError("MetaModel: signature length != D");
    }

    std::size_t K_ = 0, D_ = 0, L_ = 0, threshold_ = 0;
    Universe universe_;
    std::vector<std::uint32_t> joint_;
    std::vector<std::uint32_t> ones_;
    std::array<double, 2> prior_{0.5, 0.5};
    VisualModel visual_;
};

/// One training query per black-box ranking; every ranked query needs ground truth and a signature.
inline TrainingCorpus build_training_corpus(const std::vector<Ranking>& blackbox, const GroundTruthTable& truth,
                                            const SignatureTable& signatures, const Universe& universe, std::size_t T) {
    if (blackbox.empty()) throw std::invalid_argument("build_training_corpus: no training rankings");
    const std::size_t D = signatures.entries().empty() ? 0 : signatures.entries().front().second.size();
    TrainingCorpus corpus(universe.size(), D);
    for (const auto& r : blackbox) {
        if (!truth.contains(r.query_id())) throw std::invalid_argument("build_training_corpus: no ground truth for '" + r.query_id() + "'");
        if (!signatures.contains(r.query_id())) throw std::invalid_argument("build_training_corpus: no signature for '" + r.query_id() + "'");
        corpus.add({blackbox_indicators(r, T, universe), truth_indicators(truth.relevant(r.query_id()), universe), signatures.at(r.query_id())});
    }
    return corpus;
}

inline void save_meta_model(const MetaModel& m, const std::string& path) {
    auto out = open_output(path);
    m.write(out);
    finish_output(out, path);
}

inline MetaModel load_meta_model(const std::string& path) {
    auto in = open_input(path);
    return MetaModel::read(in);
}

}  // namespace lfir
