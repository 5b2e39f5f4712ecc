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

// Ranked-retrieval and classification metrics: precision/recall curves, interpolated
// precision, 11-point interpolated AP, average precision / MAP, accuracy.

#include <algorithm>
#include <array>
#include <cstdio>
#include <optional>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "lfir/featurestore.hpp"

namespace lfir {

struct PrPoint {
    double recall = 0.0;
    double precision = 0.0;
};

struct PrCurve {
    std::vector<PrPoint> points;  // one per rank
};

inline constexpr std::size_t kRecallLevels = 11;
using ElevenPoint = std::array<double, kRecallLevels>;

/// Recall level i of the 11-point scheme (i / 10).
inline double recall_level(std::size_t i) { return static_cast<double>(i) / 10.0; }

inline PrCurve pr_curve(const Ranking& ranking, const std::set<std::string>& relevant) {
    if (relevant.empty()) throw std::invalid_argument("pr_curve: empty relevant set");
    PrCurve curve;
    curve.points.reserve(ranking.size());
    std::size_t hits = 0;
    for (std::size_t k = 0; k < ranking.size(); ++k) {
        if (relevant.count(ranking[k].image_id)) ++hits;
        curve.points.push_back({static_cast<double>(hits) / static_cast<double>(relevant.size()),
                                static_cast<double>(hits) / static_cast<double>(k + 1)});
    }
    return curve;
}

/// Highest precision at any recall >= r; 0 when the curve never reaches r.
inline double interpolated_precision(const PrCurve& curve, double r) {
    double best = 0.0;
    for (const auto& p : curve.points)
        if (p.recall >= r) best = std::max(best, p.precision);
    return best;
}

inline ElevenPoint eleven_point_curve(const Ranking& ranking, const std::set<std::string>& relevant) {
    const auto curve = pr_curve(ranking, relevant);
    ElevenPoint out{};
    for (std::size_t i = 0; i < kRecallLevels; ++i) out[i] = interpolated_precision(curve, recall_level(i));
    return out;
}

inline const std::set<std::string>& relevant_for(const GroundTruthTable& truth, const std::string& query) {
    if (!truth.contains(query)) throw std::invalid_argument("no ground truth for query '" + query + "'");
    return truth.relevant(query);
}

/// Per recall level, mean interpolated precision over the queries (in ranking order).
inline ElevenPoint eleven_point_ap(const std::vector<Ranking>& rankings, const GroundTruthTable& truth) {
    if (rankings.empty()) throw std::invalid_argument("eleven_point_ap: no rankings");
    ElevenPoint sum{};
    for (const auto& r : rankings) {
        const auto e = eleven_point_curve(r, relevant_for(truth, r.query_id()));
        for (std::size_t i = 0; i < kRecallLevels; ++i) sum[i] += e[i];
    }
    for (auto& v : sum) v /= static_cast<double>(rankings.size());
    return sum;
}

/// Mean of precision@rank over the relevant images; relevant images absent from
/// the ranking contribute 0.
inline double average_precision(const Ranking& ranking, const std::set<std::string>& relevant) {
    if (relevant.empty()) throw std::invalid_argument("average_precision: empty relevant set");
    std::size_t hits = 0;
    double sum = 0.0;
    for (std::size_t k = 0; k < ranking.size(); ++k) {
        if (!relevant.count(ranking[k].image_id)) continue;
        ++hits;
        sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
    return sum / static_cast<double>(relevant.size());
}

inline std::vector<double> per_query_average_precision(const std::vector<Ranking>& rankings, const GroundTruthTable& truth) {
    std::vector<double> out;
    out.reserve(rankings.size());
    for (const auto& r : rankings) out.push_back(average_precision(r, relevant_for(truth, r.query_id())));
    return out;
}

inline double mean_average_precision(const std::vector<Ranking>& rankings, const GroundTruthTable& truth) {
    if (rankings.empty()) throw std::invalid_argument("mean_average_precision: no rankings");
    double s = 0.0;
    for (double ap : per_query_average_precision(rankings, truth)) s += ap;
    return s / static_cast<double>(rankings.size());
}

inline double accuracy(const std::vector<std::string>& predictions, const std::vector<std::string>& labels) {
    if (predictions.size() != labels.size()) throw std::invalid_argument("accuracy: length mismatch");
    if (predictions.empty()) throw std::invalid_argument("accuracy: empty input");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

/// Percentage of the repository skipped by a pruned search.
inline double reduction_percentage(std::size_t searched, std::size_t total) {
    if (total == 0 || searched > total) throw std::invalid_argument("reduction_percentage: need searched <= total, total > 0");
    return 100.0 * (1.0 - static_cast<double>(searched) / static_cast<double>(total));
}

struct EvaluationReport {
    std::vector<std::string> queries;
    std::vector<double> average_precision;
    double map = 0.0;
    ElevenPoint eleven_point{};
    /// Mean over queries of the per-query search-space reduction (two-step runs only).
    std::optional<double> mean_reduction;
};

inline EvaluationReport evaluate(const std::vector<Ranking>& rankings, const GroundTruthTable& truth) {
    EvaluationReport rep;
    for (const auto& r : rankings) rep.queries.push_back(r.query_id());
    rep.average_precision = per_query_average_precision(rankings, truth);
    rep.map = mean_average_precision(rankings, truth);
    rep.eleven_point = eleven_point_ap(rankings, truth);
    return rep;
}

inline std::string fixed6(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline void write_report_text(const EvaluationReport& rep, std::ostream& out) {
    out << "query\taverage_precision\n";
    for (std::size_t i = 0; i < rep.queries.size(); ++i) out << rep.queries[i] << '\t' << fixed6(rep.average_precision[i]) << '\n';
    out << "MAP\t" << fixed6(rep.map) << '\n';
    out << "recall\tinterpolated_precision\n";
    for (std::size_t i = 0; i < kRecallLevels; ++i) out << fixed6(recall_level(i)).substr(0, 3) << '\t' << fixed6(rep.eleven_point[i]) << '\n';
    if (rep.mean_reduction) out << "mean_reduction_percent (per-query mean)\t" << fixed6(*rep.mean_reduction) << '\n';
}

inline void write_report_csv(const EvaluationReport& rep, std::ostream& out) {
    out << "section,key,value\n";
    for (std::size_t i = 0; i < rep.queries.size(); ++i) out << "ap," << rep.queries[i] << ',' << fixed6(rep.average_precision[i]) << '\n';
    out << "map,all," << fixed6(rep.map) << '\n';
    for (std::size_t i = 0; i < kRecallLevels; ++i) out << "interp," << fixed6(recall_level(i)).substr(0, 3) << ',' << fixed6(rep.eleven_point[i]) << '\n';
    if (rep.mean_reduction) out << "reduction,mean," << fixed6(*rep.mean_reduction) << '\n';
}

}  // namespace lfir
