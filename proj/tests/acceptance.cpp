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

// Acceptance driver: one PASS/FAIL line per criterion, nonzero exit when any fails.
// Reference values come from the oracles in oracles.hpp or are computed inline here.

#include <mpfr.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "lfir/lfir.hpp"
#include "oracles.hpp"

using namespace lfir;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string strf(const char* f, ...) {
    char buf[1024];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int g_failed = 0;

void criterion(int number, const char* name, const std::function<Verdict()>& body) {
    const auto t0 = Clock::now();
    Verdict v;
    try {
        v = body();
    } catch (const std::exception& e) {
        v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++g_failed;
    std::printf("%s %2d %s: %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", number, name, v.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
}

// ---------------------------------------------------------------------------
// Shared synthetic runs for the end-to-end criteria.

struct SynthRun {
    std::uint64_t seed = 0;
    SynthData data;
    double delta = 0.0;
    GaussianMixture ubm;
    std::unique_ptr<SetKernel> ubm_kernel;
    std::unique_ptr<KernelScorer> ubm_scorer;
    std::vector<Ranking> ubm_rankings;  // one-step, self excluded, database order
};

constexpr std::size_t kVocabSize = 8;

const SynthRun& synth_run(std::uint64_t seed) {
    static std::map<std::uint64_t, std::unique_ptr<SynthRun>> cache;
    auto& slot = cache[seed];
    if (slot) return *slot;
    auto run = std::make_unique<SynthRun>();
    run->seed = seed;
    SynthSpec spec;
    spec.seed = seed;
    run->data = generate(spec);
    run->delta = median_delta(run->data.db, seed);
    EmConfig em;
    em.seed = seed;
    run->ubm = fit_ubm(run->data.db, kVocabSize, em);
    run->ubm_kernel = std::make_unique<SetKernel>(SetKernel::imk(VirtualVocabulary::ubm(run->ubm), BaseKernel{run->delta}));
    run->ubm_scorer = std::make_unique<KernelScorer>(run->data.db, *run->ubm_kernel);
    RetrieveOptions opt;
    opt.exclude_self = true;
    for (const auto& q : run->data.db) run->ubm_rankings.push_back(one_step_retrieve(run->data.db, q, *run->ubm_scorer, opt));
    slot = std::move(run);
    return *slot;
}

// ---------------------------------------------------------------------------

Verdict kernel_correctness() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<std::size_t> size(1, 6), dim(1, 4);
    std::uniform_real_distribution<double> delta_dist(0.1, 2.0);
    std::size_t mismatches = 0;
    std::string first;
    for (int t = 0; t < 200; ++t) {
        const std::size_t d = dim(rng);
        const double delta = delta_dist(rng);
        const BaseKernel base{delta};
        const auto X = fixtures::random_set(rng, size(rng), d, "x"), Y = fixtures::random_set(rng, size(rng), d, "y");
        const auto ubm = fixtures::random_mixture(rng, 3, d);
        std::vector<FeatureVector> centers;
        for (int q = 0; q < 3; ++q) centers.push_back(fixtures::random_set(rng, 1, d).vector(0));
        const double D = std::ldexp(1.0, 1 + t % 3);
        const auto BX = fixtures::random_set_in_box(rng, size(rng), d, D), BY = fixtures::random_set_in_box(rng, size(rng), d, D);

        const std::pair<const char*, bool> checks[] = {
            {"summation", summation_kernel(X, Y, base) == oracle::summation(X, Y, delta)},
            {"matching", matching_kernel(X, Y, base) == oracle::matching(X, Y, delta)},
            {"imk-ubm", imk(X, Y, VirtualVocabulary::ubm(ubm), base) == oracle::imk_ubm(X, Y, ubm, delta)},
            {"imk-centers", imk(X, Y, VirtualVocabulary::centers(centers), base) == oracle::imk_centers(X, Y, centers, delta)},
            {"pyramid", pyramid_match(BX, BY, D) == oracle::pyramid(BX, BY, D)},
        };
        for (const auto& [name, ok] : checks) {
            if (ok) continue;
            if (!mismatches++) first = strf("%s at pair %d", name, t);
        }
    }
    const double elapsed = seconds_since(t0);
    Verdict v;
    v.pass = mismatches == 0 && elapsed < 10.0;
    v.detail = strf("200 pairs x 5 kernels, %zu mismatches%s%s, %.2f s (limit 10 s)", mismatches, mismatches ? ", first " : "",
                    first.c_str(), elapsed);
    return v;
}

Verdict mercer_check() {
    std::mt19937_64 rng(202);
    std::uniform_int_distribution<std::size_t> size(1, 10);
    FeatureDatabase db(3);
    for (int i = 0; i < 20; ++i) db.add(fixtures::random_set(rng, size(rng), 3, strf("s%02d", i)));
    double worst = INFINITY;
    for (double delta : {0.05, 0.5, 5.0}) {
        const auto gram = SetKernel::summation(BaseKernel{delta}).gram(db);
        Eigen::MatrixXd m(20, 20);
        for (int i = 0; i < 20; ++i)
            for (int j = 0; j < 20; ++j) m(i, j) = gram(i, j);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
        worst = std::min(worst, es.eigenvalues().minCoeff());
    }
    return {worst >= -1e-8, strf("20 sets, delta in {0.05, 0.5, 5}; min eigenvalue %.3e (limit -1e-8)", worst)};
}

Verdict self_values() {
    std::mt19937_64 rng(303);
    std::size_t bad_imk = 0, bad_pyr = 0, bad_rbf = 0;
    double worst_pyr = 0.0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t d = 1 + t % 4, Q = 1 + t % 7;
        const auto X = fixtures::random_set(rng, 1 + t % 9, d);
        const auto ubm = fixtures::random_mixture(rng, Q, d);
        std::vector<FeatureVector> centers;
        for (std::size_t q = 0; q < Q; ++q) centers.push_back(fixtures::random_set(rng, 1, d).vector(0));
        const BaseKernel base{0.1 + 0.05 * t};
        if (imk(X, X, VirtualVocabulary::ubm(ubm), base) != static_cast<double>(Q)) ++bad_imk;
        if (imk(X, X, VirtualVocabulary::centers(centers), base) != static_cast<double>(Q)) ++bad_imk;
        const double D = std::ldexp(1.0, 1 + t % 4);
        const auto B = fixtures::random_set_in_box(rng, 1 + t % 9, d, D);
        const double err = std::abs(pyramid_match(B, B, D) - 1.0);
        worst_pyr = std::max(worst_pyr, err);
        if (err > 1e-12) ++bad_pyr;
        for (std::size_t i = 0; i < X.size(); ++i)
            if (rbf(X[i], X[i], base.delta) != 1.0) ++bad_rbf;
    }
    return {bad_imk + bad_pyr + bad_rbf == 0,
            strf("100 sets: imk(X,X)!=Q %zu, |pyramid(X,X)-1|>1e-12 %zu (max %.1e), rbf(x,x)!=1 %zu", bad_imk, bad_pyr, worst_pyr,
                 bad_rbf)};
}

Verdict monotonicity() {
    std::mt19937_64 rng(404);
    std::size_t em_bad = 0, km_bad = 0, kmed_bad = 0, em_steps = 0, km_steps = 0, kmed_steps = 0;
    double em_worst = 0.0;
    std::normal_distribution<double> centre(0.0, 3.0);
    for (int t = 0; t < 50; ++t) {
        const std::size_t d = 1 + t % 4, Q = 2 + t % 4, n = 60 + 10 * (t % 5);
        std::vector<std::vector<double>> centres(Q, std::vector<double>(d));
        for (auto& c : centres)
            for (auto& v : c) v = centre(rng);
        const auto pts = fixtures::blobs(rng, centres, n / Q, 1.0);
        const PointsView view{pts, d};

        EmConfig em;
        em.seed = static_cast<std::uint64_t>(t);
        em.tolerance = 0.0;
        em.max_iterations = 60;
        const auto fit = fit_gmm_traced(view, Q, em);
        const auto& tr = fit.log_likelihood_trace;
        for (std::size_t i = 1; i < tr.size(); ++i) {
            ++em_steps;
            em_worst = std::max(em_worst, tr[i - 1] - tr[i]);
            if (tr[i] < tr[i - 1] - 1e-9) ++em_bad;
        }

        KMeansConfig kc;
        kc.restarts = 1;
        kc.init = t % 2 ? InitMethod::Random : InitMethod::PlusPlus;
        const auto km = kmeans(view, Q, static_cast<std::uint64_t>(t), kc);
        for (std::size_t i = 1; i < km.objective_trace.size(); ++i) {
            ++km_steps;
            if (km.objective_trace[i] > km.objective_trace[i - 1]) ++km_bad;
        }

        const std::size_t count = pts.size() / d;
        SquareMatrix dist(count);
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t j = 0; j < count; ++j) dist(i, j) = std::sqrt(oracle::sqdist(&pts[i * d], &pts[j * d], d));
        KMedoidsConfig mc;
        mc.restarts = 1;
        mc.init = kc.init;
        const auto kmed = kmedoids(dist, Q, static_cast<std::uint64_t>(t), mc);
        for (std::size_t i = 1; i < kmed.objective_trace.size(); ++i) {
            ++kmed_steps;
            if (kmed.objective_trace[i] > kmed.objective_trace[i - 1]) ++kmed_bad;
        }
    }
    const bool counted = em_steps > 0 && km_steps > 0 && kmed_steps > 0;
    return {counted && em_bad + km_bad + kmed_bad == 0,
            strf("50 fits: EM decreases %zu/%zu steps (largest drop %.1e), k-means increases %zu/%zu, k-medoids increases %zu/%zu",
                 em_bad, em_steps, em_worst, km_bad, km_steps, kmed_bad, kmed_steps)};
}

Verdict clustering_recovery() {
    std::mt19937_64 rng(505);
    // Five centres at pairwise distance 10 with unit noise.
    const double s = 10.0 / std::sqrt(2.0);
    std::vector<std::vector<double>> centres(5, std::vector<double>(5, 0.0));
    for (std::size_t c = 0; c < 5; ++c) centres[c][c] = s;
    std::vector<std::size_t> membership;
    const auto pts = fixtures::blobs(rng, centres, 20, 1.0, &membership);
    const std::size_t d = 5, n = membership.size();

    const auto km = kmeans(PointsView{pts, d}, 5, 7);
    SquareMatrix dist(n), sim(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double sq = oracle::sqdist(&pts[i * d], &pts[j * d], d);
            dist(i, j) = std::sqrt(sq);
            sim(i, j) = -sq;
        }
    const auto kmed = kmedoids(dist, 5, 7);
    ApConfig ap;  // median preference, damping 0.5
    set_preference(sim, ap.preference);
    const auto apr = affinity_propagation(sim, ap);
    const bool ok_km = fixtures::same_partition(km.assignments, membership);
    const bool ok_kmed = fixtures::same_partition(kmed.assignments, membership);
    const bool ok_ap = fixtures::same_partition(apr.assignments, membership);
    const bool ap_conv = apr.converged && apr.iterations <= 500;
    return {ok_km && ok_kmed && ok_ap && ap_conv,
            strf("5 blobs x 20, centre distance 10, sd 1: k-means %s, k-medoids %s, AP %s (%zu clusters, %s after %zu iterations)",
                 ok_km ? "exact" : "WRONG", ok_kmed ? "exact" : "WRONG", ok_ap ? "exact" : "WRONG", apr.cluster_count(),
                 apr.converged ? "converged" : "NOT converged", apr.iterations)};
}

Verdict metric_oracle() {
    std::mt19937_64 rng(606);
    std::size_t bad_ap = 0, bad_interp = 0;
    std::vector<Ranking> rankings;
    GroundTruthTable truth;
    std::vector<double> oracle_aps;
    std::vector<std::array<double, 11>> oracle_curves;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t pool = 2 + t % 40;
        std::vector<std::string> ids;
        for (std::size_t i = 0; i < pool; ++i) ids.push_back(strf("d%03zu", i));
        std::shuffle(ids.begin(), ids.end(), rng);
        std::uniform_int_distribution<std::size_t> len(1, pool), nrel(1, pool);
        const std::size_t L = len(rng);
        std::set<std::string> rel;
        std::vector<std::string> shuffled = ids;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        const std::size_t R = nrel(rng);
        for (std::size_t i = 0; i < R; ++i) rel.insert(shuffled[i]);
        ids.resize(L);
        std::vector<RankedItem> items;
        for (std::size_t i = 0; i < L; ++i) items.push_back({ids[i], static_cast<double>(L - i)});
        const std::string q = strf("q%04d", t);
        Ranking r(q, items);
        truth.add(q, rel);

        const double ap = oracle::average_precision(ids, rel);
        if (average_precision(r, rel) != ap) ++bad_ap;
        const auto curve = eleven_point_curve(r, rel);
        std::array<double, 11> oc{};
        for (std::size_t i = 0; i < 11; ++i) {
            oc[i] = oracle::interpolated_at_level(ids, rel, i);
            if (curve[i] != oc[i]) ++bad_interp;
        }
        oracle_aps.push_back(ap);
        oracle_curves.push_back(oc);
        rankings.push_back(std::move(r));
    }
    const double map = oracle::mpfr_sum(oracle_aps) / 1000.0;
    const double lib_map = mean_average_precision(rankings, truth);
    const bool map_ok = std::abs(lib_map - map) <= 1e-12;
    const auto mean_curve = eleven_point_ap(rankings, truth);
    std::size_t bad_mean_curve = 0;
    for (std::size_t i = 0; i < 11; ++i) {
        std::vector<double> col;
        for (const auto& c : oracle_curves) col.push_back(c[i]);
        if (std::abs(mean_curve[i] - oracle::mpfr_sum(col) / 1000.0) > 1e-12) ++bad_mean_curve;
    }

    // Hand case: relevant at ranks 1 and 4 of 5.
    Ranking hand("q", {{"r1", 5}, {"n2", 4}, {"n3", 3}, {"r4", 2}, {"n5", 1}});
    const std::set<std::string> hrel{"r1", "r4"};
    const auto hc = eleven_point_curve(hand, hrel);
    bool hand_ok = average_precision(hand, hrel) == 0.75;
    for (std::size_t i = 0; i < 11; ++i) hand_ok = hand_ok && hc[i] == (i <= 5 ? 1.0 : 0.5);

    return {bad_ap + bad_interp + bad_mean_curve == 0 && map_ok && hand_ok,
            strf("1000 rankings: AP mismatches %zu, 11-point mismatches %zu, MAP diff %.1e, mean curve mismatches %zu; "
                 "hand case AP %.6f %s",
                 bad_ap, bad_interp, std::abs(lib_map - map), bad_mean_curve, average_precision(hand, hrel),
                 hand_ok ? "curve (1x6, 0.5x5)" : "curve WRONG")};
}

Verdict divergence_sanity() {
    std::mt19937_64 rng(707);
    std::size_t self_bad = 0;
    for (int t = 0; t < 20; ++t) {
        const auto g = fixtures::random_mixture(rng, 1, 1 + t % 4);
        const auto m = fixtures::random_mixture(rng, 2 + t % 3, 1 + t % 4);
        if (kl_divergence(g, g) != 0.0) ++self_bad;
        if (c2_distance(g, g) != 0.0) ++self_bad;
        if (c2_distance(m, m) != 0.0) ++self_bad;
    }
    double worst_s = 0.0, worst_c2 = 0.0, min_c2 = INFINITY;
    std::mt19937_64 mc(708);
    for (int t = 0; t < 20; ++t) {
        const auto p = fixtures::random_mixture(rng, 2, 3);
        const auto q = fixtures::random_mixture(rng, 2, 3);
        const double spq = oracle::mc_product_integral(p, q, 1000000, mc);
        const double spp = oracle::mc_product_integral(p, p, 1000000, mc);
        const double sqq = oracle::mc_product_integral(q, q, 1000000, mc);
        const double lpq = overlap(p, q), lpp = overlap(p, p), lqq = overlap(q, q);
        worst_s = std::max({worst_s, std::abs(lpq - spq) / spq, std::abs(lpp - spp) / spp, std::abs(lqq - sqq) / sqq});
        const double c2_mc = -std::log(2.0 * spq / (spp + sqq));
        const double c2 = c2_distance(p, q);
        min_c2 = std::min(min_c2, c2);
        worst_c2 = std::max(worst_c2, std::abs(c2 - c2_mc) / c2_mc);
    }
    return {self_bad == 0 && worst_s <= 0.02 && worst_c2 <= 0.02,
            strf("self-divergence nonzero %zu/60; 20 mixture pairs vs 1e6-sample MC: max rel err S %.2e, C2 %.2e (limit 2e-2, "
                 "smallest C2 %.3f)",
                 self_bad, worst_s, worst_c2, min_c2)};
}

Verdict two_step_consistency() {
    std::mt19937_64 rng(808);
    std::size_t cases = 0, order_bad = 0, count_bad = 0;
    for (int t = 0; t < 24; ++t) {
        const std::size_t d = 1 + t % 3;
        const bool equal_counts = t % 4 == 3;
        const auto db = equal_counts ? fixtures::random_db(rng, 15, 5, 5, d) : fixtures::random_db(rng, 15 + t % 6, 2, 7, d);
        const double delta = 0.2 + 0.1 * (t % 5);
        SetKernel kernel = SetKernel::summation(BaseKernel{delta});
        switch (t % 4) {
            case 1: kernel = SetKernel::matching(BaseKernel{delta}); break;
            case 2: kernel = SetKernel::imk(VirtualVocabulary::ubm(fixtures::random_mixture(rng, 3, d)), BaseKernel{delta}); break;
            case 3: kernel = SetKernel::pyramid(PyramidScaler::fit(db)); break;
            default: break;
        }
        const KernelScorer scorer(db, kernel);
        std::vector<ClusteredIndex> indexes;
        IndexOptions io;
        io.seed = static_cast<std::uint64_t>(t);
        indexes.push_back(build_clustered_index(db, ClusterMethod::KmedoidsKernel, 1 + t % 5, &kernel, io));
        indexes.push_back(build_clustered_index(db, ClusterMethod::ApKernel, 0, &kernel, io));
        if (equal_counts) indexes.push_back(build_clustered_index(db, ClusterMethod::KmeansSupervector, 3, nullptr, io));
        for (const auto& idx : indexes) {
            const auto members = idx.members();
            const std::size_t K = idx.cluster_count();
            for (bool exclude : {false, true}) {
                RetrieveOptions opt;
                opt.exclude_self = exclude;
                for (const auto& q : db) {
                    ++cases;
                    const auto one = one_step_retrieve(db, q, scorer, opt);
                    const auto all = two_step_retrieve(db, idx, q, scorer, K, opt);
                    if (one.ids() != all.ranking.ids()) ++order_bad;
                    for (std::size_t n = 1; n <= K; ++n) {
                        const auto rep = two_step_retrieve(db, idx, q, scorer, n, opt);
                        std::size_t searched = 0, total = 0;
                        for (std::size_t c : rep.selected_clusters)
                            for (std::size_t i : members[c]) searched += !(exclude && db[i].image_id() == q.image_id());
                        for (std::size_t i = 0; i < db.size(); ++i) total += !(exclude && db[i].image_id() == q.image_id());
                        const double expect = 100.0 * (1.0 - static_cast<double>(searched) / static_cast<double>(total));
                        if (rep.searched_count != searched || rep.total_count != total || rep.ranking.size() != searched ||
                            std::abs(rep.reduction() - expect) > 1e-12)
                            ++count_bad;
                    }
                }
            }
        }
    }
    return {order_bad + count_bad == 0 && cases > 0,
            strf("%zu queries over 24 databases (4 kernels; k-medoids, AP, supervector indexes): order mismatches %zu, "
                 "reduction mismatches %zu",
                 cases, order_bad, count_bad)};
}

// Product of ratios in 256-bit MPFR, then one log.
double log_of_product(const std::vector<std::pair<double, double>>& ratios, const std::vector<std::array<double, 5>>& gaussians) {
    mpfr_t acc, num, den, tmp;
    mpfr_inits2(256, acc, num, den, tmp, (mpfr_ptr)0);
    mpfr_set_d(acc, 1.0, MPFR_RNDN);
    for (const auto& [a, b] : ratios) {
        mpfr_mul_d(acc, acc, a, MPFR_RNDN);
        mpfr_div_d(acc, acc, b, MPFR_RNDN);
    }
    // x, mean1, sd1, mean0, sd0: multiply by N(x|m1,s1)/N(x|m0,s0).
    auto density = [&](mpfr_t out, double x, double m, double s) {
        mpfr_set_d(tmp, x, MPFR_RNDN);
        mpfr_sub_d(tmp, tmp, m, MPFR_RNDN);
        mpfr_div_d(tmp, tmp, s, MPFR_RNDN);
        mpfr_sqr(tmp, tmp, MPFR_RNDN);
        mpfr_div_si(tmp, tmp, -2, MPFR_RNDN);
        mpfr_exp(out, tmp, MPFR_RNDN);
        mpfr_const_pi(tmp, MPFR_RNDN);
        mpfr_mul_si(tmp, tmp, 2, MPFR_RNDN);
        mpfr_sqrt(tmp, tmp, MPFR_RNDN);
        mpfr_mul_d(tmp, tmp, s, MPFR_RNDN);
        mpfr_div(out, out, tmp, MPFR_RNDN);
    };
    for (const auto& g : gaussians) {
        density(num, g[0], g[1], g[2]);
        density(den, g[0], g[3], g[4]);
        mpfr_mul(acc, acc, num, MPFR_RNDN);
        mpfr_div(acc, acc, den, MPFR_RNDN);
    }
    mpfr_log(acc, acc, MPFR_RNDN);
    const double out = mpfr_get_d(acc, MPFR_RNDN);
    mpfr_clears(acc, num, den, tmp, (mpfr_ptr)0);
    return out;
}

struct OracleGaussian {
    double mean = 0.0, sd = 0.0;
};

OracleGaussian oracle_gaussian(const std::vector<double>& xs) {
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    v /= static_cast<double>(xs.size());
    return {m, std::max(std::sqrt(v), 1e-3)};
}

double clamp01(double p) { return std::min(std::max(p, 1e-6), 1.0 - 1e-6); }

Verdict meta_oracle() {
    std::mt19937_64 rng(909);
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::size_t estimate_checks = 0, estimate_bad = 0, odds_checks = 0, odds_bad = 0;
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t L = 1 + t % 5, K = 1 + (t / 5) % 4, D = t % 3;
        TrainingCorpus corpus(K, D);
        std::vector<TrainingQuery> Q;
        for (std::size_t n = 0; n < L; ++n) {
            TrainingQuery q;
            for (std::size_t j = 0; j < K; ++j) {
                q.retrieved.push_back(coin(rng));
                q.truth.push_back(coin(rng));
            }
            for (std::size_t d = 0; d < D; ++d) q.signature.push_back(normal(rng));
            Q.push_back(q);
            corpus.add(q);
        }
        const auto m = MetaModel::train(corpus);
        auto check = [&](bool ok) {
            ++estimate_checks;
            if (!ok) ++estimate_bad;
        };

        double prior[2];
        for (int r = 0; r <= 1; ++r) {
            int hits = 0, den = 0;
            for (const auto& q : Q)
                for (std::size_t j = 0; j < K; ++j)
                    if (q.retrieved[j] == r) ++den, hits += q.truth[j];
            prior[r] = den ? static_cast<double>(hits) / den : 0.5;
            check(m.prior(r) == prior[r]);
        }
        std::vector<double> cond(K * 2);
        std::vector<double> pair(K * K * 8, 0.0);
        for (std::size_t j = 0; j < K; ++j)
            for (int r = 0; r <= 1; ++r) {
                int hits = 0, den = 0;
                for (const auto& q : Q)
                    if (q.retrieved[j] == r) ++den, hits += q.truth[j];
                const auto e = m.conditional(j, r);
                check(e.support == static_cast<std::size_t>(den));
                if (den) check(e.value && *e.value == static_cast<double>(hits) / den);
                else check(!e.value);
                const double raw = den ? static_cast<double>(hits) / den : prior[r];
                const double smoothed = den <= 1 ? prior[r] : prior[r] / den + (den - 1.0) / den * raw;
                check(m.smoothed_conditional(j, r) == smoothed);
                cond[j * 2 + r] = smoothed;
                for (int g = 0; g <= 1; ++g)
                    for (std::size_t i = 0; i < K; ++i) {
                        if (i == j) continue;
                        for (int ri = 0; ri <= 1; ++ri) {
                            int num = 0, den2 = 0;
                            for (const auto& q : Q)
                                if (q.retrieved[j] == r && q.truth[j] == g) ++den2, num += q.retrieved[i] == ri;
                            const double p = den2 ? static_cast<double>(num) / den2 : 0.5;
                            check(m.pairwise(i, j, r, g, ri) == p);
                            pair[(((i * K + j) * 2 + r) * 2 + g) * 2 + ri] = p;
                        }
                    }
            }
        // Visual Gaussians per (j, d, g); empty strata use all training queries.
        std::vector<OracleGaussian> vis(K * D * 2);
        for (std::size_t j = 0; j < K; ++j)
            for (std::size_t d = 0; d < D; ++d)
                for (int g = 0; g <= 1; ++g) {
                    std::vector<double> xs, all;
                    for (const auto& q : Q) {
                        all.push_back(q.signature[d]);
                        if (q.truth[j] == g) xs.push_back(q.signature[d]);
                    }
                    const auto og = oracle_gaussian(xs.empty() ? all : xs);
                    vis[(j * D + d) * 2 + g] = og;
                    check(m.visual().at(j, d, g).mean == og.mean && m.visual().at(j, d, g).stddev == og.sd);
                }

        // Log-odds for fresh queries against a product-then-log evaluation.
        for (int probe = 0; probe < 4; ++probe) {
            IndicatorVector R;
            std::vector<double> sig;
            for (std::size_t j = 0; j < K; ++j) R.push_back(coin(rng));
            for (std::size_t d = 0; d < D; ++d) sig.push_back(2.0 * normal(rng));
            for (std::size_t j = 0; j < K; ++j) {
                const int rj = R[j];
                std::vector<std::pair<double, double>> ratios;
                const double p = clamp01(cond[j * 2 + rj]);
                ratios.push_back({p, 1.0 - p});
                for (std::size_t i = 0; i < K; ++i) {
                    if (i == j) continue;
                    ratios.push_back({clamp01(pair[(((i * K + j) * 2 + rj) * 2 + 1) * 2 + R[i]]),
                                      clamp01(pair[(((i * K + j) * 2 + rj) * 2 + 0) * 2 + R[i]])});
                }
                std::vector<std::array<double, 5>> gs;
                for (std::size_t d = 0; d < D; ++d) {
                    const auto& g1 = vis[(j * D + d) * 2 + 1];
                    const auto& g0 = vis[(j * D + d) * 2 + 0];
                    gs.push_back({sig[d], g1.mean, g1.sd, g0.mean, g0.sd});
                }
                const double expect = log_of_product(ratios, gs);
                const double got = m.log_odds(R, sig, j).total();
                const double err = std::abs(got - expect) / std::max(1.0, std::abs(expect));
                worst = std::max(worst, err);
                ++odds_checks;
                if (!(err <= 1e-9)) ++odds_bad;
            }
        }
    }
    return {estimate_bad == 0 && odds_bad == 0,
            strf("100 corpora (L<=5, K<=4): estimate mismatches %zu/%zu; log-odds off by >1e-9 %zu/%zu (max scaled err %.1e)",
                 estimate_bad, estimate_checks, odds_bad, odds_checks, worst)};
}

Verdict end_to_end_retrieval() {
    const auto t0 = Clock::now();
    std::string detail;
    bool ok = true;
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto& run = synth_run(seed);
        const auto& db = run.data.db;
        const auto pooled = pool_vectors(db);
        const auto centers = kmeans(PointsView{pooled, db.dimension()}, kVocabSize, seed).centroids;
        const KernelScorer cs(db, SetKernel::imk(VirtualVocabulary::centers(centers), BaseKernel{run.delta}));
        RetrieveOptions opt;
        opt.exclude_self = true;
        std::vector<Ranking> center_rankings;
        std::vector<std::vector<std::string>> candidates;
        std::vector<std::set<std::string>> relevant;
        for (const auto& q : db) {
            center_rankings.push_back(one_step_retrieve(db, q, cs, opt));
            candidates.push_back(center_rankings.back().ids());
            relevant.push_back(run.data.truth.relevant(q.image_id()));
        }
        const double ubm_map = mean_average_precision(run.ubm_rankings, run.data.truth);
        const double centers_map = mean_average_precision(center_rankings, run.data.truth);
        const double random_map = oracle::random_permutation_map(candidates, relevant, 20, seed);
        const bool pass = ubm_map >= 3.0 * random_map && ubm_map > centers_map;
        ok = ok && pass;
        detail += strf("%sseed %llu: UBM %.4f, centers %.4f, random %.4f", detail.empty() ? "" : "; ",
                       static_cast<unsigned long long>(seed), ubm_map, centers_map, random_map);
    }
    const double elapsed = seconds_since(t0);
    ok = ok && elapsed < 300.0;
    return {ok, detail + strf("; %.1f s (limit 300 s)", elapsed)};
}

// Weakened black box: top T with a fraction of its positions replaced by random
// images from outside that list (never the query itself).
Ranking corrupt(const Ranking& r, std::size_t T, double fraction, const std::vector<std::string>& pool, std::mt19937_64& rng) {
    auto top = r.truncated(T).ids();
    const auto replace = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(top.size())));
    std::vector<std::size_t> pos(top.size());
    std::iota(pos.begin(), pos.end(), 0);
    std::shuffle(pos.begin(), pos.end(), rng);
    const std::set<std::string> in(top.begin(), top.end());
    std::vector<std::string> cand;
    for (const auto& p : pool)
        if (!in.count(p) && p != r.query_id()) cand.push_back(p);
    std::shuffle(cand.begin(), cand.end(), rng);
    for (std::size_t k = 0; k < replace && k < cand.size(); ++k) top[pos[k]] = cand[k];
    std::vector<RankedItem> items;
    for (std::size_t k = 0; k < top.size(); ++k) items.push_back({top[k], static_cast<double>(top.size() - k)});
    return Ranking(r.query_id(), std::move(items), Ranking::PreserveOrder{});
}

Verdict end_to_end_meta() {
    constexpr std::size_t T = 50;
    int wins = 0;
    double ratio_sum = 0.0;
    std::string detail;
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
        const auto& run = synth_run(seed);
        const auto& db = run.data.db;
        const Universe uni(db.image_ids());
        std::mt19937_64 rng(seed * 7919);
        std::vector<Ranking> train, test;
        for (std::size_t i = 0; i < db.size(); ++i) {
            auto bb = corrupt(run.ubm_rankings[i], T, 0.2, uni.ids(), rng);
            (i % 2 ? test : train).push_back(std::move(bb));
        }
        const auto corpus = build_training_corpus(train, run.data.truth, run.data.signatures, uni, T);
        const auto model = MetaModel::train(corpus, uni, T);
        std::vector<Ranking> reranked;
        for (const auto& r : test) reranked.push_back(model.rerank(r, run.data.signatures.at(r.query_id()), r.query_id()));
        const double bb_map = mean_average_precision(test, run.data.truth);
        const double meta_map = mean_average_precision(reranked, run.data.truth);
        wins += meta_map >= bb_map;
        ratio_sum += meta_map / bb_map;
        detail += strf("%s%.4f->%.4f", detail.empty() ? "" : ", ", bb_map, meta_map);
    }
    const double mean_ratio = ratio_sum / 5.0;
    return {wins >= 4 && mean_ratio >= 1.2,
            strf("black-box->meta MAP per seed: %s; meta >= black-box on %d/5 (need 4), mean ratio %.3f (need 1.2)", detail.c_str(),
                 wins, mean_ratio)};
}

Verdict multi_cluster_benefit() {
    int wins = 0;
    bool reduction_ok = true;
    std::string detail;
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
        const auto& run = synth_run(seed);
        const auto& db = run.data.db;
        IndexOptions io;
        io.seed = seed;
        const auto idx = build_clustered_index(db, ClusterMethod::KmedoidsKernel, 10, run.ubm_kernel.get(), io);
        RetrieveOptions opt;
        opt.exclude_self = true;
        double map[2], red[2];
        const std::size_t ns[2] = {1, 3};
        for (int k = 0; k < 2; ++k) {
            std::vector<Ranking> rs;
            double total = 0.0;
            for (const auto& q : db) {
                auto rep = two_step_retrieve(db, idx, q, *run.ubm_scorer, ns[k], opt);
                total += rep.reduction();
                rs.push_back(std::move(rep.ranking));
            }
            map[k] = mean_average_precision(rs, run.data.truth);
            red[k] = total / static_cast<double>(db.size());
        }
        wins += map[1] > map[0];
        reduction_ok = reduction_ok && red[1] >= 50.0;
        detail += strf("%sseed %llu: n=1 %.4f, n=3 %.4f (reduction %.1f%%)", detail.empty() ? "" : "; ",
                       static_cast<unsigned long long>(seed), map[0], map[1], red[1]);
    }
    return {wins >= 4 && reduction_ok, detail + strf("; n=3 better on %d/5 (need 4), reduction >= 50%% %s", wins, reduction_ok ? "yes" : "NO")};
}

RgbImage random_image(std::mt19937_64& rng, std::size_t w, std::size_t h) {
    std::uniform_int_distribution<int> byte(0, 255);
    std::vector<Rgb> px(w * h);
    for (auto& p : px) p = Rgb{static_cast<std::uint8_t>(byte(rng)), static_cast<std::uint8_t>(byte(rng)), static_cast<std::uint8_t>(byte(rng))};
    return RgbImage(w, h, std::move(px));
}

Verdict extractor_contracts() {
    std::mt19937_64 rng(1313);
    const std::pair<std::size_t, std::size_t> sizes[] = {{40, 40}, {41, 57}, {64, 48}, {100, 100}, {123, 77}, {320, 240}};
    std::size_t shape_bad = 0;
    for (const auto& [w, h] : sizes) {
        const auto img = random_image(rng, w, h);
        std::stringstream ppm;
        write_ppm(img, ppm);
        const auto back = read_ppm(ppm);
        const auto f = extract_block_features(back, "img");
        if (!(back == img) || f.size() != 100 || f.dimension() != 23 || lab_signature(back).size() != 48) ++shape_bad;
    }

    std::size_t degenerate_bad = 0;
    const Rgb colours[] = {{0, 0, 0}, {255, 255, 255}, {200, 30, 90}, {17, 180, 240}};
    for (const auto& c : colours) {
        const auto f = extract_block_features(RgbImage(60, 50, c), "const");
        for (std::size_t i = 0; i < f.size(); ++i) {
            const auto v = f[i];
            for (std::size_t k : {1, 2, 4, 5, 7, 8}) degenerate_bad += v[k] != 0.0;  // per-channel std and skew
            for (std::size_t k = 9; k < 23; ++k) degenerate_bad += v[k] != 0.0;     // edge histogram, entropies
        }
    }

    // sRGB white is L=100, a=b=0; black is the origin; mid grey 128 sits at L=53.585.
    double lab_err = 0.0;
    const std::pair<Rgb, double> refs[] = {{{255, 255, 255}, 100.0}, {{0, 0, 0}, 0.0}, {{128, 128, 128}, 53.585}};
    for (const auto& [c, L] : refs) {
        const auto sig = lab_signature(RgbImage(32, 24, c));
        for (std::size_t k = 0; k < sig.size(); ++k) lab_err = std::max(lab_err, std::abs(sig[k] - (k % 3 == 0 ? L : 0.0)));
    }
    return {shape_bad == 0 && degenerate_bad == 0 && lab_err <= 0.01,
            strf("6 image sizes: shape failures %zu; constant images: nonzero degenerate entries %zu; Lab max error %.2e (limit 0.01)",
                 shape_bad, degenerate_bad, lab_err)};
}

#ifdef LFIR_CLI_PATH
std::string quote(const std::string& s) { return "'" + s + "'"; }

bool run_cli(const fs::path& dir, const std::string& args, std::string& failure) {
    const std::string cmd = "cd " + quote(dir.string()) + " && " + quote(LFIR_CLI_PATH) + " " + args + " >>stdout.log 2>>stderr.log";
    if (std::system(cmd.c_str()) != 0 && failure.empty()) failure = args;
    return failure.empty();
}

std::map<std::string, std::string> read_outputs(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().extension() == ".log") continue;
        std::ifstream in(e.path(), std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        out[fs::relative(e.path(), dir).string()] = ss.str();
    }
    return out;
}

// Every subcommand, with stage outputs feeding later stages.
bool pipeline(const fs::path& dir, std::size_t threads, std::string& failure) {
    fs::remove_all(dir);
    fs::create_directories(dir / "images");
    std::mt19937_64 rng(1414);
    for (int i = 0; i < 4; ++i) save_ppm(random_image(rng, 40 + 13 * i, 48 + 7 * i), (dir / "images" / strf("img%d.ppm", i)).string());
    const std::string tp = " --threads " + std::to_string(threads) + " --seed 11";
    const std::vector<std::string> steps = {
        "extract --images images --out extracted.lfv --signatures extracted_sig.txt",
        "synth --classes 3 --per-class 8 --min-vectors 10 --max-vectors 16 --dim 4 --out-features db.lfv --out-truth truth.txt "
        "--out-labels labels.txt --out-signatures sig.txt",
        "synth --classes 2 --per-class 6 --min-vectors 8 --max-vectors 8 --dim 3 --out-features eq.lfv --out-truth eq_truth.txt "
        "--out-labels eq_labels.txt --out-signatures eq_sig.txt",
        "train-ubm --features db.lfv -Q 4 --out ubm.gmm",
        "vocab --features db.lfv --type centers --size 4 --out centers.lfv",
        "vocab --features db.lfv --type ubm --size 3 --out vocab_ubm.gmm",
        "index --features db.lfv --vocab ubm.gmm -K 4 --out index_kmedoids.txt",
        "index --features db.lfv --method ap-kernel --kernel summation --delta median --out index_ap.txt",
        "index --features eq.lfv --method kmeans-supervector -K 3 --out index_sv.txt",
        "retrieve --features db.lfv --vocab ubm.gmm --exclude-self --out imk_ubm.txt",
        "retrieve --features db.lfv --vocab centers.lfv --exclude-self --out imk_centers.txt",
        "retrieve --features db.lfv --kernel matching --delta median --out matching.txt",
        "retrieve --features db.lfv --kernel pyramid --out pyramid.txt",
        "retrieve2 --features db.lfv --vocab ubm.gmm --index index_kmedoids.txt --n-clusters 2 --exclude-self "
        "--reduction-out reduction.txt --out two_step.txt",
        "retrieve2 --features eq.lfv --kernel summation --delta median --index index_sv.txt --n-clusters 1 --out two_step_sv.txt",
        "baseline --features db.lfv --model gaussian --divergence kld --exclude-self --out baseline_kld.txt",
        "baseline --features db.lfv --model 2gmm --divergence c2 --exclude-self --out baseline_c2.txt",
        "evaluate --rankings imk_ubm.txt --truth truth.txt --out eval.txt",
        "evaluate --rankings two_step.txt --truth truth.txt --reduction reduction.txt --csv --out eval.csv",
        "meta-train --features db.lfv --rankings imk_ubm.txt --truth truth.txt --signatures sig.txt -T 8 --out meta.txt",
        "meta-rerank --model meta.txt --rankings imk_ubm.txt --signatures sig.txt --exclude-self --out reranked.txt",
        "codebook --features db.lfv --words 6 --out codebook.lfv",
        "bow --features db.lfv --codebook codebook.lfv --out bow.lfv",
        "bow --features db.lfv --codebook codebook.lfv --l1 --out bow_l1.lfv",
        "knn --train bow.lfv --train-labels labels.txt --test bow.lfv --test-labels labels.txt --k 3 --similarity euclidean "
        "--out knn_euclid.txt",
        "knn --train db.lfv --train-labels labels.txt --test db.lfv --k 5 --similarity kernel --vocab ubm.gmm --out knn_imk.txt",
    };
    for (const auto& s : steps)
        if (!run_cli(dir, s + tp, failure)) return false;
    return true;
}
#endif

Verdict determinism() {
#ifndef LFIR_CLI_PATH
    return {false, "built without the lfir executable"};
#else
    const fs::path root = fs::current_path() / "acceptance_determinism";
    const std::pair<const char*, std::size_t> runs[] = {{"w1_a", 1}, {"w1_b", 1}, {"w8_a", 8}, {"w8_b", 8}};
    std::vector<std::map<std::string, std::string>> outputs;
    for (const auto& [name, threads] : runs) {
        std::string failure;
        if (!pipeline(root / name, threads, failure)) return {false, std::string(name) + ": command failed: " + failure};
        outputs.push_back(read_outputs(root / name));
    }
    std::size_t differing = 0;
    std::string first;
    for (std::size_t r = 1; r < outputs.size(); ++r) {
        if (outputs[r].size() != outputs[0].size()) {
            ++differing;
            if (first.empty()) first = "file sets differ";
        }
        for (const auto& [file, bytes] : outputs[0]) {
            auto it = outputs[r].find(file);
            if (it == outputs[r].end() || it->second != bytes) {
                ++differing;
                if (first.empty()) first = file + " (" + runs[r].first + ")";
            }
        }
    }
    std::size_t bytes = 0;
    for (const auto& [file, b] : outputs[0]) bytes += b.size();
    return {differing == 0 && outputs[0].size() >= 20,
            strf("4 runs (threads 1,1,8,8) x 26 commands, %zu output files (%zu bytes) each; differing %zu%s%s", outputs[0].size(),
                 bytes, differing, first.empty() ? "" : ", first ", first.c_str())};
#endif
}

}  // namespace

int main() {
    criterion(1, "kernel correctness", kernel_correctness);
    criterion(2, "Mercer check", mercer_check);
    criterion(3, "self values", self_values);
    criterion(4, "optimization monotonicity", monotonicity);
    criterion(5, "clustering recovery", clustering_recovery);
    criterion(6, "metric oracle equivalence", metric_oracle);
    criterion(7, "divergence sanity", divergence_sanity);
    criterion(8, "two-step consistency", two_step_consistency);
    criterion(9, "meta-learner estimation oracle", meta_oracle);
    criterion(10, "end-to-end synthetic retrieval", end_to_end_retrieval);
    criterion(11, "end-to-end meta-learning", end_to_end_meta);
    criterion(12, "two-step multi-cluster benefit", multi_cluster_benefit);
    criterion(13, "feature extractor contracts", extractor_contracts);
    criterion(14, "determinism", determinism);
    std::printf("%d of 14 criteria failed\n", g_failed);
    return g_failed ? 1 : 0;
}
