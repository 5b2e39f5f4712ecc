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
// lfir: batch front end for feature extraction, set-kernel retrieval, clustering,
// meta-learning and bag-of-words classification.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lfir/lfir.hpp"

namespace fs = std::filesystem;
using namespace lfir;

namespace {

enum ExitCode : int { kOk = 0, kUsage = 2, kInput = 3, kUnsupported = 4, kRuntime = 5 };

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Per-stage seed derived from the run seed and the stage name.
std::uint64_t sub_seed(std::uint64_t seed, std::string_view stage) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : stage) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
    return splitmix64(seed ^ h);
}

std::string real17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Common {
    std::string config;
    std::uint64_t seed = 1;
    std::size_t threads = 1;
    bool force = false;
};

/// Everything that affects the outputs, printed to stderr before work starts.
class Banner {
public:
    void derived(const std::string& key, const std::string& value) { derived_.emplace_back(key, value); }

    void print(const CLI::App& sub) const {
        std::cerr << "# lfir " << sub.get_name() << '\n';
        for (const CLI::Option* opt : sub.get_options()) {
            if (opt->get_lnames().empty()) continue;
            const std::string name = opt->get_lnames().front();
            if (name == "help" || name == "config") continue;
            std::string value;
            if (opt->count()) {
                for (const auto& r : opt->reduced_results()) value += (value.empty() ? "" : ",") + r;
            } else {
                value = opt->get_default_str();
                if (value.empty()) continue;
            }
            std::cerr << "#   " << name << " = " << value << '\n';
        }
        for (const auto& [k, v] : derived_) std::cerr << "#   " << k << " = " << v << "   (derived)\n";
    }

private:
    std::vector<std::pair<std::string, std::string>> derived_;
};

// ---------------------------------------------------------------------------
// Paths

void require_input(const std::string& path, const char* what) {
    if (path.empty()) return;
    std::error_code ec;
    if (!fs::is_regular_file(path, ec)) throw IoError(std::string(what) + " '" + path + "' does not exist or is not a file");
    std::ifstream probe(path);
    if (!probe) throw IoError(std::string(what) + " '" + path + "' is not readable");
}

void require_output(const std::string& path, bool force) {
    if (path.empty()) return;
    std::error_code ec;
    if (fs::exists(path, ec) && !force) throw UsageError("output '" + path + "' exists (use --force to overwrite)");
    const auto parent = fs::path(path).parent_path();
    if (!parent.empty() && !fs::is_directory(parent, ec)) throw IoError("output directory '" + parent.string() + "' does not exist");
}

template <typename Writer>
void write_file(const std::string& path, Writer&& writer) {
    auto out = open_output(path);
    writer(out);
    finish_output(out, path);
}

// ---------------------------------------------------------------------------
// Kernels and vocabularies

struct KernelOpts {
    std::string kind = "imk";
    std::string delta = "median";
    std::string vocab;
    double diameter = 0.0;
};

void add_kernel_options(CLI::App* sub, KernelOpts& k) {
    sub->add_option("--kernel", k.kind, "Set kernel")->check(CLI::IsMember({"summation", "matching", "imk", "pyramid"}))->capture_default_str();
    sub->add_option("--delta", k.delta, "RBF width: a positive real, or 'median' (1 / (2 x median squared distance))")->capture_default_str();
    sub->add_option("--vocab", k.vocab, "Vocabulary for imk: an LFV centers file or a GMM (UBM) file");
    sub->add_option("--diameter", k.diameter, "Pyramid-match diameter D (0 = smallest power of two covering the data)")->capture_default_str();
}

VirtualVocabulary load_vocabulary(const std::string& path) {
    std::string magic;
    {
        auto in = open_input(path);
        LineReader reader(in);
        std::string line;
        if (reader.next(line)) {
            auto t = split_ws(line);
            if (!t.empty()) magic = std::string(t[0]);
        }
    }
    if (magic == "GMM") return VirtualVocabulary::ubm(load_gmm(path));
    if (magic == "LFV") {
        const auto db = load_feature_file(path);
        if (db.size() != 1) throw FormatError("centers vocabulary file must hold exactly one set");
        return VirtualVocabulary::centers(db[0]);
    }
    throw FormatError("vocabulary file '" + path + "' is neither LFV nor GMM", 1);
}

double resolve_delta(const std::string& spec, const FeatureDatabase& db, std::uint64_t seed, Banner& banner) {
    if (spec == "median") {
        const double d = median_delta(db, sub_seed(seed, "delta"));
        banner.derived("delta.resolved", real17(d));
        return d;
    }
    double v = 0.0;
    try {
        std::size_t used = 0;
        v = std::stod(spec, &used);
        if (used != spec.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
        throw UsageError("--delta must be a positive real or 'median', got '" + spec + "'");
    }
    if (!(v > 0.0) || !std::isfinite(v)) throw UsageError("--delta must be positive");
    return v;
}

SetKernel make_kernel(const KernelOpts& k, const FeatureDatabase& db, std::uint64_t seed, Banner& banner) {
    const auto kind = parse_kernel_kind(k.kind);
    if (kind == KernelKind::PyramidMatch) {
        if (k.diameter < 0.0) throw UsageError("--diameter must be >= 0");
        auto scaler = PyramidScaler::fit(db, k.diameter);
        banner.derived("diameter.resolved", real17(scaler.diameter()));
        return SetKernel::pyramid(std::move(scaler));
    }
    const BaseKernel base{resolve_delta(k.delta, db, seed, banner)};
    if (kind == KernelKind::Summation) return SetKernel::summation(base);
    if (kind == KernelKind::Matching) return SetKernel::matching(base);
    if (k.vocab.empty()) throw UsageError("--kernel imk requires --vocab");
    auto vocab = load_vocabulary(k.vocab);
    require_same_dimension(vocab.dimension(), db.dimension(), "vocabulary");
    banner.derived("vocab.size", std::to_string(vocab.size()));
    return SetKernel::imk(std::move(vocab), base);
}

// ---------------------------------------------------------------------------
// Reduction side file: `<query_id> <searched> <total>`

void write_reductions(const std::vector<RetrievalReport>& reps, std::ostream& out) {
    for (const auto& r : reps) out << r.ranking.query_id() << ' ' << r.searched_count << ' ' << r.total_count << '\n';
}

double mean_reduction_from_file(const std::string& path) {
    auto in = open_input(path);
    LineReader reader(in);
    std::string line;
    double sum = 0.0;
    std::size_t n = 0;
    while (reader.next(line)) {
        auto t = split_ws(line);
        if (t.size() != 3) throw FormatError("expected '<query_id> <searched> <total>'", reader.line_number());
        const auto searched = parse_count(t[1], reader.line_number());
        const auto total = parse_count(t[2], reader.line_number());
        if (total == 0 || searched > total) throw FormatError("need searched <= total and total > 0", reader.line_number());
        sum += reduction_percentage(searched, total);
        ++n;
    }
    if (!n) throw FormatError("reduction file '" + path + "' is empty");
    return sum / static_cast<double>(n);
}

std::vector<std::string> expand_images(const std::vector<std::string>& inputs) {
    std::vector<std::string> out;
    for (const auto& p : inputs) {
        std::error_code ec;
        if (fs::is_directory(p, ec)) {
            std::vector<std::string> found;
            for (const auto& e : fs::directory_iterator(p))
                if (e.is_regular_file() && e.path().extension() == ".ppm") found.push_back(e.path().string());
            std::sort(found.begin(), found.end());
            out.insert(out.end(), found.begin(), found.end());
        } else {
            require_input(p, "image");
            out.push_back(p);
        }
    }
    if (out.empty()) throw UsageError("no PPM images found");
    return out;
}

// ---------------------------------------------------------------------------
// Config files: flat `key=value` lines whose keys are the subcommand's long options.

std::vector<std::string> config_arguments(const std::string& path, const CLI::App& sub) {
    require_input(path, "config file");
    auto in = open_input(path);
    std::vector<std::string> args;
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
        ++no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(no) + ": expected key=value");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        const CLI::Option* opt = key.empty() || key == "config" || key == "help" ? nullptr : sub.get_option_no_throw("--" + key);
        if (!opt) throw UsageError(path + ":" + std::to_string(no) + ": unknown key '" + key + "' for '" + sub.get_name() + "'");
        args.push_back("--" + key + "=" + value);
    }
    return args;
}

// ---------------------------------------------------------------------------
// Subcommands

struct SynthOpts {
    SynthSpec spec;
    std::string out_features, out_truth, out_labels, out_signatures;
};

struct ExtractOpts {
    std::vector<std::string> images;
    std::string out, signatures;
    double edge_threshold = 0.10;
};

struct UbmOpts {
    std::string features, out;
    std::size_t components = 0, max_iter = 200;
    double tolerance = 1e-6;
};

struct VocabOpts {
    std::string features, out, type = "centers";
    std::size_t size = 0;
};

struct IndexOpts {
    std::string features, out, method = "kmedoids-kernel";
    std::size_t clusters = 0;
    double damping = 0.5;
    std::string preference = "median";
    std::size_t ap_max_iter = 500;
    KernelOpts kernel;
};

struct RetrieveOpts {
    std::string features, queries, out, index, reduction_out;
    bool exclude_self = false;
    std::size_t n_clusters = 1;
    KernelOpts kernel;
};

struct BaselineOpts {
    std::string features, queries, out, model = "gaussian", divergence = "c2";
    bool exclude_self = false;
};

struct EvaluateOpts {
    std::string rankings, truth, reduction, out;
    bool csv = false;
};

struct MetaTrainOpts {
    std::string features, rankings, truth, signatures, out;
    std::size_t threshold = 50;
};

struct MetaRerankOpts {
    std::string model, rankings, signatures, out;
    bool exclude_self = false;
};

struct CodebookOpts {
    std::string features, out;
    std::size_t words = 0;
};

struct BowOpts {
    std::string features, codebook, out;
    bool l1 = false;
};

struct KnnOpts {
    std::string train, train_labels, test, test_labels, out, similarity = "kernel";
    std::size_t k = 1;
    KernelOpts kernel;
};

FeatureDatabase queries_or_db(const std::string& queries, const FeatureDatabase& db) {
    if (queries.empty()) return db;
    auto q = load_feature_file(queries);
    require_same_dimension(q.dimension(), db.dimension(), "queries");
    return q;
}

int run_synth(const SynthOpts& o, const Common& c, const CLI::App& sub) {
    for (const auto* p : {&o.out_features, &o.out_truth, &o.out_labels, &o.out_signatures}) require_output(*p, c.force);
    SynthSpec spec = o.spec;
    spec.seed = sub_seed(c.seed, "synth");
    spec.validate();
    Banner b;
    b.derived("seed.synth", std::to_string(spec.seed));
    b.print(sub);
    const auto data = generate(spec);
    save_feature_file(data.db, o.out_features);
    save_ground_truth(data.truth, o.out_truth);
    if (!o.out_labels.empty()) save_labels(data.labels, o.out_labels);
    if (!o.out_signatures.empty()) {
        if (!spec.signature_dim) throw UsageError("--out-signatures needs --signature-dim > 0");
        save_signatures(data.signatures, o.out_signatures);
    }
    return kOk;
}

int run_extract(const ExtractOpts& o, const Common& c, const CLI::App& sub) {
    require_output(o.out, c.force);
    require_output(o.signatures, c.force);
    const auto paths = expand_images(o.images);
    if (!(o.edge_threshold >= 0.0 && o.edge_threshold <= 1.0)) throw UsageError("--edge-threshold must be in [0, 1]");
    Banner b;
    b.derived("images", std::to_string(paths.size()));
    b.print(sub);
    std::vector<LocalFeatureSet> sets(paths.size());
    std::vector<std::vector<double>> sigs(paths.size());
    parallel_for(paths.size(), c.threads, [&](std::size_t i) {
        const auto image = load_ppm(paths[i]);
        sets[i] = extract_block_features(image, fs::path(paths[i]).stem().string(), EdgeConfig{o.edge_threshold});
        if (!o.signatures.empty()) sigs[i] = lab_signature(image);
    });
    FeatureDatabase db(kBlockFeatureDim);
    SignatureTable table;
    for (std::size_t i = 0; i < sets.size(); ++i) {
        if (!o.signatures.empty()) table.add(sets[i].image_id(), std::move(sigs[i]));
        db.add(std::move(sets[i]));
    }
    save_feature_file(db, o.out);
    if (!o.signatures.empty()) save_signatures(table, o.signatures);
    return kOk;
}

EmConfig em_config(std::size_t max_iter, double tolerance, std::uint64_t seed, std::size_t threads) {
    EmConfig cfg;
    cfg.max_iterations = max_iter;
    cfg.tolerance = tolerance;
    cfg.seed = seed;
    cfg.threads = threads;
    return cfg;
}

int run_train_ubm(const UbmOpts& o, const Common& c, const CLI::App& sub) {
    require_input(o.features, "features");
    require_output(o.out, c.force);
    if (o.components == 0) throw UsageError("--components must be positive");
    const auto db = load_feature_file(o.features);
    Banner b;
    b.derived("seed.ubm", std::to_string(sub_seed(c.seed, "ubm")));
    b.print(sub);
    save_gmm(fit_ubm(db, o.components, em_config(o.max_iter, o.tolerance, sub_seed(c.seed, "ubm"), c.threads)), o.out);
    return kOk;
}

int run_vocab(const VocabOpts& o, const Common& c, const CLI::App& sub) {
    require_input(o.features, "features");
    require_output(o.out, c.force);
    if (o.size == 0) throw UsageError("--size must be positive");
    const auto db = load_feature_file(o.features);
    Banner b;
    const auto seed = sub_seed(c.seed, o.type == "ubm" ? "ubm" : "vocab");
    b.derived(o.type == "ubm" ? "seed.ubm" : "seed.vocab", std::to_string(seed));
    b.print(sub);
    if (o.type == "ubm") {
        save_gmm(fit_ubm(db, o.size, em_config(200, 1e-6, seed, c.threads)), o.out);
        return kOk;
    }
    const auto pooled = pool_vectors(db);
    const auto res = kmeans(PointsView{pooled, db.dimension()}, o.size, seed);
    FeatureDatabase out(db.dimension());
    out.add(LocalFeatureSet("centers", res.centroids));
    save_feature_file(out, o.out);
    return kOk;
}

int run_index(const IndexOpts& o, const Common& c, const CLI::App& sub) {
    require_input(o.features, "features");
    require_input(o.kernel.vocab, "vocabulary");
    require_output(o.out, c.force);
    const auto method = parse_cluster_method(o.method);
    if (method != ClusterMethod::ApKernel && o.clusters == 0) throw UsageError("--clusters is required for " + o.method);
    const auto db = load_feature_file(o.features);
    Banner b;
    std::optional<SetKernel> kernel;
    if (method != ClusterMethod::KmeansSupervector) kernel = make_kernel(o.kernel, db, c.seed, b);
    IndexOptions opt;
    opt.seed = sub_seed(c.seed, "index");
    opt.threads = c.threads;
    opt.ap.damping = o.damping;
    opt.ap.max_iterations = o.ap_max_iter;
    if (o.preference != "median") {
        try {
            opt.ap.preference = std::stod(o.preference);
        } catch (const std::exception&) {
            throw UsageError("--ap-preference must be a real or 'median'");
        }
    }
    b.derived("seed.index", std::to_string(opt.seed));
    b.print(sub);
    const auto idx = build_clustered_index(db, method, o.clusters, kernel ? &*kernel : nullptr, opt);
    std::cerr << "# clusters: " << idx.cluster_count() << '\n';
    save_index(idx, db, o.out);
    return kOk;
}

int run_retrieve(const RetrieveOpts& o, const Common& c, const CLI::App& sub, bool two_step) {
    require_input(o.features, "features");
    require_input(o.queries, "queries");
    require_input(o.kernel.vocab, "vocabulary");
    if (two_step) require_input(o.index, "index");
    require_output(o.out, c.force);
    require_output(o.reduction_out, c.force);
    const auto db = load_feature_file(o.features);
    const auto queries = queries_or_db(o.queries, db);
    Banner b;
    const KernelScorer scorer(db, make_kernel(o.kernel, db, c.seed, b), c.threads);
    std::optional<ClusteredIndex> idx;
    if (two_step) {
        idx = load_index(o.index, db);
        if (o.n_clusters == 0 || o.n_clusters > idx->cluster_count()) {
            throw UsageError("--n-clusters must be in [1, " + std::to_string(idx->cluster_count()) + "]");
        }
    }
    b.print(sub);
    const RetrieveOptions opt{o.exclude_self, c.threads};
    std::vector<Ranking> rankings;
    std::vector<RetrievalReport> reports;
    for (const auto& q : queries) {
        if (two_step) {
            reports.push_back(two_step_retrieve(db, *idx, q, scorer, o.n_clusters, opt));
            rankings.push_back(reports.back().ranking);
        } else {
            rankings.push_back(one_step_retrieve(db, q, scorer, opt));
        }
    }
    write_ranking(rankings, o.out);
    if (two_step && !o.reduction_out.empty()) write_file(o.reduction_out, [&](std::ostream& out) { write_reductions(reports, out); });
    return kOk;
}

int run_baseline(const BaselineOpts& o, const Common& c, const CLI::App& sub) {
    require_input(o.features, "features");
    require_input(o.queries, "queries");
    require_output(o.out, c.force);
    const auto kind = parse_model_kind(o.model);
    const auto div = parse_divergence(o.divergence);
    const auto db = load_feature_file(o.features);
    const auto queries = queries_or_db(o.queries, db);
    const auto cfg = em_config(200, 1e-6, sub_seed(c.seed, "baseline"), 1);
    const BaselineScorer scorer(db, kind, div, cfg, c.threads);
    Banner b;
    b.derived("seed.baseline", std::to_string(cfg.seed));
    b.print(sub);
    std::vector<Ranking> rankings;
    for (const auto& q : queries) rankings.push_back(one_step_retrieve(db, q, scorer, {o.exclude_self, c.threads}));
    write_ranking(rankings, o.out);
    return kOk;
}

int run_evaluate(const EvaluateOpts& o, const Common& c, const CLI::App& sub) {
    require_input(o.rankings, "rankings");
    require_input(o.truth, "ground truth");
    require_input(o.reduction, "reduction file");
    require_output(o.out, c.force);
    const auto rankings = load_rankings(o.rankings);
    const auto truth = load_ground_truth(o.truth);
    Banner{}.print(sub);
    auto rep = evaluate(rankings, truth);
    if (!o.reduction.empty()) rep.mean_reduction = mean_reduction_from_file(o.reduction);
    auto emit = [&](std::ostream& out) { o.csv ? write_report_csv(rep, out) : write_report_text(rep, out); };
    if (o.out.empty()) {
        emit(std::cout);
    } else {
        write_file(o.out, emit);
    }
    return kOk;
}

int run_meta_train(const MetaTrainOpts& o, const Common& c, const CLI::App& sub) {
    require_input(o.features, "features");
    require_input(o.rankings, "rankings");
    require_input(o.truth, "ground truth");
    require_input(o.signatures, "signatures");
    require_output(o.out, c.force);
    const auto db = load_feature_file(o.features);
    const auto rankings = load_rankings(o.rankings);
    const auto truth = load_ground_truth(o.truth);
    const auto sigs = load_signatures(o.signatures);
    Banner b;
    b.derived("universe", std::to_string(db.size()) + " images");
    b.derived("training_queries", std::to_string(rankings.size()));
    b.print(sub);
    const Universe universe(db.image_ids());
    const auto corpus = build_training_corpus(rankings, truth, sigs, universe, o.threshold);
    save_meta_model(MetaModel::train(corpus, universe, o.threshold), o.out);
    return kOk;
}

int run_meta_rerank(const MetaRerankOpts& o, const Common& c, const CLI::App& sub) {
    require_input(o.model, "meta model");
    require_input(o.rankings, "rankings");
    require_input(o.signatures, "signatures");
    require_output(o.out, c.force);
    const auto model = load_meta_model(o.model);
    const auto rankings = load_rankings(o.rankings);
    const auto sigs = load_signatures(o.signatures, model.signature_dim());
    Banner b;
    b.derived("threshold", std::to_string(model.threshold()));
    b.print(sub);
    std::vector<Ranking> out(rankings.size());
    parallel_for(rankings.size(), c.threads, [&](std::size_t i) {
        const auto& r = rankings[i];
        if (!sigs.contains(r.query_id())) throw std::invalid_argument("no signature for query '" + r.query_id() + "'");
        std::optional<std::string> exclude;
        if (o.exclude_self) exclude = r.query_id();
        out[i] = model.rerank(r, sigs.at(r.query_id()), exclude);
    });
    write_ranking(out, o.out);
    return kOk;
}

int run_codebook(const CodebookOpts& o, const Common& c, const CLI::App& sub) {
    require_input(o.features, "features");
    require_output(o.out, c.force);
    if (o.words == 0) throw UsageError("--words must be positive");
    const auto db = load_feature_file(o.features);
    Banner b;
    b.derived("seed.codebook", std::to_string(sub_seed(c.seed, "codebook")));
    b.print(sub);
    const auto cb = build_codebook(db, o.words, sub_seed(c.seed, "codebook"));
    FeatureDatabase out(cb.dimension());
    out.add(cb.as_feature_set());
    save_feature_file(out, o.out);
    return kOk;
}

int run_bow(const BowOpts& o, const Common& c, const CLI::App& sub) {
    require_input(o.features, "features");
    require_input(o.codebook, "codebook");
    require_output(o.out, c.force);
    const auto db = load_feature_file(o.features);
    const auto cbdb = load_feature_file(o.codebook);
    if (cbdb.size() != 1) throw FormatError("codebook file must hold exactly one set");
    Banner{}.print(sub);
    save_feature_file(bow_database(db, Codebook::from_feature_set(cbdb[0]), o.l1), o.out);
    return kOk;
}

int run_knn(const KnnOpts& o, const Common& c, const CLI::App& sub) {
    for (const auto& [p, what] : {std::pair{o.train, "training features"}, {o.train_labels, "training labels"},
                                  {o.test, "test features"}, {o.test_labels, "test labels"}, {o.kernel.vocab, "vocabulary"}})
        require_input(p, what);
    require_output(o.out, c.force);
    const auto train = load_feature_file(o.train);
    const auto test = load_feature_file(o.test);
    require_same_dimension(test.dimension(), train.dimension(), "knn test set");
    const auto labels = load_labels(o.train_labels);
    std::vector<std::string> train_labels;
    for (const auto& s : train) {
        if (!labels.contains(s.image_id())) throw std::invalid_argument("no label for training image '" + s.image_id() + "'");
        train_labels.push_back(labels.at(s.image_id()));
    }
    if (o.k == 0 || o.k > train.size()) throw UsageError("--k must be in [1, " + std::to_string(train.size()) + "]");
    Banner b;
    LabelTable predictions;
    if (o.similarity == "euclidean") {
        for (const auto* db : {&train, &test})
            for (const auto& s : *db)
                if (s.size() != 1) throw UsageError("--similarity euclidean expects one vector per image (bow output); '" + s.image_id() + "' has " + std::to_string(s.size()));
        b.print(sub);
        for (const auto& q : test) {
            predictions.add(q.image_id(), knn_classify(
                                              train_labels, o.k, [&](std::size_t i) { return negative_euclidean(q[0], train[i][0]); }, c.threads));
        }
    } else {
        const auto kernel = make_kernel(o.kernel, train, c.seed, b);
        b.print(sub);
        const auto prepared = kernel.prepare_all(train, c.threads);
        for (const auto& q : test) {
            const auto pq = kernel.prepare(q);
            predictions.add(q.image_id(), knn_classify(train_labels, o.k, [&](std::size_t i) { return kernel(pq, prepared[i]); }, c.threads));
        }
    }
    if (!o.out.empty()) save_labels(predictions, o.out);
    if (!o.test_labels.empty()) {
        const auto truth = load_labels(o.test_labels);
        std::vector<std::string> pred, gold;
        for (const auto& [id, label] : predictions.entries()) {
            if (!truth.contains(id)) throw std::invalid_argument("no label for test image '" + id + "'");
            pred.push_back(label);
            gold.push_back(truth.at(id));
        }
        std::cout << "accuracy\t" << fixed6(accuracy(pred, gold)) << '\n';
    } else if (o.out.empty()) {
        write_labels(predictions, std::cout);
    }
    return kOk;
}

int report(const char* category, const std::exception& e, int code) {
    std::cerr << "lfir: " << category << ": " << e.what() << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lfir: retrieval and classification over sets of local feature vectors"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "lfir 0.1.0");

    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "Flat key=value file; keys are long option names, flags override it");
        sub->add_option("--seed", common.seed, "Run seed; each stage derives its own sub-seed")->capture_default_str();
        sub->add_option("--threads", common.threads, "Worker threads for Gram and scoring stages (output does not depend on it)")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        sub->add_flag("--force", common.force, "Overwrite existing output files");
        sub->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        for (auto* opt : sub->get_options()) opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    };
    std::function<int()> action;

    SynthOpts synth;
    auto* s = app.add_subcommand("synth", "Generate a labelled synthetic feature database");
    s->add_option("--classes", synth.spec.class_count)->capture_default_str();
    s->add_option("--per-class", synth.spec.images_per_class)->capture_default_str();
    s->add_option("--min-vectors", synth.spec.min_vectors)->capture_default_str();
    s->add_option("--max-vectors", synth.spec.max_vectors)->capture_default_str();
    s->add_option("--dim", synth.spec.dimension)->capture_default_str();
    s->add_option("--separation", synth.spec.class_separation, "Distance between class centres (component std units)")->capture_default_str();
    s->add_option("--components", synth.spec.components_per_class, "Mixture components per class")->capture_default_str();
    s->add_option("--signature-dim", synth.spec.signature_dim)->capture_default_str();
    s->add_option("--signature-separation", synth.spec.signature_separation)->capture_default_str();
    s->add_option("--out-features", synth.out_features)->required();
    s->add_option("--out-truth", synth.out_truth)->required();
    s->add_option("--out-labels", synth.out_labels);
    s->add_option("--out-signatures", synth.out_signatures);
    add_common(s);
    s->callback([&, s] { action = [&, s] { return run_synth(synth, common, *s); }; });

    ExtractOpts extract;
    auto* e = app.add_subcommand("extract", "Block colour/edge/texture features (10x10 grid, 23 dims) from binary PPM images");
    e->add_option("--images", extract.images, "PPM files or directories of .ppm files")->required();
    e->add_option("--out", extract.out)->required();
    e->add_option("--signatures", extract.signatures, "Also write 48-dim Lab signatures here");
    e->add_option("--edge-threshold", extract.edge_threshold, "Sobel magnitude fraction needed to vote")->capture_default_str();
    add_common(e);
    e->callback([&, e] { action = [&, e] { return run_extract(extract, common, *e); }; });

    UbmOpts ubm;
    auto* u = app.add_subcommand("train-ubm", "Fit a diagonal-covariance UBM on the pooled vectors of a database");
    u->add_option("--features", ubm.features)->required();
    u->add_option("--components,-Q", ubm.components)->required();
    u->add_option("--max-iter", ubm.max_iter)->capture_default_str();
    u->add_option("--tolerance", ubm.tolerance)->capture_default_str();
    u->add_option("--out", ubm.out)->required();
    add_common(u);
    u->callback([&, u] { action = [&, u] { return run_train_ubm(ubm, common, *u); }; });

    VocabOpts vocab;
    auto* v = app.add_subcommand("vocab", "Build an IMK vocabulary: k-means centres (LFV) or a UBM (GMM)");
    v->add_option("--features", vocab.features)->required();
    v->add_option("--type", vocab.type)->check(CLI::IsMember({"centers", "ubm"}))->capture_default_str();
    v->add_option("--size", vocab.size, "Number of centres or UBM components")->required();
    v->add_option("--out", vocab.out)->required();
    add_common(v);
    v->callback([&, v] { action = [&, v] { return run_vocab(vocab, common, *v); }; });

    IndexOpts index;
    auto* ix = app.add_subcommand("index", "Cluster the database for two-step retrieval");
    ix->add_option("--features", index.features)->required();
    ix->add_option("--method", index.method)->check(CLI::IsMember({"kmeans-supervector", "kmedoids-kernel", "ap-kernel"}))->capture_default_str();
    ix->add_option("--clusters,-K", index.clusters, "Cluster count (ignored by ap-kernel)");
    ix->add_option("--ap-damping", index.damping)->capture_default_str();
    ix->add_option("--ap-preference", index.preference, "Shared preference, or 'median' of the similarities")->capture_default_str();
    ix->add_option("--ap-max-iter", index.ap_max_iter)->capture_default_str();
    add_kernel_options(ix, index.kernel);
    ix->add_option("--out", index.out)->required();
    add_common(ix);
    ix->callback([&, ix] { action = [&, ix] { return run_index(index, common, *ix); }; });

    RetrieveOpts retrieve;
    auto* r1 = app.add_subcommand("retrieve", "One-step retrieval: score every database image");
    r1->add_option("--features", retrieve.features)->required();
    r1->add_option("--queries", retrieve.queries, "Query sets (default: every database image)");
    add_kernel_options(r1, retrieve.kernel);
    r1->add_flag("--exclude-self", retrieve.exclude_self, "Leave the query image out of its own ranking");
    r1->add_option("--out", retrieve.out)->required();
    add_common(r1);
    r1->callback([&, r1] { action = [&, r1] { return run_retrieve(retrieve, common, *r1, false); }; });

    RetrieveOpts retrieve2;
    auto* r2 = app.add_subcommand("retrieve2", "Two-step retrieval: search only the n most similar clusters");
    r2->add_option("--features", retrieve2.features)->required();
    r2->add_option("--queries", retrieve2.queries, "Query sets (default: every database image)");
    r2->add_option("--index", retrieve2.index)->required();
    r2->add_option("--n-clusters", retrieve2.n_clusters)->capture_default_str();
    add_kernel_options(r2, retrieve2.kernel);
    r2->add_flag("--exclude-self", retrieve2.exclude_self, "Leave the query image out of its own ranking");
    r2->add_option("--reduction-out", retrieve2.reduction_out, "Per-query searched/total counts for evaluate --reduction");
    r2->add_option("--out", retrieve2.out)->required();
    add_common(r2);
    r2->callback([&, r2] { action = [&, r2] { return run_retrieve(retrieve2, common, *r2, true); }; });

    BaselineOpts baseline;
    auto* bl = app.add_subcommand("baseline", "Per-image Gaussian / 2-component GMM models ranked by -divergence");
    bl->add_option("--features", baseline.features)->required();
    bl->add_option("--queries", baseline.queries, "Query sets (default: every database image)");
    bl->add_option("--model", baseline.model)->check(CLI::IsMember({"gaussian", "2gmm"}))->capture_default_str();
    bl->add_option("--divergence", baseline.divergence, "kld needs --model gaussian")->check(CLI::IsMember({"kld", "c2"}))->capture_default_str();
    bl->add_flag("--exclude-self", baseline.exclude_self);
    bl->add_option("--out", baseline.out)->required();
    add_common(bl);
    bl->callback([&, bl] { action = [&, bl] { return run_baseline(baseline, common, *bl); }; });

    EvaluateOpts eval;
    auto* ev = app.add_subcommand("evaluate", "Per-query AP, MAP and 11-point interpolated precision");
    ev->add_option("--rankings", eval.rankings)->required();
    ev->add_option("--truth", eval.truth)->required();
    ev->add_option("--reduction", eval.reduction, "Reduction file from retrieve2 (adds the per-query mean reduction)");
    ev->add_flag("--csv", eval.csv, "Emit CSV instead of a text table");
    ev->add_option("--out", eval.out, "Report file (default: stdout)");
    add_common(ev);
    ev->callback([&, ev] { action = [&, ev] { return run_evaluate(eval, common, *ev); }; });

    MetaTrainOpts mtrain;
    auto* mt = app.add_subcommand("meta-train", "Train the probabilistic re-ranker on black-box rankings");
    mt->add_option("--features", mtrain.features, "Database defining the search space")->required();
    mt->add_option("--rankings", mtrain.rankings, "Black-box rankings of the training queries")->required();
    mt->add_option("--truth", mtrain.truth)->required();
    mt->add_option("--signatures", mtrain.signatures)->required();
    mt->add_option("--threshold,-T", mtrain.threshold, "Black-box cut-off: the top T ranked images count as retrieved")->capture_default_str();
    mt->add_option("--out", mtrain.out)->required();
    add_common(mt);
    mt->callback([&, mt] { action = [&, mt] { return run_meta_train(mtrain, common, *mt); }; });

    MetaRerankOpts mrerank;
    auto* mr = app.add_subcommand("meta-rerank", "Re-rank black-box rankings with a trained meta model");
    mr->add_option("--model", mrerank.model)->required();
    mr->add_option("--rankings", mrerank.rankings)->required();
    mr->add_option("--signatures", mrerank.signatures)->required();
    mr->add_flag("--exclude-self", mrerank.exclude_self);
    mr->add_option("--out", mrerank.out)->required();
    add_common(mr);
    mr->callback([&, mr] { action = [&, mr] { return run_meta_rerank(mrerank, common, *mr); }; });

    CodebookOpts codebook;
    auto* cb = app.add_subcommand("codebook", "k-means visual words over pooled local features");
    cb->add_option("--features", codebook.features)->required();
    cb->add_option("--words", codebook.words)->required();
    cb->add_option("--out", codebook.out)->required();
    add_common(cb);
    cb->callback([&, cb] { action = [&, cb] { return run_codebook(codebook, common, *cb); }; });

    BowOpts bow;
    auto* bw = app.add_subcommand("bow", "Bag-of-words histograms (one vector per image)");
    bw->add_option("--features", bow.features)->required();
    bw->add_option("--codebook", bow.codebook)->required();
    bw->add_flag("--l1", bow.l1, "Divide counts by the set size");
    bw->add_option("--out", bow.out)->required();
    add_common(bw);
    bw->callback([&, bw] { action = [&, bw] { return run_bow(bow, common, *bw); }; });

    KnnOpts knn;
    auto* kn = app.add_subcommand(
        "knn",
        "k-nearest-neighbour classification. Vote ties go to the label with the highest summed similarity, then the "
        "lexicographically lowest label (deterministic, not random)");
    kn->add_option("--train", knn.train)->required();
    kn->add_option("--train-labels", knn.train_labels)->required();
    kn->add_option("--test", knn.test)->required();
    kn->add_option("--test-labels", knn.test_labels, "Print accuracy against these labels");
    kn->add_option("--k", knn.k)->capture_default_str();
    kn->add_option("--similarity", knn.similarity, "kernel (set kernel below) or euclidean (negative distance on bow vectors)")
        ->check(CLI::IsMember({"kernel", "euclidean"}))
        ->capture_default_str();
    add_kernel_options(kn, knn.kernel);
    kn->add_option("--out", knn.out, "Predicted labels file");
    add_common(kn);
    kn->callback([&, kn] { action = [&, kn] { return run_knn(knn, common, *kn); }; });

    try {
        // Config values are injected ahead of the command-line arguments, so flags win.
        std::vector<std::string> args(argv, argv + argc);
        std::string config_path;
        for (std::size_t i = 2; i < args.size(); ++i) {
            if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
            if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
        }
        if (!config_path.empty() && args.size() > 1) {
            const CLI::App* sub = app.get_subcommand_no_throw(args[1]);
            if (!sub) throw UsageError("--config needs a subcommand first");
            auto extra = config_arguments(config_path, *sub);
            args.insert(args.begin() + 2, extra.begin(), extra.end());
        }
        std::vector<char*> cargs;
        for (auto& a : args) cargs.push_back(a.data());
        app.parse(static_cast<int>(cargs.size()), cargs.data());
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? kOk : kUsage;
    } catch (const UsageError& err) {
        return report("usage error", err, kUsage);
    } catch (const IoError& err) {
        return report("input error", err, kInput);
    }

    try {
        return action ? action() : kUsage;
    } catch (const UsageError& err) {
        return report("usage error", err, kUsage);
    } catch (const FormatError& err) {
        return report("format error", err, kInput);
    } catch (const IoError& err) {
        return report("input error", err, kInput);
    } catch (const UnsupportedError& err) {
        return report("unsupported combination", err, kUnsupported);
    } catch (const DimensionError& err) {
        return report("dimension mismatch", err, kUnsupported);
    } catch (const std::invalid_argument& err) {
        return report("invalid argument", err, kUsage);
    } catch (const std::exception& err) {
        return report("error", err, kRuntime);
    }
}
