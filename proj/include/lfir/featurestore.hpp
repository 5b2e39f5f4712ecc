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

// Core data model (feature sets, databases, ground truth, rankings) and the
// text file formats used to persist them.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lfir/error.hpp"

namespace lfir {

using FeatureVector = std::vector<double>;

/// One image as a non-empty set of d-dimensional local feature vectors, stored row-major.
class LocalFeatureSet {
public:
    LocalFeatureSet() = default;

    LocalFeatureSet(std::string image_id, std::size_t dimension, std::vector<double> data)
        : image_id_(std::move(image_id)), dimension_(dimension), data_(std::move(data)) {
        validate();
    }

    LocalFeatureSet(std::string image_id, const std::vector<FeatureVector>& rows)
        : image_id_(std::move(image_id)), dimension_(rows.empty() ? 0 : rows.front().size()) {
        data_.reserve(rows.size() * dimension_);
        for (const auto& row : rows) {
            require_same_dimension(row.size(), dimension_, "LocalFeatureSet");
            data_.insert(data_.end(), row.begin(), row.end());
        }
        validate();
    }

    const std::string& image_id() const noexcept { return image_id_; }
    std::size_t dimension() const noexcept { return dimension_; }
    std::size_t size() const noexcept { return dimension_ ? data_.size() / dimension_ : 0; }
    std::span<const double> operator[](std::size_t i) const { return {data_.data() + i * dimension_, dimension_}; }
    std::span<const double> data() const noexcept { return data_; }

    FeatureVector vector(std::size_t i) const {
        auto row = (*this)[i];
        return {row.begin(), row.end()};
    }

    friend bool operator==(const LocalFeatureSet&, const LocalFeatureSet&) = default;

private:
    void validate() const {
        if (dimension_ == 0) throw std::invalid_argument("LocalFeatureSet '" + image_id_ + "': dimension must be positive");
        if (data_.empty()) throw std::invalid_argument("LocalFeatureSet '" + image_id_ + "': at least one vector required");
        if (data_.size() % dimension_ != 0) {
            throw DimensionError("LocalFeatureSet '" + image_id_ + "': data length not a multiple of dimension");
        }
        for (double v : data_) {
            if (!std::isfinite(v)) throw std::invalid_argument("LocalFeatureSet '" + image_id_ + "': non-finite value");
        }
    }

    std::string image_id_;
    std::size_t dimension_ = 0;
    std::vector<double> data_;
};

/// In-memory repository of feature sets sharing one dimension, unique image ids, insertion order kept.
class FeatureDatabase {
public:
    FeatureDatabase() = default;
    explicit FeatureDatabase(std::size_t dimension) : dimension_(dimension) {
        if (dimension == 0) throw std::invalid_argument("FeatureDatabase: dimension must be positive");
    }

    void add(LocalFeatureSet set) {
        require_same_dimension(set.dimension(), dimension_, "FeatureDatabase::add");
        if (index_.count(set.image_id())) {
            throw std::invalid_argument("FeatureDatabase: duplicate image_id '" + set.image_id() + "'");
        }
        index_.emplace(set.image_id(), sets_.size());
        sets_.push_back(std::move(set));
    }

    std::size_t dimension() const noexcept { return dimension_; }
    std::size_t size() const noexcept { return sets_.size(); }
    bool empty() const noexcept { return sets_.empty(); }
    const LocalFeatureSet& operator[](std::size_t i) const { return sets_[i]; }
    const std::vector<LocalFeatureSet>& sets() const noexcept { return sets_; }
    auto begin() const { return sets_.begin(); }
    auto end() const { return sets_.end(); }

    std::optional<std::size_t> find(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    std::size_t total_vectors() const {
        std::size_t n = 0;
        for (const auto& s : sets_) n += s.size();
        return n;
    }

    std::vector<std::string> image_ids() const {
        std::vector<std::string> ids;
        ids.reserve(sets_.size());
        for (const auto& s : sets_) ids.push_back(s.image_id());
        return ids;
    }

    friend bool operator==(const FeatureDatabase& a, const FeatureDatabase& b) {
        return a.dimension_ == b.dimension_ && a.sets_ == b.sets_;
    }

private:
    std::size_t dimension_ = 1;
    std::vector<LocalFeatureSet> sets_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Query id -> non-empty set of relevant image ids. Query order follows insertion.
class GroundTruthTable {
public:
    void add(const std::string& query, std::set<std::string> relevant) {
        if (relevant.empty()) throw std::invalid_argument("GroundTruthTable: empty relevant set for '" + query + "'");
        if (entries_.count(query)) throw std::invalid_argument("GroundTruthTable: duplicate query '" + query + "'");
        order_.push_back(query);
        entries_.emplace(query, std::move(relevant));
    }

    bool contains(const std::string& query) const { return entries_.count(query) != 0; }

    const std::set<std::string>& relevant(const std::string& query) const {
        auto it = entries_.find(query);
        if (it == entries_.end()) throw std::out_of_range("GroundTruthTable: no entry for query '" + query + "'");
        return it->second;
    }

    const std::vector<std::string>& queries() const noexcept { return order_; }
    std::size_t size() const noexcept { return order_.size(); }

    friend bool operator==(const GroundTruthTable& a, const GroundTruthTable& b) {
        return a.order_ == b.order_ && a.entries_ == b.entries_;
    }

private:
    std::vector<std::string> order_;
    std::map<std::string, std::set<std::string>> entries_;
};

struct RankedItem {
    std::string image_id;
    double score = 0.0;

    friend bool operator==(const RankedItem&, const RankedItem&) = default;
};

/// Ordered scored retrieval list for one query. Scores must be non-increasing;
/// runs of equal scores are ordered by ascending image id at construction.
class Ranking {
public:
    /// Keeps the given order verbatim (used when reading rankings whose scores were rounded on write).
    struct PreserveOrder {};

    Ranking() = default;

    Ranking(std::string query_id, std::vector<RankedItem> items) : query_id_(std::move(query_id)), items_(std::move(items)) {
        check();
        for (std::size_t begin = 0; begin < items_.size();) {
            std::size_t end = begin + 1;
            while (end < items_.size() && items_[end].score == items_[begin].score) ++end;
            std::sort(items_.begin() + static_cast<std::ptrdiff_t>(begin), items_.begin() + static_cast<std::ptrdiff_t>(end),
                      [](const RankedItem& a, const RankedItem& b) { return a.image_id < b.image_id; });
            begin = end;
        }
    }

    Ranking(std::string query_id, std::vector<RankedItem> items, PreserveOrder)
        : query_id_(std::move(query_id)), items_(std::move(items)) {
        check();
    }

    /// Sorts arbitrary scored items: descending score, ties by ascending image id.
    static Ranking from_scores(std::string query_id, std::vector<RankedItem> items) {
        std::sort(items.begin(), items.end(), [](const RankedItem& a, const RankedItem& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.image_id < b.image_id;
        });
        return Ranking(std::move(query_id), std::move(items));
    }

    const std::string& query_id() const noexcept { return query_id_; }
    const std::vector<RankedItem>& items() const noexcept { return items_; }
    std::size_t size() const noexcept { return items_.size(); }
    bool empty() const noexcept { return items_.empty(); }
    const RankedItem& operator[](std::size_t i) const { return items_[i]; }

    std::vector<std::string> ids() const {
        std::vector<std::string> out;
        out.reserve(items_.size());
        for (const auto& it : items_) out.push_back(it.image_id);
        return out;
    }

    /// First `n` items (or all when shorter).
    Ranking truncated(std::size_t n) const {
        std::vector<RankedItem> head(items_.begin(), items_.begin() + static_cast<std::ptrdiff_t>(std::min(n, items_.size())));
        return Ranking(query_id_, std::move(head), PreserveOrder{});
    }

    friend bool operator==(const Ranking&, const Ranking&) = default;

private:
    void check() const {
        std::set<std::string> seen;
        for (std::size_t i = 0; i < items_.size(); ++i) {
            if (std::isnan(items_[i].score)) throw std::invalid_argument("Ranking: NaN score");
            if (i > 0 && items_[i].score > items_[i - 1].score) {
                throw std::invalid_argument("Ranking '" + query_id_ + "': scores must be non-increasing");
            }
            if (!seen.insert(items_[i].image_id).second) {
                throw std::invalid_argument("Ranking '" + query_id_ + "': duplicate image_id '" + items_[i].image_id + "'");
            }
        }
    }

    std::string query_id_;
    std::vector<RankedItem> items_;
};

/// Ordered (image id, value) table: class labels or per-image signatures.
template <typename Value>
class IdTable {
public:
    void add(std::string id, Value value) {
        if (index_.count(id)) throw std::invalid_argument("duplicate id '" + id + "'");
        index_.emplace(id, entries_.size());
        entries_.emplace_back(std::move(id), std::move(value));
    }
    const Value& at(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw std::out_of_range("no entry for id '" + id + "'");
        return entries_[it->second].second;
    }
    bool contains(const std::string& id) const { return index_.count(id) != 0; }
    const std::vector<std::pair<std::string, Value>>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }

    friend bool operator==(const IdTable& a, const IdTable& b) { return a.entries_ == b.entries_; }

private:
    std::vector<std::pair<std::string, Value>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

using LabelTable = IdTable<std::string>;
using SignatureTable = IdTable<std::vector<double>>;

// ---------------------------------------------------------------------------
// Text helpers

/// Shortest decimal representation that parses back to the same double.
inline std::string format_real(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

/// Fixed 6-decimal rendering used in ranking files. Negative zero prints as zero.
inline std::string format_score(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    std::string s(buf);
    if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
    return s;
}

inline double parse_real(std::string_view token, std::size_t line) {
    double v = 0.0;
    const char* first = token.data();
    const char* last = token.data() + token.size();
    if (!token.empty() && *first == '+') ++first;
    auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last) throw FormatError("invalid real '" + std::string(token) + "'", line);
    if (!std::isfinite(v)) throw FormatError("non-finite value '" + std::string(token) + "'", line);
    return v;
}

inline std::size_t parse_count(std::string_view token, std::size_t line) {
    std::size_t v = 0;
    auto res = std::from_chars(token.data(), token.data() + token.size(), v);
    if (res.ec != std::errc() || res.ptr != token.data() + token.size()) {
        throw FormatError("invalid integer '" + std::string(token) + "'", line);
    }
    return v;
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

/// Line reader that skips blank lines and `#` comments and tracks 1-based line numbers.
class LineReader {
public:
    explicit LineReader(std::istream& in) : in_(in) {}

    bool next(std::string& line) {
        while (std::getline(in_, line)) {
            ++line_no_;
            auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos || line[first] == '#') continue;
            return true;
        }
        return false;
    }

    std::size_t line_number() const noexcept { return line_no_; }

private:
    std::istream& in_;
    std::size_t line_no_ = 0;
};

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    return in;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    return out;
}

inline void finish_output(std::ofstream& out, const std::string& path) {
    out.flush();
    if (!out) throw IoError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// LFV feature files: `LFV 1 <d>`, then per image `image <id> <n>` and n rows of d reals.

inline FeatureDatabase read_features(std::istream& in) {
    LineReader reader(in);
    std::string line;
    if (!reader.next(line)) throw FormatError("missing LFV header", 1);
    auto header = split_ws(line);
    if (header.size() != 3 || header[0] != "LFV" || header[1] != "1") {
        throw FormatError("malformed header, expected 'LFV 1 <d>'", reader.line_number());
    }
    const std::size_t dim = parse_count(header[2], reader.line_number());
    if (dim == 0) throw FormatError("dimension must be positive", reader.line_number());
    FeatureDatabase db(dim);

    while (reader.next(line)) {
        const std::size_t image_line = reader.line_number();
        auto tok = split_ws(line);
        if (tok.size() != 3 || tok[0] != "image") throw FormatError("expected 'image <id> <n>'", image_line);
        std::string id(tok[1]);
        const std::size_t n = parse_count(tok[2], image_line);
        if (n == 0) throw FormatError("image '" + id + "' declares zero vectors", image_line);
        if (db.find(id)) throw FormatError("duplicate image_id '" + id + "'", image_line);
        std::vector<double> data;
        data.reserve(n * dim);
        for (std::size_t r = 0; r < n; ++r) {
            if (!reader.next(line)) {
                throw FormatError("image '" + id + "' declares " + std::to_string(n) + " vectors, found " + std::to_string(r),
                                  reader.line_number());
            }
            auto vals = split_ws(line);
            if (!vals.empty() && vals[0] == "image") {
                throw FormatError("image '" + id + "' declares " + std::to_string(n) + " vectors, found " + std::to_string(r),
                                  reader.line_number());
            }
            if (vals.size() != dim) {
                throw FormatError("vector length " + std::to_string(vals.size()) + " != dimension " + std::to_string(dim),
                                  reader.line_number());
            }
            for (auto v : vals) data.push_back(parse_real(v, reader.line_number()));
        }
        db.add(LocalFeatureSet(std::move(id), dim, std::move(data)));
    }
    return db;
}

inline void write_features(const FeatureDatabase& db, std::ostream& out) {
    out << "LFV 1 " << db.dimension() << '\n';
    for (const auto& set : db) {
        out << "image " << set.image_id() << ' ' << set.size() << '\n';
        for (std::size_t i = 0; i < set.size(); ++i) {
            auto row = set[i];
            for (std::size_t k = 0; k < row.size(); ++k) {
                if (k) out << ' ';
                out << format_real(row[k]);
            }
            out << '\n';
        }
    }
}

inline FeatureDatabase load_feature_file(const std::string& path) {
    auto in = open_input(path);
    return read_features(in);
}

inline void save_feature_file(const FeatureDatabase& db, const std::string& path) {
    auto out = open_output(path);
    write_features(db, out);
    finish_output(out, path);
}

// ---------------------------------------------------------------------------
// Ground truth: `<query_id>: <id> <id> ...`

inline GroundTruthTable read_ground_truth(std::istream& in) {
    LineReader reader(in);
    std::string line;
    GroundTruthTable table;
    while (reader.next(line)) {
        auto colon = line.find(':');
        if (colon == std::string::npos) throw FormatError("expected '<query_id>: <ids...>'", reader.line_number());
        auto qtok = split_ws(std::string_view(line).substr(0, colon));
        if (qtok.size() != 1) throw FormatError("malformed query id", reader.line_number());
        std::string query(qtok[0]);
        if (table.contains(query)) throw FormatError("duplicate query '" + query + "'", reader.line_number());
        std::set<std::string> relevant;
        for (auto t : split_ws(std::string_view(line).substr(colon + 1))) relevant.emplace(t);
        if (relevant.empty()) throw FormatError("empty relevant set for query '" + query + "'", reader.line_number());
        table.add(query, std::move(relevant));
    }
    return table;
}

inline void write_ground_truth(const GroundTruthTable& table, std::ostream& out) {
    for (const auto& q : table.queries()) {
        out << q << ':';
        for (const auto& id : table.relevant(q)) out << ' ' << id;
        out << '\n';
    }
}

inline GroundTruthTable load_ground_truth(const std::string& path) {
    auto in = open_input(path);
    return read_ground_truth(in);
}

inline void save_ground_truth(const GroundTruthTable& table, const std::string& path) {
    auto out = open_output(path);
    write_ground_truth(table, out);
    finish_output(out, path);
}

// ---------------------------------------------------------------------------
// Rankings: `<query_id> <rank> <image_id> <score>`, rank from 1.

inline void write_rankings(const std::vector<Ranking>& rankings, std::ostream& out) {
    for (const auto& r : rankings) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            out << r.query_id() << ' ' << (i + 1) << ' ' << r[i].image_id << ' ' << format_score(r[i].score) << '\n';
        }
    }
}

inline void write_ranking(const std::vector<Ranking>& rankings, const std::string& path) {
    auto out = open_output(path);
    write_rankings(rankings, out);
    finish_output(out, path);
}

/// Reads rankings back in file order; item order follows the rank column.
inline std::vector<Ranking> read_rankings(std::istream& in) {
    LineReader reader(in);
    std::string line;
    std::vector<std::string> order;
    std::map<std::string, std::vector<std::pair<std::size_t, RankedItem>>> grouped;
    while (reader.next(line)) {
        auto tok = split_ws(line);
        if (tok.size() != 4) throw FormatError("expected '<query_id> <rank> <image_id> <score>'", reader.line_number());
        std::string q(tok[0]);
        const std::size_t rank = parse_count(tok[1], reader.line_number());
        if (rank == 0) throw FormatError("rank must start at 1", reader.line_number());
        if (!grouped.count(q)) order.push_back(q);
        grouped[q].push_back({rank, RankedItem{std::string(tok[2]), parse_real(tok[3], reader.line_number())}});
    }
    std::vector<Ranking> out;
    for (const auto& q : order) {
        auto& rows = grouped[q];
        std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        std::vector<RankedItem> items;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].first != i + 1) throw FormatError("ranks for query '" + q + "' are not 1..n");
            items.push_back(std::move(rows[i].second));
        }
        out.emplace_back(q, std::move(items), Ranking::PreserveOrder{});
    }
    return out;
}

inline std::vector<Ranking> load_rankings(const std::string& path) {
    auto in = open_input(path);
    return read_rankings(in);
}

// ---------------------------------------------------------------------------
// Labels: `<image_id> <class_label>`; signatures: `<image_id> <reals...>`.

inline LabelTable read_labels(std::istream& in) {
    LineReader reader(in);
    std::string line;
    LabelTable table;
    while (reader.next(line)) {
        auto tok = split_ws(line);
        if (tok.size() != 2) throw FormatError("expected '<image_id> <class_label>'", reader.line_number());
        if (table.contains(std::string(tok[0]))) throw FormatError("duplicate image_id", reader.line_number());
        table.add(std::string(tok[0]), std::string(tok[1]));
    }
    return table;
}

inline void write_labels(const LabelTable& table, std::ostream& out) {
    for (const auto& [id, label] : table.entries()) out << id << ' ' << label << '\n';
}

inline LabelTable load_labels(const std::string& path) {
    auto in = open_input(path);
    return read_labels(in);
}

inline void save_labels(const LabelTable& table, const std::string& path) {
    auto out = open_output(path);
    write_labels(table, out);
    finish_output(out, path);
}

inline SignatureTable read_signatures(std::istream& in, std::size_t expected_length = 0) {
    LineReader reader(in);
    std::string line;
    SignatureTable table;
    while (reader.next(line)) {
        auto tok = split_ws(line);
        if (tok.size() < 2) throw FormatError("expected '<image_id> <reals...>'", reader.line_number());
        std::vector<double> values;
        for (std::size_t i = 1; i < tok.size(); ++i) values.push_back(parse_real(tok[i], reader.line_number()));
        if (expected_length && values.size() != expected_length) {
            throw FormatError("signature length " + std::to_string(values.size()) + " != " + std::to_string(expected_length),
                              reader.line_number());
        }
        if (table.size() && values.size() != table.entries().front().second.size()) {
            throw FormatError("inconsistent signature length", reader.line_number());
        }
        if (table.contains(std::string(tok[0]))) throw FormatError("duplicate image_id", reader.line_number());
        table.add(std::string(tok[0]), std::move(values));
    }
    return table;
}

inline void write_signatures(const SignatureTable& table, std::ostream& out) {
    for (const auto& [id, values] : table.entries()) {
        out << id;
        for (double v : values) out << ' ' << format_real(v);
        out << '\n';
    }
}

inline SignatureTable load_signatures(const std::string& path, std::size_t expected_length = 0) {
    auto in = open_input(path);
    return read_signatures(in, expected_length);
}

inline void save_signatures(const SignatureTable& table, const std::string& path) {
    auto out = open_output(path);
    write_signatures(table, out);
    finish_output(out, path);
}

}  // namespace lfir
