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

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "lfir/parallel.hpp"

namespace lfir {

/// Dense row-major n x n matrix of doubles.
class SquareMatrix {
public:
    SquareMatrix() = default;
    explicit SquareMatrix(std::size_t n, double fill = 0.0) : n_(n), data_(n * n, fill) {}

    std::size_t size() const noexcept { return n_; }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * n_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * n_ + j]; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * n_, n_}; }
    std::span<const double> data() const noexcept { return data_; }

    SquareMatrix transposed() const {
        SquareMatrix t(n_);
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = 0; j < n_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    friend bool operator==(const SquareMatrix&, const SquareMatrix&) = default;

private:
    std::size_t n_ = 0;
    std::vector<double> data_;
};

/// K[i][j] = kernel(items[i], items[j]); each unordered pair is evaluated once (i <= j)
/// and mirrored, so the result is exactly symmetric and independent of `threads`.
template <typename Item, typename Kernel>
SquareMatrix gram_matrix(std::span<const Item> items, Kernel&& kernel, std::size_t threads = 1) {
    if (items.empty()) throw std::invalid_argument("gram_matrix: empty collection");
    const std::size_t n = items.size();
    SquareMatrix k(n);
    parallel_for(n, threads, [&](std::size_t i) {
        for (std::size_t j = i; j < n; ++j) k(i, j) = kernel(items[i], items[j]);
    });
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) k(j, i) = k(i, j);
    return k;
}

/// Kernel-induced squared distance K(i,i) + K(j,j) - 2K(i,j), clamped at 0, zero diagonal.
inline SquareMatrix kernel_distance_matrix(const SquareMatrix& gram) {
    const std::size_t n = gram.size();
    SquareMatrix d(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            d(i, j) = i == j ? 0.0 : std::max(0.0, gram(i, i) + gram(j, j) - 2.0 * gram(i, j));
        }
    }
    return d;
}

/// Median of the strict upper triangle (mean of the two middle values for an even count).
inline double upper_triangle_median(const SquareMatrix& m) {
    std::vector<double> values;
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = i + 1; j < m.size(); ++j) values.push_back(m(i, j));
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const std::size_t h = values.size() / 2;
    return values.size() % 2 ? values[h] : 0.5 * (values[h - 1] + values[h]);
}

}  // namespace lfir
