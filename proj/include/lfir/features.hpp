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

// Block-based local features (HSV color moments, edge direction histogram,
// Haar wavelet subband entropies) and the 4x4 Lab signature.

#include <algorithm>
#include <array>
#include <cmath>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "lfir/error.hpp"
#include "lfir/featurestore.hpp"

namespace lfir {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Row-major RGB raster. Also used for blocks cut out of an image.
class RgbImage {
public:
    RgbImage() = default;
    RgbImage(std::size_t width, std::size_t height, std::vector<Rgb> pixels)
        : width_(width), height_(height), pixels_(std::move(pixels)) {
        if (width == 0 || height == 0) throw std::invalid_argument("RgbImage: width and height must be positive");
        if (pixels_.size() != width * height) throw std::invalid_argument("RgbImage: pixel count != width*height");
    }
    RgbImage(std::size_t width, std::size_t height, Rgb fill) : RgbImage(width, height, std::vector<Rgb>(width * height, fill)) {}

    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t pixel_count() const noexcept { return pixels_.size(); }
    const Rgb& at(std::size_t x, std::size_t y) const { return pixels_[y * width_ + x]; }
    Rgb& at(std::size_t x, std::size_t y) { return pixels_[y * width_ + x]; }
    const std::vector<Rgb>& pixels() const noexcept { return pixels_; }

    RgbImage crop(std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) const {
        std::vector<Rgb> out;
        out.reserve(w * h);
        for (std::size_t y = y0; y < y0 + h; ++y) {
            for (std::size_t x = x0; x < x0 + w; ++x) out.push_back(at(x, y));
        }
        return RgbImage(w, h, std::move(out));
    }

    friend bool operator==(const RgbImage&, const RgbImage&) = default;

private:
    std::size_t width_ = 0, height_ = 0;
    std::vector<Rgb> pixels_;
};

using Block = RgbImage;

inline constexpr std::size_t kColorFeatures = 9;
inline constexpr std::size_t kEdgeBins = 8;
inline constexpr std::size_t kTextureFeatures = 6;
inline constexpr std::size_t kBlockFeatureDim = kColorFeatures + kEdgeBins + kTextureFeatures;
inline constexpr std::size_t kLabSignatureDim = 48;

struct EdgeConfig {
    /// Fraction of the largest possible Sobel magnitude a pixel needs to vote.
    double threshold_fraction = 0.10;
};

/// Equal-sized blocks in row-major order; right/bottom remainder pixels are dropped.
inline std::vector<Block> partition_blocks(const RgbImage& image, std::size_t grid_rows = 10, std::size_t grid_cols = 10) {
    if (grid_rows == 0 || grid_cols == 0) throw std::invalid_argument("partition_blocks: grid must be non-empty");
    if (image.width() < grid_cols || image.height() < grid_rows) {
        throw std::invalid_argument("partition_blocks: image smaller than grid");
    }
    const std::size_t bw = image.width() / grid_cols;
    const std::size_t bh = image.height() / grid_rows;
    std::vector<Block> blocks;
    blocks.reserve(grid_rows * grid_cols);
    for (std::size_t r = 0; r < grid_rows; ++r) {
        for (std::size_t c = 0; c < grid_cols; ++c) blocks.push_back(image.crop(c * bw, r * bh, bw, bh));
    }
    return blocks;
}

/// HSV with every channel in [0,1]; hue wraps and is 0 for achromatic pixels.
inline std::array<double, 3> rgb_to_hsv(Rgb p) {
    const double r = p.r / 255.0, g = p.g / 255.0, b = p.b / 255.0;
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double delta = mx - mn;
    double h = 0.0;
    if (delta > 0.0) {
        if (mx == r) {
            h = std::fmod((g - b) / delta, 6.0);
            if (h < 0.0) h += 6.0;
        } else if (mx == g) {
            h = (b - r) / delta + 2.0;
        } else {
            h = (r - g) / delta + 4.0;
        }
        h /= 6.0;
        if (h >= 1.0) h -= 1.0;
    }
    const double s = mx > 0.0 ? delta / mx : 0.0;
    return {h, s, mx};
}

inline double luminance(Rgb p) { return 0.299 * p.r + 0.587 * p.g + 0.114 * p.b; }

/// Mean, population standard deviation and skewness. Constant input gives (c, 0, 0) exactly.
inline std::array<double, 3> three_moments(const std::vector<double>& values) {
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    if (*mn == *mx) return {*mn, 0.0, 0.0};
    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double m2 = 0.0, m3 = 0.0;
    for (double v : values) {
        const double d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    const double sd = std::sqrt(m2);
    const double skew = sd > 0.0 ? m3 / (sd * sd * sd) : 0.0;
    return {mean, sd, skew};
}

/// (mean, std, skew) for H, S, V in that order.
inline std::array<double, kColorFeatures> color_moments(const Block& block) {
    std::array<std::vector<double>, 3> channels;
    for (auto& c : channels) c.reserve(block.pixel_count());
    for (const auto& p : block.pixels()) {
        const auto hsv = rgb_to_hsv(p);
        for (std::size_t c = 0; c < 3; ++c) channels[c].push_back(hsv[c]);
    }
    std::array<double, kColorFeatures> out{};
    for (std::size_t c = 0; c < 3; ++c) {
        const auto m = three_moments(channels[c]);
        std::copy(m.begin(), m.end(), out.begin() + static_cast<std::ptrdiff_t>(3 * c));
    }
    return out;
}

inline std::vector<double> luminance_plane(const Block& block) {
    std::vector<double> lum;
    lum.reserve(block.pixel_count());
    for (const auto& p : block.pixels()) lum.push_back(luminance(p));
    return lum;
}

/// Sobel gradient directions of interior pixels binned into 8 sectors of 45 degrees,
/// normalized to sum 1 (all zero when no pixel reaches the magnitude threshold).
inline std::array<double, kEdgeBins> edge_direction_histogram(const Block& block, const EdgeConfig& config = {}) {
    const std::size_t w = block.width(), h = block.height();
    if (w < 3 || h < 3) throw std::invalid_argument("edge_direction_histogram: block smaller than 3x3");
    const auto lum = luminance_plane(block);
    auto L = [&](std::size_t x, std::size_t y) { return lum[y * w + x]; };
    // Largest |gx| is 4*255 (one column at 255, the other at 0); both axes together give sqrt(2) of that.
    const double max_magnitude = std::sqrt(2.0) * 4.0 * 255.0;
    const double threshold = config.threshold_fraction * max_magnitude;

    std::array<double, kEdgeBins> hist{};
    std::size_t votes = 0;
    for (std::size_t y = 1; y + 1 < h; ++y) {
        for (std::size_t x = 1; x + 1 < w; ++x) {
            const double gx = (L(x + 1, y - 1) + 2.0 * L(x + 1, y) + L(x + 1, y + 1)) -
                              (L(x - 1, y - 1) + 2.0 * L(x - 1, y) + L(x - 1, y + 1));
            const double gy = (L(x - 1, y + 1) + 2.0 * L(x, y + 1) + L(x + 1, y + 1)) -
                              (L(x - 1, y - 1) + 2.0 * L(x, y - 1) + L(x + 1, y - 1));
            const double magnitude = std::hypot(gx, gy);
            if (magnitude <= threshold || magnitude == 0.0) continue;
            double degrees = std::atan2(gy, gx) * 180.0 / std::numbers::pi;
            if (degrees < 0.0) degrees += 360.0;
            auto bin = static_cast<std::size_t>(degrees / 45.0);
            if (bin >= kEdgeBins) bin = 0;
            hist[bin] += 1.0;
            ++votes;
        }
    }
    if (votes) {
        for (auto& v : hist) v /= static_cast<double>(votes);
    }
    return hist;
}

/// Shannon entropy (natural log) of the squared-coefficient distribution; 0 for an all-zero band.
inline double subband_entropy(const std::vector<double>& coefficients) {
    double energy = 0.0;
    for (double c : coefficients) energy += c * c;
    if (energy == 0.0) return 0.0;
    double h = 0.0;
    for (double c : coefficients) {
        const double p = c * c / energy;
        if (p > 0.0) h -= p * std::log(p);
    }
    return std::max(0.0, h);
}

struct HaarLevel {
    std::size_t width = 0, height = 0;
    std::vector<double> ll, lh, hl, hh;
};

/// One orthonormal 2-D Haar step; odd dimensions are truncated to even first.
inline HaarLevel haar_step(const std::vector<double>& plane, std::size_t w, std::size_t h) {
    HaarLevel out;
    out.width = w / 2;
    out.height = h / 2;
    const std::size_t n = out.width * out.height;
    out.ll.reserve(n);
    out.lh.reserve(n);
    out.hl.reserve(n);
    out.hh.reserve(n);
    for (std::size_t y = 0; y < out.height; ++y) {
        for (std::size_t x = 0; x < out.width; ++x) {
            const double a = plane[(2 * y) * w + 2 * x];
            const double b = plane[(2 * y) * w + 2 * x + 1];
            const double c = plane[(2 * y + 1) * w + 2 * x];
            const double d = plane[(2 * y + 1) * w + 2 * x + 1];
            out.ll.push_back((a + b + c + d) / 2.0);
            out.lh.push_back((a - b + c - d) / 2.0);  // horizontal variation
            out.hl.push_back((a + b - c - d) / 2.0);  // vertical variation
            out.hh.push_back((a - b - c + d) / 2.0);
        }
    }
    return out;
}

/// Entropies of LH, HL, HH at level 1 then level 2 of a Haar decomposition of luminance.
inline std::array<double, kTextureFeatures> wavelet_entropy(const Block& block) {
    if (block.width() < 4 || block.height() < 4) throw std::invalid_argument("wavelet_entropy: block smaller than 4x4");
    const auto lum = luminance_plane(block);
    const auto level1 = haar_step(lum, block.width(), block.height());
    const auto level2 = haar_step(level1.ll, level1.width, level1.height);
    return {subband_entropy(level1.lh), subband_entropy(level1.hl), subband_entropy(level1.hh),
            subband_entropy(level2.lh), subband_entropy(level2.hl), subband_entropy(level2.hh)};
}

inline std::array<double, kBlockFeatureDim> block_feature(const Block& block, const EdgeConfig& edge = {}) {
    std::array<double, kBlockFeatureDim> out{};
    const auto color = color_moments(block);
    const auto edges = edge_direction_histogram(block, edge);
    const auto texture = wavelet_entropy(block);
    auto it = std::copy(color.begin(), color.end(), out.begin());
    it = std::copy(edges.begin(), edges.end(), it);
    std::copy(texture.begin(), texture.end(), it);
    return out;
}

/// 100 vectors of 23 dimensions (9 color, 8 edge, 6 texture), blocks in row-major order.
inline LocalFeatureSet extract_block_features(const RgbImage& image, std::string image_id = "image",
                                              const EdgeConfig& edge = {}) {
    const auto blocks = partition_blocks(image, 10, 10);
    std::vector<double> data;
    data.reserve(blocks.size() * kBlockFeatureDim);
    for (const auto& b : blocks) {
        const auto f = block_feature(b, edge);
        data.insert(data.end(), f.begin(), f.end());
    }
    return LocalFeatureSet(std::move(image_id), kBlockFeatureDim, std::move(data));
}

/// sRGB (D65, standard gamma) to CIELAB. The white point is the image of RGB white
/// under the conversion matrix, so white maps to (100, 0, 0).
inline std::array<double, 3> rgb_to_lab(Rgb p) {
    auto linear = [](std::uint8_t v) {
        const double c = v / 255.0;
        return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
    };
    const double r = linear(p.r), g = linear(p.g), b = linear(p.b);
    constexpr double m[3][3] = {{0.4124564, 0.3575761, 0.1804375},
                                {0.2126729, 0.7151522, 0.0721750},
                                {0.0193339, 0.1191920, 0.9503041}};
    constexpr double white[3] = {m[0][0] + m[0][1] + m[0][2], m[1][0] + m[1][1] + m[1][2], m[2][0] + m[2][1] + m[2][2]};
    const double xyz[3] = {m[0][0] * r + m[0][1] * g + m[0][2] * b, m[1][0] * r + m[1][1] * g + m[1][2] * b,
                           m[2][0] * r + m[2][1] * g + m[2][2] * b};
    auto f = [](double t) {
        constexpr double e = 216.0 / 24389.0;
        constexpr double k = 24389.0 / 27.0;
        return t > e ? std::cbrt(t) : (k * t + 16.0) / 116.0;
    };
    const double fx = f(xyz[0] / white[0]), fy = f(xyz[1] / white[1]), fz = f(xyz[2] / white[2]);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

/// Mean (L, a, b) per cell of a 4x4 grid, concatenated in raster order.
inline std::vector<double> lab_signature(const RgbImage& image) {
    if (image.width() < 4 || image.height() < 4) throw std::invalid_argument("lab_signature: image smaller than 4x4");
    const auto cells = partition_blocks(image, 4, 4);
    std::vector<double> out;
    out.reserve(kLabSignatureDim);
    for (const auto& cell : cells) {
        double sum[3] = {0.0, 0.0, 0.0};
        for (const auto& p : cell.pixels()) {
            const auto lab = rgb_to_lab(p);
            for (int c = 0; c < 3; ++c) sum[c] += lab[c];
        }
        for (int c = 0; c < 3; ++c) out.push_back(sum[c] / static_cast<double>(cell.pixel_count()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Binary PPM (P6, maxval 255)

inline RgbImage read_ppm(std::istream& in) {
    auto token = [&in]() {
        std::string t;
        for (;;) {
            int c = in.get();
            if (c == EOF) break;
            if (c == '#') {
                while (c != EOF && c != '\n') c = in.get();
                if (!t.empty()) break;
                continue;
            }
            if (std::isspace(c)) {
                if (!t.empty()) break;
                continue;
            }
            t.push_back(static_cast<char>(c));
        }
        return t;
    };
    if (token() != "P6") throw FormatError("not a binary PPM (P6) file");
    const std::string ws = token(), hs = token(), ms = token();
    std::size_t w = 0, h = 0, maxval = 0;
    try {
        w = parse_count(ws, 0);
        h = parse_count(hs, 0);
        maxval = parse_count(ms, 0);
    } catch (const FormatError&) {
        throw FormatError("malformed PPM header");
    }
    if (maxval != 255) throw FormatError("only maxval 255 PPM files are supported");
    if (w == 0 || h == 0) throw FormatError("PPM image has zero size");
    std::vector<Rgb> pixels(w * h);
    std::vector<unsigned char> raw(w * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw FormatError("truncated PPM pixel data");
    for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = {raw[3 * i], raw[3 * i + 1], raw[3 * i + 2]};
    return RgbImage(w, h, std::move(pixels));
}

inline void write_ppm(const RgbImage& image, std::ostream& out) {
    out << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
    for (const auto& p : image.pixels()) {
        const char px[3] = {static_cast<char>(p.r), static_cast<char>(p.g), static_cast<char>(p.b)};
        out.write(px, 3);
    }
}

inline RgbImage load_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    return read_ppm(in);
}

inline void save_ppm(const RgbImage& image, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    write_ppm(image, out);
    if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace lfir
