#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "muval/errors.hpp"
#include "muval/rng.hpp"
#include "muval/volume.hpp"

namespace muval {

// Blob-phantom generator parameters. Positive (R0) volumes carry one large
// disease-like region; negative volumes carry several small ones. Radii are
// fractions of the smallest volume extent.
struct BlobSpec {
    std::array<int, 2> count_range_pos{1, 1};
    std::array<double, 2> radius_range_pos{0.20, 0.35};
    std::array<int, 2> count_range_neg{3, 6};
    std::array<double, 2> radius_range_neg{0.04, 0.10};
    double background_sigma = 0.05;
    std::array<double, 2> intensity_range{0.7, 1.0};

    void validate() const {
        auto check_radius = [](const std::array<double, 2>& r, const char* which) {
            if (!(r[0] > 0.0) || !(r[1] < 0.5) || r[0] > r[1])
                throw ConfigError(std::string("blob radius range for ") + which +
                                  " must lie in (0, 0.5) with lo <= hi");
        };
        check_radius(radius_range_pos, "positive class");
        check_radius(radius_range_neg, "negative class");
        auto check_count = [](const std::array<int, 2>& c, const char* which) {
            if (c[0] < 0 || c[1] < c[0])
                throw ConfigError(std::string("blob count range for ") + which +
                                  " must satisfy 0 <= lo <= hi");
        };
        check_count(count_range_pos, "positive class");
        check_count(count_range_neg, "negative class");
        if (background_sigma < 0.0) throw ConfigError("background sigma must be non-negative");
        if (intensity_range[0] > intensity_range[1])
            throw ConfigError("intensity range must satisfy lo <= hi");
    }
};

// Deterministic phantom: clipped Gaussian background plus smooth ellipsoidal
// bright regions whose count and size depend on the label. Equal
// (spec, shape, label, seed) inputs give bit-identical samples.
inline Sample generate_synthetic(const BlobSpec& spec, int d, int h, int w, int label,
                                 std::uint64_t seed) {
    spec.validate();
    if (label != 0 && label != 1) throw ContractError("label must be 0 or 1");
    if (d < 8 || h < 8 || w < 8) throw ConfigError("phantom extents must be at least 8");

    const auto& count_range = label == 1 ? spec.count_range_pos : spec.count_range_neg;
    const auto& radius_range = label == 1 ? spec.radius_range_pos : spec.radius_range_neg;
    const double min_extent = static_cast<double>(std::min(d, std::min(h, w)));
    for (int extent : {d, h, w})
        if (static_cast<double>(extent - 1) < 2.0 * radius_range[0] * min_extent)
            throw ConfigError("phantom extents too small to host the minimum blob radius");

    Rng rng(seed_combine(seed, static_cast<std::uint64_t>(label)));
    Volume v(d, h, w);

    if (spec.background_sigma > 0.0) {
        for (std::int64_t i = 0; i < v.numel(); ++i) {
            const double noise = rng.normal(0.0, spec.background_sigma);
            v.flat(i) = static_cast<float>(std::clamp(noise, 0.0, 0.2));
        }
    }

    const int count = static_cast<int>(rng.uniform_int(count_range[0], count_range[1]));
    for (int blob = 0; blob < count; ++blob) {
        // Semi-axes first, then a center that keeps the blob inside.
        std::array<double, 3> semi;
        for (auto& a : semi) a = rng.uniform(radius_range[0], radius_range[1]) * min_extent;
        std::array<double, 3> center;
        const std::array<int, 3> extents{d, h, w};
        for (int axis = 0; axis < 3; ++axis) {
            const double lo = semi[static_cast<std::size_t>(axis)];
            const double hi = static_cast<double>(extents[static_cast<std::size_t>(axis)] - 1) -
                              semi[static_cast<std::size_t>(axis)];
            if (lo > hi) throw ConfigError("phantom extents too small to place a blob");
            center[static_cast<std::size_t>(axis)] = rng.uniform(lo, hi);
        }
        const double intensity = rng.uniform(spec.intensity_range[0], spec.intensity_range[1]);

        // Only touch the blob's bounding box; intensity falls off as 1 - rho^2.
        const int i0 = std::max(0, static_cast<int>(std::floor(center[0] - semi[0])));
        const int i1 = std::min(d - 1, static_cast<int>(std::ceil(center[0] + semi[0])));
        const int j0 = std::max(0, static_cast<int>(std::floor(center[1] - semi[1])));
        const int j1 = std::min(h - 1, static_cast<int>(std::ceil(center[1] + semi[1])));
        const int k0 = std::max(0, static_cast<int>(std::floor(center[2] - semi[2])));
        const int k1 = std::min(w - 1, static_cast<int>(std::ceil(center[2] + semi[2])));
        for (int i = i0; i <= i1; ++i) {
            const double zi = (i - center[0]) / semi[0];
            for (int j = j0; j <= j1; ++j) {
                const double zj = (j - center[1]) / semi[1];
                for (int k = k0; k <= k1; ++k) {
                    const double zk = (k - center[2]) / semi[2];
                    const double rho2 = zi * zi + zj * zj + zk * zk;
                    if (rho2 >= 1.0) continue;
                    const double add = intensity * (1.0 - rho2);
                    v.at(i, j, k) = static_cast<float>(
                        std::clamp(static_cast<double>(v.at(i, j, k)) + add, 0.0, 1.0));
                }
            }
        }
    }
    return Sample{std::move(v), label};
}

}  // namespace muval
