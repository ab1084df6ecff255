#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "muval/rng.hpp"
#include "muval/synthetic.hpp"
#include "muval/volume.hpp"

using muval::BlobSpec;
using muval::Volume;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

// 6-connected component sizes above an intensity threshold.
std::vector<int> component_sizes(const Volume& v, float threshold) {
    const int d = v.depth(), h = v.height(), w = v.width();
    std::vector<char> seen(static_cast<std::size_t>(v.numel()), 0);
    std::vector<int> sizes;
    std::vector<std::array<int, 3>> stack;
    auto flat = [&](int i, int j, int k) {
        return (static_cast<std::size_t>(i) * h + j) * w + k;
    };
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < h; ++j)
            for (int k = 0; k < w; ++k) {
                if (seen[flat(i, j, k)] || v.at(i, j, k) < threshold) continue;
                int size = 0;
                stack.push_back({i, j, k});
                seen[flat(i, j, k)] = 1;
                while (!stack.empty()) {
                    auto [ci, cj, ck] = stack.back();
                    stack.pop_back();
                    ++size;
                    const int di[6] = {1, -1, 0, 0, 0, 0};
                    const int dj[6] = {0, 0, 1, -1, 0, 0};
                    const int dk[6] = {0, 0, 0, 0, 1, -1};
                    for (int n = 0; n < 6; ++n) {
                        const int ni = ci + di[n], nj = cj + dj[n], nk = ck + dk[n];
                        if (ni < 0 || ni >= d || nj < 0 || nj >= h || nk < 0 || nk >= w) continue;
                        if (seen[flat(ni, nj, nk)] || v.at(ni, nj, nk) < threshold) continue;
                        seen[flat(ni, nj, nk)] = 1;
                        stack.push_back({ni, nj, nk});
                    }
                }
                sizes.push_back(size);
            }
    return sizes;
}

double mean_voxel(const Volume& v) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < v.numel(); ++i) acc += v.flat(i);
    return acc / static_cast<double>(v.numel());
}

}  // namespace

TEST_CASE("RVOL round trip is bit exact") {
    muval::Rng rng(314);
    Volume v(4, 5, 6);
    for (std::int64_t i = 0; i < v.numel(); ++i) v.flat(i) = static_cast<float>(rng.uniform(-3, 3));
    const auto path = temp_path("muval_roundtrip.rvol");
    muval::write_volume(v, path);
    Volume back = muval::read_volume(path);
    CHECK(back == v);
    std::remove(path.c_str());
}

TEST_CASE("RVOL degenerate single-voxel volume") {
    Volume v(1, 1, 1);
    const auto path = temp_path("muval_tiny.rvol");
    muval::write_volume(v, path);
    Volume back = muval::read_volume(path);
    REQUIRE(back.numel() == 1);
    CHECK(back.flat(0) == 0.0f);
    std::remove(path.c_str());
}

TEST_CASE("RVOL rejects bad magic and truncation") {
    const auto path = temp_path("muval_bad.rvol");
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOTAVOLUME";
    }
    CHECK_THROWS_AS(muval::read_volume(path), muval::FormatError);

    Volume v(2, 2, 2);
    muval::write_volume(v, path);
    std::filesystem::resize_file(path, 6 + 12 + 3 * 4);  // chop the payload short
    CHECK_THROWS_AS(muval::read_volume(path), muval::FormatError);
    std::remove(path.c_str());
}

TEST_CASE("manifest parses ordered path-label pairs") {
    const auto path = temp_path("muval_manifest.csv");
    {
        std::ofstream os(path);
        os << "a.rvol,1\nb.rvol,0\n";
    }
    auto entries = muval::load_manifest(path);
    REQUIRE(entries.size() == 2);
    CHECK(entries[0].path == "a.rvol");
    CHECK(entries[0].label == 1);
    CHECK(entries[1].path == "b.rvol");
    CHECK(entries[1].label == 0);
    std::remove(path.c_str());
}

TEST_CASE("empty manifest gives an empty list") {
    const auto path = temp_path("muval_manifest_empty.csv");
    { std::ofstream os(path); }
    CHECK(muval::load_manifest(path).empty());
    std::remove(path.c_str());
}

TEST_CASE("manifest rejects labels outside {0,1} with a line number") {
    const auto path = temp_path("muval_manifest_bad.csv");
    {
        std::ofstream os(path);
        os << "c.rvol,2\n";
    }
    CHECK_THROWS_WITH(muval::load_manifest(path), Catch::Matchers::ContainsSubstring("line 1"));
    std::remove(path.c_str());
}

TEST_CASE("synthetic generation is deterministic") {
    BlobSpec spec;
    auto a = muval::generate_synthetic(spec, 16, 32, 32, 1, 77);
    auto b = muval::generate_synthetic(spec, 16, 32, 32, 1, 77);
    CHECK(a.volume == b.volume);
    CHECK(a.label == 1);
    auto c = muval::generate_synthetic(spec, 16, 32, 32, 1, 78);
    CHECK_FALSE(a.volume == c.volume);
}

TEST_CASE("positive phantoms carry more intensity than negatives at equal seed") {
    BlobSpec spec;
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
        auto pos = muval::generate_synthetic(spec, 16, 32, 32, 1, seed);
        auto neg = muval::generate_synthetic(spec, 16, 32, 32, 0, seed);
        CHECK(mean_voxel(pos.volume) > mean_voxel(neg.volume));
    }
}

TEST_CASE("zero blobs and zero background noise give an all-zero volume") {
    BlobSpec spec;
    spec.background_sigma = 0.0;
    spec.count_range_pos = {0, 0};
    auto s = muval::generate_synthetic(spec, 8, 8, 8, 1, 5);
    for (std::int64_t i = 0; i < s.volume.numel(); ++i) CHECK(s.volume.flat(i) == 0.0f);
}

TEST_CASE("generated voxels stay in the unit interval") {
    BlobSpec spec;
    for (int label : {0, 1}) {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            auto s = muval::generate_synthetic(spec, 12, 16, 16, label, seed);
            for (std::int64_t i = 0; i < s.volume.numel(); ++i) {
                REQUIRE(s.volume.flat(i) >= 0.0f);
                REQUIRE(s.volume.flat(i) <= 1.0f);
            }
        }
    }
}

TEST_CASE("phantom generator rejects tiny volumes") {
    BlobSpec spec;
    CHECK_THROWS_AS(muval::generate_synthetic(spec, 4, 32, 32, 1, 0), muval::ConfigError);
}

TEST_CASE("largest bright component is bigger for positives across 100 seeds") {
    BlobSpec spec;
    std::vector<int> largest_pos, largest_neg;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        for (int label : {0, 1}) {
            auto s = muval::generate_synthetic(spec, 16, 32, 32, label, seed);
            auto sizes = component_sizes(s.volume, 0.5f);
            const int largest = sizes.empty() ? 0 : *std::max_element(sizes.begin(), sizes.end());
            (label == 1 ? largest_pos : largest_neg).push_back(largest);
        }
    }
    auto median = [](std::vector<int> v) {
        std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
        return v[v.size() / 2];
    };
    CHECK(median(largest_pos) > median(largest_neg));
}
