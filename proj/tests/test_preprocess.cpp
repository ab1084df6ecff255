#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "muval/preprocess.hpp"
#include "muval/rng.hpp"
#include "muval/volume.hpp"

using muval::PreprocessConfig;
using muval::Volume;

namespace {

Volume random_volume(int d, int h, int w, muval::Rng& rng, double lo = 0.0, double hi = 1.0) {
    Volume v(d, h, w);
    for (std::int64_t i = 0; i < v.numel(); ++i)
        v.flat(i) = static_cast<float>(rng.uniform(lo, hi));
    return v;
}

PreprocessConfig no_op_augmentation() {
    PreprocessConfig cfg;
    cfg.max_translate_frac = 0.0;
    cfg.max_rotate_deg = 0.0;
    cfg.flip_prob_h = 0.0;
    cfg.flip_prob_w = 0.0;
    cfg.noise_sigma = 0.0;
    return cfg;
}

}  // namespace

TEST_CASE("window_normalize maps the clinical window to the unit interval") {
    Volume v(1, 1, 5, {-1000.0f, -100.0f, 50.0f, 200.0f, 3000.0f});
    Volume out = muval::window_normalize(v, -100.0, 200.0);
    CHECK(out.flat(0) == 0.0f);
    CHECK(out.flat(1) == 0.0f);
    CHECK(out.flat(2) == 0.5f);
    CHECK(out.flat(3) == 1.0f);
    CHECK(out.flat(4) == 1.0f);
}

TEST_CASE("window_normalize endpoints map to 0 and 1") {
    Volume lo(2, 2, 2);
    for (std::int64_t i = 0; i < lo.numel(); ++i) lo.flat(i) = -100.0f;
    Volume lo_out = muval::window_normalize(lo, -100.0, 200.0);
    for (std::int64_t i = 0; i < lo_out.numel(); ++i) CHECK(lo_out.flat(i) == 0.0f);

    Volume hi(2, 2, 2);
    for (std::int64_t i = 0; i < hi.numel(); ++i) hi.flat(i) = 200.0f;
    Volume hi_out = muval::window_normalize(hi, -100.0, 200.0);
    for (std::int64_t i = 0; i < hi_out.numel(); ++i) CHECK(hi_out.flat(i) == 1.0f);
}

TEST_CASE("window_normalize is monotone and bounded") {
    muval::Rng rng(17);
    Volume v = random_volume(3, 4, 5, rng, -500.0, 500.0);
    Volume out = muval::window_normalize(v, -100.0, 200.0);
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        CHECK(out.flat(i) >= 0.0f);
        CHECK(out.flat(i) <= 1.0f);
    }
    for (std::int64_t i = 0; i + 1 < out.numel(); ++i)
        if (v.flat(i) <= v.flat(i + 1)) CHECK(out.flat(i) <= out.flat(i + 1));
}

TEST_CASE("window_normalize rejects non-finite voxels") {
    Volume v(1, 1, 1, {std::numeric_limits<float>::infinity()});
    CHECK_THROWS_AS(muval::window_normalize(v, -100.0, 200.0), muval::NumericError);
}

TEST_CASE("resize to the source shape is the identity") {
    muval::Rng rng(23);
    Volume v = random_volume(4, 6, 5, rng);
    Volume out = muval::resize_trilinear(v, 4, 6, 5);
    CHECK(out == v);
}

TEST_CASE("resize interpolates a one-axis ramp") {
    Volume v(1, 1, 2, {0.0f, 1.0f});
    Volume out = muval::resize_trilinear(v, 1, 1, 3);
    CHECK(out.flat(0) == Catch::Approx(0.0));
    CHECK(out.flat(1) == Catch::Approx(0.5));
    CHECK(out.flat(2) == Catch::Approx(1.0));
}

TEST_CASE("resize preserves constants") {
    Volume v(3, 3, 3);
    for (std::int64_t i = 0; i < v.numel(); ++i) v.flat(i) = 0.73f;
    Volume out = muval::resize_trilinear(v, 5, 2, 7);
    for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out.flat(i) == Catch::Approx(0.73f));
}

TEST_CASE("resize reproduces linear functions of the coordinates exactly") {
    const int sd = 5, sh = 4, sw = 6;
    Volume v(sd, sh, sw);
    auto lin = [](double i, double j, double k) { return 0.1 * i - 0.2 * j + 0.05 * k + 0.3; };
    for (int i = 0; i < sd; ++i)
        for (int j = 0; j < sh; ++j)
            for (int k = 0; k < sw; ++k) v.at(i, j, k) = static_cast<float>(lin(i, j, k));
    for (auto [td, th, tw] : {std::array{9, 7, 11}, std::array{2, 3, 2}, std::array{1, 8, 4}}) {
        Volume out = muval::resize_trilinear(v, td, th, tw);
        for (int i = 0; i < td; ++i)
            for (int j = 0; j < th; ++j)
                for (int k = 0; k < tw; ++k) {
                    const double si = td > 1 ? static_cast<double>(i) * (sd - 1) / (td - 1) : (sd - 1) / 2.0;
                    const double sj = th > 1 ? static_cast<double>(j) * (sh - 1) / (th - 1) : (sh - 1) / 2.0;
                    const double sk = tw > 1 ? static_cast<double>(k) * (sw - 1) / (tw - 1) : (sw - 1) / 2.0;
                    CHECK(out.at(i, j, k) == Catch::Approx(lin(si, sj, sk)).margin(1e-5));
                }
    }
}

TEST_CASE("resize output stays within the input range") {
    muval::Rng rng(29);
    Volume v = random_volume(4, 5, 6, rng, 0.2, 0.9);
    float lo = 1.0f, hi = 0.0f;
    for (std::int64_t i = 0; i < v.numel(); ++i) {
        lo = std::min(lo, v.flat(i));
        hi = std::max(hi, v.flat(i));
    }
    Volume out = muval::resize_trilinear(v, 7, 3, 9);
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        CHECK(out.flat(i) >= lo - 1e-6f);
        CHECK(out.flat(i) <= hi + 1e-6f);
    }
}

TEST_CASE("augment with a zero-magnitude config is the identity") {
    muval::Rng rng(31);
    Volume v = random_volume(6, 8, 8, rng);
    Volume out = muval::augment(v, no_op_augmentation(), 123);
    CHECK(out == v);
}

TEST_CASE("augment is deterministic in the seed") {
    muval::Rng rng(37);
    Volume v = random_volume(6, 10, 10, rng);
    PreprocessConfig cfg;
    Volume a = muval::augment(v, cfg, 99);
    Volume b = muval::augment(v, cfg, 99);
    CHECK(a == b);
    Volume c = muval::augment(v, cfg, 100);
    CHECK_FALSE(a == c);
}

TEST_CASE("forced flips applied twice restore the volume") {
    muval::Rng rng(41);
    Volume v = random_volume(4, 6, 6, rng);
    PreprocessConfig cfg = no_op_augmentation();
    cfg.flip_prob_h = 1.0;
    Volume once = muval::augment(v, cfg, 7);
    CHECK_FALSE(once == v);
    Volume twice = muval::augment(once, cfg, 7);
    CHECK(twice == v);
}

TEST_CASE("augment preserves shape and the unit range") {
    muval::Rng rng(43);
    Volume v = random_volume(6, 12, 12, rng);
    PreprocessConfig cfg;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Volume out = muval::augment(v, cfg, seed);
        REQUIRE(out.depth() == v.depth());
        REQUIRE(out.height() == v.height());
        REQUIRE(out.width() == v.width());
        for (std::int64_t i = 0; i < out.numel(); ++i) {
            REQUIRE(out.flat(i) >= 0.0f);
            REQUIRE(out.flat(i) <= 1.0f);
        }
    }
}
