#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "muval/rng.hpp"
#include "muval/tensor.hpp"
#include "oracles.hpp"

using muval::Shape;
using muval::Tensor;

namespace {

Tensor<float> random_tensor(Shape shape, muval::Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<float> t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

}  // namespace

TEST_CASE("matmul identity leaves the operand unchanged") {
    Tensor<float> eye(Shape{2, 2}, {1, 0, 0, 1});
    Tensor<float> a(Shape{2, 2}, {3.5f, -2, 7, 0.25f});
    auto c = muval::ops::matmul(eye, a);
    for (int i = 0; i < 4; ++i) CHECK(c[i] == a[i]);
}

TEST_CASE("matmul matches the triple-loop oracle") {
    Tensor<float> a(Shape{2, 2}, {1, 2, 3, 4});
    Tensor<float> b(Shape{2, 2}, {5, 6, 7, 8});
    auto c = muval::ops::matmul(a, b);
    CHECK(c.at2(0, 0) == 19.0f);
    CHECK(c.at2(0, 1) == 22.0f);
    CHECK(c.at2(1, 0) == 43.0f);
    CHECK(c.at2(1, 1) == 50.0f);

    muval::Rng rng(42);
    for (int trial = 0; trial < 5; ++trial) {
        auto x = random_tensor(Shape{5, 7}, rng);
        auto y = random_tensor(Shape{7, 3}, rng);
        auto got = muval::ops::matmul(x, y);
        auto want = oracles::matmul(x, y);
        for (std::int64_t i = 0; i < got.numel(); ++i)
            CHECK(std::abs(got[i] - want[i]) < 1e-6f);
    }
}

TEST_CASE("matmul by zero annihilates") {
    muval::Rng rng(7);
    auto a = random_tensor(Shape{3, 4}, rng);
    Tensor<float> zero(Shape{4, 2});
    auto c = muval::ops::matmul(a, zero);
    for (std::int64_t i = 0; i < c.numel(); ++i) CHECK(c[i] == 0.0f);
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
    Tensor<float> a(Shape{2, 3});
    Tensor<float> b(Shape{4, 2});
    CHECK_THROWS_AS(muval::ops::matmul(a, b), muval::DimensionError);
}

TEST_CASE("matmul is associative to single-precision tolerance") {
    muval::Rng rng(99);
    for (int trial = 0; trial < 10; ++trial) {
        auto a = random_tensor(Shape{4, 5}, rng);
        auto b = random_tensor(Shape{5, 6}, rng);
        auto c = random_tensor(Shape{6, 3}, rng);
        auto left = muval::ops::matmul(muval::ops::matmul(a, b), c);
        auto right = muval::ops::matmul(a, muval::ops::matmul(b, c));
        for (std::int64_t i = 0; i < left.numel(); ++i)
            CHECK(std::abs(left[i] - right[i]) < 1e-5f);
    }
}

TEST_CASE("conv3d pointwise kernel scales the input") {
    Tensor<float> input = Tensor<float>::full(Shape{1, 3, 3, 3}, 1.0f);
    Tensor<float> kernel = Tensor<float>::full(Shape{1, 1, 1, 1, 1}, 2.0f);
    auto out = muval::ops::conv3d(input, kernel, {1, 1, 1}, {0, 0, 0});
    REQUIRE(out.shape() == Shape{1, 3, 3, 3});
    for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 2.0f);
}

TEST_CASE("conv3d full window sums the input") {
    Tensor<float> input = Tensor<float>::full(Shape{1, 3, 3, 3}, 1.0f);
    Tensor<float> kernel = Tensor<float>::full(Shape{1, 1, 3, 3, 3}, 1.0f);
    auto out = muval::ops::conv3d(input, kernel, {1, 1, 1}, {0, 0, 0});
    REQUIRE(out.shape() == Shape{1, 1, 1, 1});
    CHECK(out[0] == 27.0f);
}

TEST_CASE("conv3d matches the nested-loop oracle") {
    muval::Rng rng(2024);
    auto input = random_tensor(Shape{2, 4, 4, 4}, rng);
    auto kernel = random_tensor(Shape{3, 2, 2, 2, 2}, rng);
    for (auto cfg : {std::pair{std::array{1, 1, 1}, std::array{0, 0, 0}},
                     std::pair{std::array{2, 1, 2}, std::array{1, 0, 1}},
                     std::pair{std::array{1, 2, 1}, std::array{1, 1, 0}}}) {
        auto got = muval::ops::conv3d(input, kernel, cfg.first, cfg.second);
        auto want = oracles::conv3d(input, kernel, cfg.first, cfg.second);
        REQUIRE(got.shape() == want.shape());
        for (std::int64_t i = 0; i < got.numel(); ++i)
            CHECK(std::abs(got[i] - want[i]) < 1e-6f);
    }
}

TEST_CASE("conv3d with a unit 1x1x1 kernel is the identity") {
    muval::Rng rng(5);
    auto input = random_tensor(Shape{1, 3, 5, 4}, rng);
    Tensor<float> kernel = Tensor<float>::full(Shape{1, 1, 1, 1, 1}, 1.0f);
    auto out = muval::ops::conv3d(input, kernel, {1, 1, 1}, {0, 0, 0});
    for (std::int64_t i = 0; i < input.numel(); ++i) CHECK(out[i] == input[i]);
}

TEST_CASE("conv3d rejects output extent underflow") {
    Tensor<float> input(Shape{1, 2, 2, 2});
    Tensor<float> kernel(Shape{1, 1, 3, 3, 3});
    CHECK_THROWS_AS(muval::ops::conv3d(input, kernel, {1, 1, 1}, {0, 0, 0}),
                    muval::DimensionError);
}

TEST_CASE("public ops reject non-finite results") {
    Tensor<float> input = Tensor<float>::full(Shape{1, 2, 2, 2}, 1.0f);
    input[0] = std::numeric_limits<float>::quiet_NaN();
    Tensor<float> kernel = Tensor<float>::full(Shape{1, 1, 2, 2, 2}, 1.0f);
    CHECK_THROWS_AS(muval::ops::conv3d(input, kernel, {1, 1, 1}, {0, 0, 0}), muval::NumericError);
}

TEST_CASE("sigmoid stays inside the open unit interval") {
    CHECK(muval::ops::sigmoid(0.0f) == 0.5f);
    CHECK(muval::ops::sigmoid(1000.0f) < 1.0f);
    CHECK(muval::ops::sigmoid(1000.0f) > 0.99f);
    CHECK(muval::ops::sigmoid(-1000.0f) > 0.0f);
    CHECK(muval::ops::sigmoid(-1000.0f) < 0.01f);
    CHECK(muval::ops::sigmoid(2.0) == Catch::Approx(0.8807970779778823).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and shift invariance holds") {
    Tensor<float> z(Shape{2, 2}, {1.5f, -0.5f, 3.0f, 3.0f});
    auto p = muval::ops::softmax_rows(z);
    for (int i = 0; i < 2; ++i)
        CHECK(std::abs(p.at2(i, 0) + p.at2(i, 1) - 1.0f) < 1e-6f);
    Tensor<float> shifted(Shape{2, 2}, {1.5f + 7, -0.5f + 7, 3.0f + 7, 3.0f + 7});
    auto q = muval::ops::softmax_rows(shifted);
    for (std::int64_t i = 0; i < p.numel(); ++i) CHECK(std::abs(p[i] - q[i]) < 1e-6f);
}

TEST_CASE("cross entropy on spec'd cases") {
    Tensor<double> uniform(Shape{1, 2}, {0.5, 0.5});
    Tensor<double> y0(Shape{1, 2}, {1.0, 0.0});
    CHECK(muval::ops::cross_entropy(uniform, y0) == Catch::Approx(std::log(2.0)).epsilon(1e-9));

    Tensor<double> p(Shape{1, 2}, {0.75, 0.25});
    CHECK(muval::ops::cross_entropy(p, y0) == Catch::Approx(-std::log(0.75)).epsilon(1e-9));

    Tensor<double> batch(Shape{2, 2}, {0.5, 0.5, 0.75, 0.25});
    Tensor<double> yb(Shape{2, 2}, {1.0, 0.0, 1.0, 0.0});
    const double want = (std::log(2.0) - std::log(0.75)) / 2.0;
    CHECK(muval::ops::cross_entropy(batch, yb) == Catch::Approx(want).epsilon(1e-9));
    CHECK(want == Catch::Approx(0.490415).margin(1e-6));

    Tensor<double> bad(Shape{1, 2}, {0.9, 0.4});
    CHECK_THROWS_AS(muval::ops::cross_entropy(bad, y0), muval::ContractError);
}
