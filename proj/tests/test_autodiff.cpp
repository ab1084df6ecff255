#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "muval/autodiff.hpp"
#include "muval/rng.hpp"
#include "oracles.hpp"

using muval::GradRecord;
using muval::ParamSet;
using muval::Shape;
using muval::Tape;
using muval::Tensor;

namespace {

Tensor<double> random_tensor(Shape shape, muval::Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// grad_check adapter for a tape-building function of the parameter set.
template <class Builder>
muval::GradCheckResult check_gradients(ParamSet<double>& params, Builder&& build,
                                       muval::GradCheckOptions opt = {}) {
    auto eval = [&](const ParamSet<double>& p, bool with_grad) {
        Tape<double> tape(with_grad);
        auto loss = build(tape, p);
        GradRecord<double> rec;
        if (with_grad) {
            rec = tape.backward(loss);
        } else {
            rec.loss = static_cast<double>(tape.value(loss)[0]);
        }
        return rec;
    };
    return muval::grad_check(eval, params, opt);
}

}  // namespace

TEST_CASE("backward of a plain sum is all ones") {
    Tape<double> tape;
    Tensor<double> x(Shape{2, 3}, {1, -2, 3, 4, 0.5, -1});
    auto xid = tape.param("x", x);
    auto loss = tape.sum(xid);
    auto rec = tape.backward(loss);
    const auto& g = rec.grads.at("x");
    for (std::int64_t i = 0; i < g.numel(); ++i) CHECK(g[i] == 1.0);
    CHECK(rec.loss == Catch::Approx(5.5));
}

TEST_CASE("backward of sum of squares doubles the input") {
    Tape<double> tape;
    Tensor<double> x(Shape{3}, {1, 2, 3});
    auto xid = tape.param("x", x);
    auto loss = tape.sum(tape.mul(xid, xid));
    auto rec = tape.backward(loss);
    const auto& g = rec.grads.at("x");
    CHECK(g[0] == Catch::Approx(2.0));
    CHECK(g[1] == Catch::Approx(4.0));
    CHECK(g[2] == Catch::Approx(6.0));
}

TEST_CASE("backward requires a scalar loss and runs once per recording") {
    Tape<double> tape;
    Tensor<double> x(Shape{2}, {1, 2});
    auto xid = tape.param("x", x);
    auto doubled = tape.add(xid, xid);
    CHECK_THROWS_AS(tape.backward(doubled), muval::ContractError);
    auto loss = tape.sum(doubled);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), muval::ContractError);
}

TEST_CASE("backward is linear in the loss") {
    muval::Rng rng(11);
    Tensor<double> x = random_tensor(Shape{4}, rng);

    auto grads_of = [&](int which) {
        Tape<double> tape;
        auto xid = tape.param("x", x);
        auto l1 = tape.sum(tape.mul(xid, xid));
        auto l2 = tape.sum(xid);
        auto loss = which == 0 ? l1 : (which == 1 ? l2 : tape.add(l1, l2));
        return tape.backward(loss);
    };
    auto g1 = grads_of(0), g2 = grads_of(1), gsum = grads_of(2);
    for (std::int64_t i = 0; i < x.numel(); ++i)
        CHECK(gsum.grads.at("x")[i] ==
              Catch::Approx(g1.grads.at("x")[i] + g2.grads.at("x")[i]).epsilon(1e-12));
}

TEST_CASE("grad_check accepts a quadratic and flags a corrupted gradient") {
    ParamSet<double> params;
    params.add("theta", Tensor<double>(Shape{3}, {1.0, -0.5, 2.0}));

    muval::GradCheckOptions opt;
    opt.epsilon = 1e-4;
    auto res = check_gradients(params, [](Tape<double>& tape, const ParamSet<double>& p) {
        auto t = tape.param("theta", p.at("theta"));
        return tape.sum(tape.mul(t, t));
    }, opt);
    CHECK(res.max_rel_err < 1e-7);

    // Same computation, but the reported gradient is doubled in one entry.
    auto eval = [&](const ParamSet<double>& p, bool with_grad) {
        Tape<double> tape(with_grad);
        auto t = tape.param("theta", p.at("theta"));
        auto loss = tape.sum(tape.mul(t, t));
        GradRecord<double> rec;
        if (with_grad) {
            rec = tape.backward(loss);
            rec.grads.at("theta")[0] *= 2.0;
        } else {
            rec.loss = tape.value(loss)[0];
        }
        return rec;
    };
    auto bad = muval::grad_check(eval, params, opt);
    CHECK(bad.max_rel_err >= 0.3);
}

TEST_CASE("tape matmul gradients match finite differences in all transpose modes") {
    muval::Rng rng(21);
    for (bool ta : {false, true}) {
        for (bool tb : {false, true}) {
            ParamSet<double> params;
            params.add("a", random_tensor(ta ? Shape{4, 3} : Shape{3, 4}, rng));
            params.add("b", random_tensor(tb ? Shape{5, 4} : Shape{4, 5}, rng));
            auto res = check_gradients(params, [ta, tb](Tape<double>& tape, const ParamSet<double>& p) {
                auto a = tape.param("a", p.at("a"));
                auto b = tape.param("b", p.at("b"));
                auto c = tape.matmul(a, b, ta, tb);
                return tape.sum(tape.mul(c, c));
            });
            CHECK(res.max_rel_err < 1e-8);
        }
    }
}

TEST_CASE("tape conv3d gradients match finite differences") {
    muval::Rng rng(31);
    ParamSet<double> params;
    params.add("x", random_tensor(Shape{2, 2, 3, 4, 4}, rng));
    params.add("w", random_tensor(Shape{3, 2, 2, 2, 2}, rng));
    auto res = check_gradients(params, [](Tape<double>& tape, const ParamSet<double>& p) {
        auto x = tape.param("x", p.at("x"));
        auto w = tape.param("w", p.at("w"));
        auto y = tape.conv3d(x, w, {1, 2, 1}, {1, 0, 1});
        return tape.sum(tape.mul(y, y));
    });
    CHECK(res.max_rel_err < 1e-7);
}

TEST_CASE("tape batchnorm gradients match finite differences") {
    muval::Rng rng(41);
    ParamSet<double> params;
    params.add("x", random_tensor(Shape{2, 3, 2, 3, 3}, rng));
    params.add("gamma", random_tensor(Shape{3}, rng, 0.5, 1.5));
    params.add("beta", random_tensor(Shape{3}, rng, -0.5, 0.5));
    // Random targets keep the loss surface well-conditioned in x.
    Tensor<double> target = random_tensor(Shape{2, 3, 2, 3, 3}, rng, -2.0, 2.0);
    auto res = check_gradients(params, [&](Tape<double>& tape, const ParamSet<double>& p) {
        auto x = tape.param("x", p.at("x"));
        auto g = tape.param("gamma", p.at("gamma"));
        auto b = tape.param("beta", p.at("beta"));
        auto y = tape.batchnorm3d(x, g, b, {}, true);
        auto err = tape.add(y, tape.input(target));
        return tape.sum(tape.mul(err, err));
    });
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("batchnorm training mode normalizes each channel") {
    muval::Rng rng(43);
    Tape<double> tape;
    auto x = tape.input(random_tensor(Shape{4, 2, 3, 3, 3}, rng, -3.0, 5.0));
    auto gamma = tape.input(Tensor<double>::full(Shape{2}, 1.0));
    auto beta = tape.input(Tensor<double>(Shape{2}));
    auto y = tape.batchnorm3d(x, gamma, beta, {}, true);
    const auto& out = tape.value(y);
    const std::int64_t sp = 27;
    for (int ch = 0; ch < 2; ++ch) {
        double mean = 0.0, var = 0.0;
        for (int b = 0; b < 4; ++b)
            for (std::int64_t i = 0; i < sp; ++i)
                mean += out[(b * 2 + ch) * sp + i];
        mean /= 4 * sp;
        for (int b = 0; b < 4; ++b)
            for (std::int64_t i = 0; i < sp; ++i) {
                const double d = out[(b * 2 + ch) * sp + i] - mean;
                var += d * d;
            }
        var /= 4 * sp;
        CHECK(std::abs(mean) < 1e-4);
        CHECK(std::abs(var - 1.0) < 1e-3);
    }
}

TEST_CASE("tape pooling and attention ops pass finite-difference checks") {
    muval::Rng rng(53);
    ParamSet<double> params;
    params.add("x", random_tensor(Shape{2, 4, 3, 5}, rng));
    params.add("at", random_tensor(Shape{2, 4}, rng, 0.1, 0.9));
    params.add("ac", random_tensor(Shape{2, 3}, rng, 0.1, 0.9));
    params.add("as", random_tensor(Shape{2, 5}, rng, 0.1, 0.9));

    SECTION("fuse_multiview") {
        auto res = check_gradients(params, [](Tape<double>& tape, const ParamSet<double>& p) {
            auto x = tape.param("x", p.at("x"));
            auto at = tape.param("at", p.at("at"));
            auto ac = tape.param("ac", p.at("ac"));
            auto as = tape.param("as", p.at("as"));
            auto y = tape.fuse_multiview(x, at, ac, as);
            return tape.sum(tape.mul(y, y));
        });
        CHECK(res.max_rel_err < 1e-7);
    }
    SECTION("scale_transverse") {
        auto res = check_gradients(params, [](Tape<double>& tape, const ParamSet<double>& p) {
            auto x = tape.param("x", p.at("x"));
            auto at = tape.param("at", p.at("at"));
            auto y = tape.scale_transverse(x, at);
            return tape.sum(tape.mul(y, y));
        });
        CHECK(res.max_rel_err < 1e-7);
    }
    SECTION("pool_axis all three views") {
        auto res = check_gradients(params, [](Tape<double>& tape, const ParamSet<double>& p) {
            auto x = tape.param("x", p.at("x"));
            auto s = tape.sum(tape.mul(tape.pool_axis(x, 0), tape.pool_axis(x, 0)));
            auto s1 = tape.sum(tape.mul(tape.pool_axis(x, 1), tape.pool_axis(x, 1)));
            auto s2 = tape.sum(tape.mul(tape.pool_axis(x, 2), tape.pool_axis(x, 2)));
            return tape.add(s, tape.add(s1, s2));
        });
        CHECK(res.max_rel_err < 1e-7);
    }
}

TEST_CASE("tape softmax and cross entropy gradients match finite differences") {
    muval::Rng rng(61);
    ParamSet<double> params;
    params.add("z", random_tensor(Shape{3, 2}, rng, -2.0, 2.0));
    Tensor<double> onehot(Shape{3, 2});
    onehot.at2(0, 1) = 1.0;
    onehot.at2(1, 0) = 1.0;
    onehot.at2(2, 1) = 1.0;
    auto res = check_gradients(params, [&](Tape<double>& tape, const ParamSet<double>& p) {
        auto z = tape.param("z", p.at("z"));
        return tape.cross_entropy(tape.softmax_rows(z), onehot);
    });
    CHECK(res.max_rel_err < 1e-8);
}

TEST_CASE("softmax plus cross entropy composite gradient is (p - y) / N") {
    muval::Rng rng(71);
    Tensor<double> z = random_tensor(Shape{4, 2}, rng, -3.0, 3.0);
    Tensor<double> onehot(Shape{4, 2});
    for (int i = 0; i < 4; ++i) onehot.at2(i, i % 2) = 1.0;
    Tape<double> tape;
    auto zid = tape.param("z", z);
    auto probs = tape.softmax_rows(zid);
    auto loss = tape.cross_entropy(probs, onehot);
    const Tensor<double> p = tape.value(probs);
    auto rec = tape.backward(loss);
    const auto& g = rec.grads.at("z");
    for (int i = 0; i < 4; ++i)
        for (int c = 0; c < 2; ++c)
            CHECK(g.at2(i, c) == Catch::Approx((p.at2(i, c) - onehot.at2(i, c)) / 4.0).margin(1e-12));
}

TEST_CASE("maxpool and global average pool gradients match finite differences") {
    muval::Rng rng(81);
    ParamSet<double> params;
    params.add("x", random_tensor(Shape{2, 2, 4, 4, 4}, rng));
    auto res = check_gradients(params, [](Tape<double>& tape, const ParamSet<double>& p) {
        auto x = tape.param("x", p.at("x"));
        auto pooled = tape.maxpool3d(x, {3, 3, 3}, {2, 2, 2}, {1, 1, 1});
        auto f = tape.global_avg_pool(pooled);
        return tape.sum(tape.mul(f, f));
    });
    CHECK(res.max_rel_err < 1e-7);
}

TEST_CASE("relu and sigmoid gradients match finite differences") {
    muval::Rng rng(91);
    ParamSet<double> params;
    params.add("x", random_tensor(Shape{17}, rng, 0.05, 2.0));  // keep away from the relu kink
    auto res = check_gradients(params, [](Tape<double>& tape, const ParamSet<double>& p) {
        auto x = tape.param("x", p.at("x"));
        auto y = tape.sigmoid(tape.relu(x));
        return tape.sum(tape.mul(y, y));
    });
    CHECK(res.max_rel_err < 1e-8);
}
