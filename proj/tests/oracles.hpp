#pragma once

// Test-only reference implementations, written as direct transcriptions of
// the definitions. They stay independent of the library's computation paths.

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "muval/tensor.hpp"
#include "muval/volume.hpp"

namespace oracles {

// Triple-loop matrix product in double.
template <class F>
muval::Tensor<F> matmul(const muval::Tensor<F>& a, const muval::Tensor<F>& b) {
    const int m = a.shape()[0], k = a.shape()[1], p = b.shape()[1];
    muval::Tensor<F> c(muval::Shape{m, p});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < p; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t)
                acc += static_cast<double>(a.at2(i, t)) * static_cast<double>(b.at2(t, j));
            c.at2(i, j) = static_cast<F>(acc);
        }
    return c;
}

// Direct-summation cross-correlation over all seven index positions.
template <class F>
muval::Tensor<F> conv3d(const muval::Tensor<F>& input, const muval::Tensor<F>& kernels,
                        std::array<int, 3> stride, std::array<int, 3> pad) {
    const int ci = input.shape()[0], di = input.shape()[1], hi = input.shape()[2],
              wi = input.shape()[3];
    const int co = kernels.shape()[0], kd = kernels.shape()[2], kh = kernels.shape()[3],
              kw = kernels.shape()[4];
    const int od = (di + 2 * pad[0] - kd) / stride[0] + 1;
    const int oh = (hi + 2 * pad[1] - kh) / stride[1] + 1;
    const int ow = (wi + 2 * pad[2] - kw) / stride[2] + 1;
    muval::Tensor<F> out(muval::Shape{co, od, oh, ow});
    auto in_at = [&](int c, int z, int y, int x) -> double {
        if (z < 0 || z >= di || y < 0 || y >= hi || x < 0 || x >= wi) return 0.0;
        return static_cast<double>(input[((static_cast<std::int64_t>(c) * di + z) * hi + y) * wi + x]);
    };
    for (int c = 0; c < co; ++c)
        for (int z = 0; z < od; ++z)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    double acc = 0.0;
                    for (int ic = 0; ic < ci; ++ic)
                        for (int a = 0; a < kd; ++a)
                            for (int b = 0; b < kh; ++b)
                                for (int e = 0; e < kw; ++e)
                                    acc += in_at(ic, z * stride[0] - pad[0] + a,
                                                 y * stride[1] - pad[1] + b,
                                                 x * stride[2] - pad[2] + e) *
                                           static_cast<double>(
                                               kernels[(((static_cast<std::int64_t>(c) * ci + ic) * kd + a) * kh + b) * kw + e]);
                    out[((static_cast<std::int64_t>(c) * od + z) * oh + y) * ow + x] =
                        static_cast<F>(acc);
                }
    return out;
}

// Nested-loop slice means of a volume, one vector per view.
inline std::array<std::vector<double>, 3> pool_views(const muval::Volume& v) {
    std::vector<double> ft(static_cast<std::size_t>(v.depth()), 0.0);
    std::vector<double> fc(static_cast<std::size_t>(v.height()), 0.0);
    std::vector<double> fs(static_cast<std::size_t>(v.width()), 0.0);
    for (int i = 0; i < v.depth(); ++i)
        for (int j = 0; j < v.height(); ++j)
            for (int k = 0; k < v.width(); ++k) {
                const double x = v.at(i, j, k);
                ft[static_cast<std::size_t>(i)] += x;
                fc[static_cast<std::size_t>(j)] += x;
                fs[static_cast<std::size_t>(k)] += x;
            }
    for (auto& x : ft) x /= static_cast<double>(v.height()) * v.width();
    for (auto& x : fc) x /= static_cast<double>(v.depth()) * v.width();
    for (auto& x : fs) x /= static_cast<double>(v.depth()) * v.height();
    return {ft, fc, fs};
}

// Brute-force AUC: every positive/negative pair, ties count half.
inline double auc_brute(const std::vector<double>& scores, const std::vector<int>& truth) {
    double num = 0.0;
    std::int64_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (truth[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (truth[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) num += 1.0;
            else if (scores[i] == scores[j]) num += 0.5;
        }
    }
    return num / static_cast<double>(pairs);
}

}  // namespace oracles
