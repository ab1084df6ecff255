#pragma once

#include <cstdint>
#include <string>

#include "muval/errors.hpp"
#include "muval/tensor.hpp"
#include "muval/volume.hpp"

namespace muval {

enum class AttentionMode { MultiView, SingleView, Off };

inline const char* to_string(AttentionMode m) {
    switch (m) {
        case AttentionMode::MultiView: return "multi-view";
        case AttentionMode::SingleView: return "single-view";
        case AttentionMode::Off: return "off";
    }
    return "?";
}

// Mean slice profiles of a volume along the three anatomical views:
// f_t(i) averages the i-th transverse slice, f_c(j) the j-th coronal one,
// f_s(k) the k-th sagittal one.
template <class F = float>
struct ViewFeatures {
    Tensor<F> f_t;  // length d
    Tensor<F> f_c;  // length h
    Tensor<F> f_s;  // length w
};

template <class F = float>
ViewFeatures<F> pool_views(const Volume& v) {
    const int d = v.depth(), h = v.height(), w = v.width();
    std::vector<double> at(static_cast<std::size_t>(d), 0.0);
    std::vector<double> ac(static_cast<std::size_t>(h), 0.0);
    std::vector<double> as(static_cast<std::size_t>(w), 0.0);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < h; ++j)
            for (int k = 0; k < w; ++k) {
                const double x = static_cast<double>(v.at(i, j, k));
                at[static_cast<std::size_t>(i)] += x;
                ac[static_cast<std::size_t>(j)] += x;
                as[static_cast<std::size_t>(k)] += x;
            }
    ViewFeatures<F> out{Tensor<F>(Shape{d}), Tensor<F>(Shape{h}), Tensor<F>(Shape{w})};
    for (int i = 0; i < d; ++i) out.f_t[i] = static_cast<F>(at[static_cast<std::size_t>(i)] / (static_cast<double>(h) * w));
    for (int j = 0; j < h; ++j) out.f_c[j] = static_cast<F>(ac[static_cast<std::size_t>(j)] / (static_cast<double>(d) * w));
    for (int k = 0; k < w; ++k) out.f_s[k] = static_cast<F>(as[static_cast<std::size_t>(k)] / (static_cast<double>(d) * h));
    return out;
}

// Bottleneck weight matrices for the three views. Eq-literal: two bias-free
// dense maps per view, reduction ratio r, which must divide every attended
// extent.
template <class F = float>
struct AttentionParams {
    int d = 0, h = 0, w = 0, r = 1;
    Tensor<F> w_t1, w_t2;  // (d/r x d), (d x d/r)
    Tensor<F> w_c1, w_c2;  // (h/r x h), (h x h/r)
    Tensor<F> w_s1, w_s2;  // (w/r x w), (w x w/r)

    AttentionParams() = default;
    AttentionParams(int d_, int h_, int w_, int r_) : d(d_), h(h_), w(w_), r(r_) {
        if (r <= 0) throw ConfigError("reduction ratio must be positive");
        for (int extent : {d, h, w})
            if (extent % r != 0)
                throw ConfigError("reduction ratio " + std::to_string(r) +
                                  " must divide every attended extent, got " + std::to_string(extent));
        w_t1 = Tensor<F>(Shape{d / r, d});
        w_t2 = Tensor<F>(Shape{d, d / r});
        w_c1 = Tensor<F>(Shape{h / r, h});
        w_c2 = Tensor<F>(Shape{h, h / r});
        w_s1 = Tensor<F>(Shape{w / r, w});
        w_s2 = Tensor<F>(Shape{w, w / r});
    }
};

// Number of learnable scalars in the attention stage.
inline std::int64_t attention_param_count(int d, int h, int w, int r, AttentionMode mode) {
    switch (mode) {
        case AttentionMode::MultiView:
            return 2 * (static_cast<std::int64_t>(d) * d + static_cast<std::int64_t>(h) * h +
                        static_cast<std::int64_t>(w) * w) /
                   r;
        case AttentionMode::SingleView:
            return 2 * static_cast<std::int64_t>(d) * d / r;
        case AttentionMode::Off:
            return 0;
    }
    return 0;
}

// alpha = sigmoid(W2 * relu(W1 * f)) for one view.
template <class F>
Tensor<F> view_attention(const Tensor<F>& f, const Tensor<F>& w1, const Tensor<F>& w2) {
    if (f.rank() != 1) throw DimensionError("view_attention expects a rank-1 feature vector");
    const int m = f.shape()[0];
    if (w1.rank() != 2 || w2.rank() != 2 || w1.shape()[1] != m || w2.shape()[0] != m ||
        w1.shape()[0] != w2.shape()[1])
        throw DimensionError("view_attention weight shapes inconsistent with feature length " +
                             std::to_string(m));
    const int hidden = w1.shape()[0];
    Tensor<F> hvec(Shape{hidden});
    for (int i = 0; i < hidden; ++i) {
        double acc = 0.0;
        for (int j = 0; j < m; ++j)
            acc += static_cast<double>(w1.at2(i, j)) * static_cast<double>(f[j]);
        hvec[i] = acc > 0.0 ? static_cast<F>(acc) : F(0);
    }
    Tensor<F> alpha(Shape{m});
    for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int j = 0; j < hidden; ++j)
            acc += static_cast<double>(w2.at2(i, j)) * static_cast<double>(hvec[j]);
        alpha[i] = ops::sigmoid(static_cast<F>(acc));
    }
    return alpha;
}

template <class F = float>
struct AttentionWeights {
    Tensor<F> alpha_t, alpha_c, alpha_s;
};

// Reweighted volume: each voxel scaled by the mean of its three slice weights.
template <class F>
Volume fuse_reweight(const Volume& v, const AttentionWeights<F>& a) {
    if (a.alpha_t.numel() != v.depth() || a.alpha_c.numel() != v.height() ||
        a.alpha_s.numel() != v.width())
        throw DimensionError("attention weight lengths do not match volume extents");
    Volume out(v.depth(), v.height(), v.width());
    for (int i = 0; i < v.depth(); ++i)
        for (int j = 0; j < v.height(); ++j)
            for (int k = 0; k < v.width(); ++k) {
                const double wgt = (static_cast<double>(a.alpha_t[i]) +
                                    static_cast<double>(a.alpha_c[j]) +
                                    static_cast<double>(a.alpha_s[k])) /
                                   3.0;
                out.at(i, j, k) = static_cast<float>(wgt * static_cast<double>(v.at(i, j, k)));
            }
    return out;
}

// Full attention stage on one volume: slice pooling, per-view bottleneck
// gates, fused reweighting. Single-view keeps only the transverse gate;
// off passes the volume through unchanged.
template <class F>
Volume muval_forward(const Volume& v, const AttentionParams<F>& p, AttentionMode mode) {
    if (mode == AttentionMode::Off) return v;
    if (v.depth() != p.d || v.height() != p.h || v.width() != p.w)
        throw DimensionError("attention parameters were built for a different volume shape");
    const ViewFeatures<F> f = pool_views<F>(v);
    const Tensor<F> alpha_t = view_attention(f.f_t, p.w_t1, p.w_t2);
    if (mode == AttentionMode::SingleView) {
        Volume out(v.depth(), v.height(), v.width());
        for (int i = 0; i < v.depth(); ++i)
            for (int j = 0; j < v.height(); ++j)
                for (int k = 0; k < v.width(); ++k)
                    out.at(i, j, k) = static_cast<float>(static_cast<double>(alpha_t[i]) *
                                                         static_cast<double>(v.at(i, j, k)));
        return out;
    }
    AttentionWeights<F> a{alpha_t, view_attention(f.f_c, p.w_c1, p.w_c2),
                          view_attention(f.f_s, p.w_s1, p.w_s2)};
    return fuse_reweight(v, a);
}

}  // namespace muval
