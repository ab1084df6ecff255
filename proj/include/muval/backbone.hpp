#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "muval/attention.hpp"
#include "muval/errors.hpp"
#include "muval/tensor.hpp"

namespace muval {

enum class NormMode { BatchNorm, None };

// Residual 3D feature extractor layout: stem conv, optional max-pool, then
// stages of basic blocks (two 3x3x3 convs each, projection shortcut on
// channel/stride changes), global average pooling at the end. Convolutions
// carry no bias; norm layers absorb it.
struct BackboneConfig {
    std::array<int, 3> stem_kernel{3, 3, 3};
    std::array<int, 3> stem_stride{1, 1, 1};
    bool stem_pool = true;  // 3x3x3 stride-2 max pool, pad 1
    std::vector<int> stage_blocks{1, 1, 1, 1};
    std::vector<int> stage_widths{8, 16, 32, 64};
    NormMode norm = NormMode::BatchNorm;

    int feature_dim() const { return stage_widths.back(); }

    void validate() const {
        if (stage_blocks.size() != stage_widths.size() || stage_blocks.empty())
            throw ConfigError("backbone stages and widths must be non-empty and aligned");
        for (int b : stage_blocks)
            if (b < 1) throw ConfigError("each stage needs at least one block");
        for (int c : stage_widths)
            if (c < 1) throw ConfigError("stage widths must be positive");
    }
};

// Reduced configuration for desk-scale training and gradient checking.
inline BackboneConfig desk_backbone() { return BackboneConfig{}; }

// The 34-layer arrangement used for parameter counting and shape checks.
inline BackboneConfig canonical_backbone() {
    BackboneConfig cfg;
    cfg.stem_kernel = {7, 7, 7};
    cfg.stem_stride = {2, 2, 2};
    cfg.stem_pool = true;
    cfg.stage_blocks = {3, 4, 6, 3};
    cfg.stage_widths = {64, 128, 256, 512};
    cfg.norm = NormMode::BatchNorm;
    return cfg;
}

// Whole-classifier configuration: input volume shape, attention stage, and
// backbone. The head is always a bias-free (2 x n) matrix.
struct ModelConfig {
    int d = 16, h = 32, w = 32;
    int r = 8;
    AttentionMode mode = AttentionMode::MultiView;
    BackboneConfig backbone;

    void validate() const {
        if (d < 1 || h < 1 || w < 1) throw ConfigError("volume extents must be positive");
        backbone.validate();
        if (mode != AttentionMode::Off) {
            if (r <= 0) throw ConfigError("reduction ratio must be positive");
            const bool multi = mode == AttentionMode::MultiView;
            for (int extent : (multi ? std::vector<int>{d, h, w} : std::vector<int>{d}))
                if (extent % r != 0)
                    throw ConfigError("reduction ratio " + std::to_string(r) +
                                      " must divide attended extent " + std::to_string(extent));
        }
    }
};

inline ModelConfig desk_model(int d = 16, int h = 32, int w = 32,
                              AttentionMode mode = AttentionMode::MultiView) {
    ModelConfig cfg;
    cfg.d = d;
    cfg.h = h;
    cfg.w = w;
    cfg.mode = mode;
    cfg.backbone = desk_backbone();
    return cfg;
}

inline ModelConfig canonical_model(AttentionMode mode = AttentionMode::MultiView) {
    ModelConfig cfg;
    cfg.d = 64;
    cfg.h = 256;
    cfg.w = 256;
    cfg.mode = mode;
    cfg.backbone = canonical_backbone();
    return cfg;
}

// Spatial extents after each backbone step; throws a ConfigError naming the
// first stage whose output extent underflows.
struct ShapePlan {
    std::array<int, 3> after_stem;
    std::array<int, 3> after_pool;
    std::vector<std::array<int, 3>> after_stage;
};

inline ShapePlan backbone_shape_plan(const BackboneConfig& cfg, int d, int h, int w) {
    cfg.validate();
    ShapePlan plan;
    auto step = [](const std::array<int, 3>& in, const std::array<int, 3>& kernel,
                   const std::array<int, 3>& stride, const std::array<int, 3>& pad,
                   const std::string& where) {
        std::array<int, 3> out;
        for (int a = 0; a < 3; ++a) {
            out[a] = conv_out_extent(in[a], kernel[a], stride[a], pad[a]);
            if (out[a] < 1)
                throw ConfigError("extent underflow at " + where + ": input extent " +
                                  std::to_string(in[a]) + " too small");
        }
        return out;
    };
    const std::array<int, 3> stem_pad{cfg.stem_kernel[0] / 2, cfg.stem_kernel[1] / 2,
                                      cfg.stem_kernel[2] / 2};
    plan.after_stem = step({d, h, w}, cfg.stem_kernel, cfg.stem_stride, stem_pad, "stem");
    plan.after_pool = cfg.stem_pool
                          ? step(plan.after_stem, {3, 3, 3}, {2, 2, 2}, {1, 1, 1}, "stem pool")
                          : plan.after_stem;
    std::array<int, 3> cur = plan.after_pool;
    for (std::size_t s = 0; s < cfg.stage_blocks.size(); ++s) {
        const int stride = s == 0 ? 1 : 2;
        cur = step(cur, {3, 3, 3}, {stride, stride, stride}, {1, 1, 1},
                   "stage s" + std::to_string(s + 1));
        plan.after_stage.push_back(cur);
    }
    return plan;
}

// Exact count of learnable scalars for a full model configuration: stem and
// stage convolutions, norm affine pairs, attention matrices, and the head.
inline std::int64_t count_params(const ModelConfig& cfg) {
    cfg.validate();
    const bool bn = cfg.backbone.norm == NormMode::BatchNorm;
    const auto conv3 = [](std::int64_t cin, std::int64_t cout) { return cout * cin * 27; };
    std::int64_t total = attention_param_count(cfg.d, cfg.h, cfg.w, cfg.r, cfg.mode);

    const std::int64_t stem_k = static_cast<std::int64_t>(cfg.backbone.stem_kernel[0]) *
                                cfg.backbone.stem_kernel[1] * cfg.backbone.stem_kernel[2];
    std::int64_t in_ch = 1;
    const std::int64_t stem_out = cfg.backbone.stage_widths[0];
    total += stem_out * in_ch * stem_k;
    if (bn) total += 2 * stem_out;
    in_ch = stem_out;

    for (std::size_t s = 0; s < cfg.backbone.stage_blocks.size(); ++s) {
        const std::int64_t width = cfg.backbone.stage_widths[s];
        for (int b = 0; b < cfg.backbone.stage_blocks[s]; ++b) {
            const int stride = (s > 0 && b == 0) ? 2 : 1;
            total += conv3(in_ch, width);
            if (bn) total += 2 * width;
            total += conv3(width, width);
            if (bn) total += 2 * width;
            if (in_ch != width || stride != 1) {
                total += in_ch * width;  // 1x1x1 projection
                if (bn) total += 2 * width;
            }
            in_ch = width;
        }
    }
    total += 2 * cfg.backbone.feature_dim();  // head
    return total;
}

// Classification head: p = softmax(W f), W (2 x n), no bias.
template <class F>
Tensor<F> classify(const Tensor<F>& f, const Tensor<F>& head_w) {
    if (f.rank() != 1 || head_w.rank() != 2 || head_w.shape()[0] != 2 ||
        head_w.shape()[1] != f.shape()[0])
        throw DimensionError("classify expects f of length n and a (2 x n) head");
    Tensor<F> logits(Shape{1, 2});
    for (int c = 0; c < 2; ++c) {
        double acc = 0.0;
        for (int j = 0; j < f.shape()[0]; ++j)
            acc += static_cast<double>(head_w.at2(c, j)) * static_cast<double>(f[j]);
        logits.at2(0, c) = static_cast<F>(acc);
    }
    Tensor<F> sm = ops::softmax_rows(logits);
    Tensor<F> p(Shape{2});
    p[0] = sm.at2(0, 0);
    p[1] = sm.at2(0, 1);
    return p;
}

}  // namespace muval
