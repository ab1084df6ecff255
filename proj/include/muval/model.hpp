#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "muval/autodiff.hpp"
#include "muval/backbone.hpp"
#include "muval/errors.hpp"
#include "muval/rng.hpp"
#include "muval/volume.hpp"

namespace muval {

namespace detail {

enum class InitKind { HeConv, SmallDense, One, Zero };

struct ParamPlan {
    std::string name;
    Shape shape;
    InitKind kind;
};

// Single source of truth for parameter names, shapes, and init distributions.
// Walk order is also the RNG draw order and the checkpoint order.
inline std::vector<ParamPlan> param_plan(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<ParamPlan> plan;
    const auto dense = detail::InitKind::SmallDense;
    if (cfg.mode != AttentionMode::Off) {
        plan.push_back({"att.t.w1", Shape{cfg.d / cfg.r, cfg.d}, dense});
        plan.push_back({"att.t.w2", Shape{cfg.d, cfg.d / cfg.r}, dense});
        if (cfg.mode == AttentionMode::MultiView) {
            plan.push_back({"att.c.w1", Shape{cfg.h / cfg.r, cfg.h}, dense});
            plan.push_back({"att.c.w2", Shape{cfg.h, cfg.h / cfg.r}, dense});
            plan.push_back({"att.s.w1", Shape{cfg.w / cfg.r, cfg.w}, dense});
            plan.push_back({"att.s.w2", Shape{cfg.w, cfg.w / cfg.r}, dense});
        }
    }
    const bool bn = cfg.backbone.norm == NormMode::BatchNorm;
    auto add_bn = [&](const std::string& prefix, int c) {
        if (!bn) return;
        plan.push_back({prefix + ".gamma", Shape{c}, InitKind::One});
        plan.push_back({prefix + ".beta", Shape{c}, InitKind::Zero});
    };
    const int stem_out = cfg.backbone.stage_widths[0];
    plan.push_back({"backbone.stem.conv.w",
                    Shape{stem_out, 1, cfg.backbone.stem_kernel[0], cfg.backbone.stem_kernel[1],
                          cfg.backbone.stem_kernel[2]},
                    InitKind::HeConv});
    add_bn("backbone.stem.bn", stem_out);
    int in_ch = stem_out;
    for (std::size_t s = 0; s < cfg.backbone.stage_blocks.size(); ++s) {
        const int width = cfg.backbone.stage_widths[s];
        for (int b = 0; b < cfg.backbone.stage_blocks[s]; ++b) {
            const int stride = (s > 0 && b == 0) ? 2 : 1;
            const std::string pre =
                "backbone.s" + std::to_string(s + 1) + ".b" + std::to_string(b);
            plan.push_back({pre + ".conv1.w", Shape{width, in_ch, 3, 3, 3}, InitKind::HeConv});
            add_bn(pre + ".bn1", width);
            plan.push_back({pre + ".conv2.w", Shape{width, width, 3, 3, 3}, InitKind::HeConv});
            add_bn(pre + ".bn2", width);
            if (in_ch != width || stride != 1) {
                plan.push_back({pre + ".proj.conv.w", Shape{width, in_ch, 1, 1, 1}, InitKind::HeConv});
                add_bn(pre + ".proj.bn", width);
            }
            in_ch = width;
        }
    }
    plan.push_back({"head.w", Shape{2, cfg.backbone.feature_dim()}, dense});
    return plan;
}

}  // namespace detail

// Gaussian initialization: He-style sigma for convolution kernels
// (var = 2 / fan_in), sigma 0.01 for attention and head matrices, norm scales
// 1 and offsets 0. Deterministic in the seed.
template <class F>
ParamSet<F> init_params(const ModelConfig& cfg, std::uint64_t seed) {
    ParamSet<F> params;
    Rng rng(seed);
    for (const auto& p : detail::param_plan(cfg)) {
        Tensor<F> t(p.shape);
        switch (p.kind) {
            case detail::InitKind::HeConv: {
                std::int64_t fan_in = 1;
                for (std::size_t a = 1; a < p.shape.size(); ++a) fan_in *= p.shape[a];
                const double sigma = std::sqrt(2.0 / static_cast<double>(fan_in));
                for (std::int64_t i = 0; i < t.numel(); ++i)
                    t[i] = static_cast<F>(rng.normal(0.0, sigma));
                break;
            }
            case detail::InitKind::SmallDense:
                for (std::int64_t i = 0; i < t.numel(); ++i)
                    t[i] = static_cast<F>(rng.normal(0.0, 0.01));
                break;
            case detail::InitKind::One:
                for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = F(1);
                break;
            case detail::InitKind::Zero:
                break;
        }
        params.add(p.name, std::move(t));
    }
    return params;
}

template <class F>
BufferSet<F> init_buffers(const ModelConfig& cfg) {
    BufferSet<F> buffers;
    for (const auto& p : detail::param_plan(cfg)) {
        const auto pos = p.name.rfind(".gamma");
        if (pos == std::string::npos) continue;
        const std::string prefix = p.name.substr(0, pos);
        buffers.add(prefix + ".running_mean", Tensor<F>(p.shape));
        buffers.add(prefix + ".running_var", Tensor<F>::full(p.shape, F(1)));
    }
    return buffers;
}

// The classifier: attention stage (per mode), residual 3D backbone, 2-way
// softmax head. Forward passes are recorded on a caller-provided tape so the
// same walk serves training (with gradients) and evaluation.
template <class F>
class MuvalModel {
public:
    MuvalModel(ModelConfig cfg, std::uint64_t seed)
        : cfg_(std::move(cfg)), params_(init_params<F>(cfg_, seed)), buffers_(init_buffers<F>(cfg_)) {
        backbone_shape_plan(cfg_.backbone, cfg_.d, cfg_.h, cfg_.w);
    }

    const ModelConfig& config() const { return cfg_; }
    ParamSet<F>& params() { return params_; }
    const ParamSet<F>& params() const { return params_; }
    BufferSet<F>& buffers() { return buffers_; }
    const BufferSet<F>& buffers() const { return buffers_; }

    struct Forward {
        typename Tape<F>::NodeId weighted = -1;  // attention-reweighted batch (N,d,h,w)
        typename Tape<F>::NodeId features = -1;  // (N,n)
        typename Tape<F>::NodeId probs = -1;     // (N,2)
        typename Tape<F>::NodeId loss = -1;      // scalar, only when labels given
    };

    // batch: (N,d,h,w) tensor of voxels; labels optional (one per row).
    Forward forward(Tape<F>& tape, const Tensor<F>& batch, const std::vector<int>* labels,
                    bool train) {
        if (batch.rank() != 4 || batch.shape()[1] != cfg_.d || batch.shape()[2] != cfg_.h ||
            batch.shape()[3] != cfg_.w)
            throw DimensionError("batch shape " + shape_str(batch.shape()) +
                                 " does not match model volume shape");
        const int n = batch.shape()[0];
        auto x = tape.input(batch);

        typename Tape<F>::NodeId weighted = x;
        if (cfg_.mode == AttentionMode::MultiView) {
            auto at = view_gate(tape, x, 0, "att.t");
            auto ac = view_gate(tape, x, 1, "att.c");
            auto as = view_gate(tape, x, 2, "att.s");
            weighted = tape.fuse_multiview(x, at, ac, as);
        } else if (cfg_.mode == AttentionMode::SingleView) {
            auto at = view_gate(tape, x, 0, "att.t");
            weighted = tape.scale_transverse(x, at);
        }

        auto cur = tape.reshape(weighted, Shape{n, 1, cfg_.d, cfg_.h, cfg_.w});

        Forward out;
        out.weighted = weighted;
        out.features = backbone_trunk(tape, cur, train);
        auto head = tape.param("head.w", params_.at("head.w"));
        auto logits = tape.matmul(out.features, head, false, true);
        out.probs = tape.softmax_rows(logits);
        if (labels) {
            if (static_cast<int>(labels->size()) != n)
                throw DimensionError("label count does not match batch size");
            Tensor<F> onehot(Shape{n, 2});
            for (int i = 0; i < n; ++i) {
                const int y = (*labels)[static_cast<std::size_t>(i)];
                if (y != 0 && y != 1) throw ContractError("labels must be 0 or 1");
                onehot.at2(i, y) = F(1);
            }
            out.loss = tape.cross_entropy(out.probs, std::move(onehot));
        }
        return out;
    }

    // Backbone features of one already-reweighted volume (no attention stage).
    Tensor<F> backbone_forward(const Volume& v, bool train = false) {
        Tape<F> tape(false);
        Tensor<F> batch(Shape{1, cfg_.d, cfg_.h, cfg_.w});
        copy_volume(v, batch.data());
        auto cur = tape.reshape(tape.input(std::move(batch)), Shape{1, 1, cfg_.d, cfg_.h, cfg_.w});
        auto f = backbone_trunk(tape, cur, train);
        const Tensor<F>& fv = tape.value(f);
        Tensor<F> out(Shape{cfg_.backbone.feature_dim()});
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = fv[i];
        return out;
    }

    // Packs volumes into the (N,d,h,w) batch tensor this model consumes.
    Tensor<F> make_batch(const std::vector<const Volume*>& volumes) const {
        if (volumes.empty()) throw ContractError("empty batch");
        Tensor<F> batch(Shape{static_cast<int>(volumes.size()), cfg_.d, cfg_.h, cfg_.w});
        const std::int64_t sp = static_cast<std::int64_t>(cfg_.d) * cfg_.h * cfg_.w;
        for (std::size_t i = 0; i < volumes.size(); ++i) {
            const Volume& v = *volumes[i];
            if (v.depth() != cfg_.d || v.height() != cfg_.h || v.width() != cfg_.w)
                throw DimensionError("volume shape does not match model input shape");
            copy_volume(v, batch.data() + static_cast<std::int64_t>(i) * sp);
        }
        return batch;
    }

private:
    static void copy_volume(const Volume& v, F* dst) {
        for (std::int64_t i = 0; i < v.numel(); ++i) dst[i] = static_cast<F>(v.flat(i));
    }

    // Stem, residual stages, and global average pooling on a (N,1,D,H,W) node.
    typename Tape<F>::NodeId backbone_trunk(Tape<F>& tape, typename Tape<F>::NodeId cur,
                                            bool train) {
        cur = conv_bn_relu(tape, cur, "backbone.stem", cfg_.backbone.stem_stride,
                           {cfg_.backbone.stem_kernel[0] / 2, cfg_.backbone.stem_kernel[1] / 2,
                            cfg_.backbone.stem_kernel[2] / 2},
                           train);
        if (cfg_.backbone.stem_pool) cur = tape.maxpool3d(cur, {3, 3, 3}, {2, 2, 2}, {1, 1, 1});
        int in_ch = cfg_.backbone.stage_widths[0];
        for (std::size_t s = 0; s < cfg_.backbone.stage_blocks.size(); ++s) {
            const int width = cfg_.backbone.stage_widths[s];
            for (int b = 0; b < cfg_.backbone.stage_blocks[s]; ++b) {
                const int stride = (s > 0 && b == 0) ? 2 : 1;
                cur = basic_block(tape, cur,
                                  "backbone.s" + std::to_string(s + 1) + ".b" + std::to_string(b),
                                  in_ch, width, stride, train);
                in_ch = width;
            }
        }
        return tape.global_avg_pool(cur);
    }

    typename Tape<F>::NodeId view_gate(Tape<F>& tape, typename Tape<F>::NodeId x, int axis,
                                       const std::string& prefix) {
        auto pooled = tape.pool_axis(x, axis);  // (N, extent)
        auto w1 = tape.param(prefix + ".w1", params_.at(prefix + ".w1"));
        auto w2 = tape.param(prefix + ".w2", params_.at(prefix + ".w2"));
        auto hidden = tape.relu(tape.matmul(pooled, w1, false, true));
        return tape.sigmoid(tape.matmul(hidden, w2, false, true));
    }

    typename Tape<F>::NodeId apply_norm(Tape<F>& tape, typename Tape<F>::NodeId x,
                                        const std::string& prefix, bool train) {
        if (cfg_.backbone.norm != NormMode::BatchNorm) return x;
        auto gamma = tape.param(prefix + ".gamma", params_.at(prefix + ".gamma"));
        auto beta = tape.param(prefix + ".beta", params_.at(prefix + ".beta"));
        BnStats<F> stats{&buffers_.at(prefix + ".running_mean"), &buffers_.at(prefix + ".running_var")};
        return tape.batchnorm3d(x, gamma, beta, stats, train);
    }

    typename Tape<F>::NodeId conv_bn_relu(Tape<F>& tape, typename Tape<F>::NodeId x,
                                          const std::string& prefix, std::array<int, 3> stride,
                                          std::array<int, 3> pad, bool train) {
        auto w = tape.param(prefix + ".conv.w", params_.at(prefix + ".conv.w"));
        auto c = tape.conv3d(x, w, stride, pad);
        return tape.relu(apply_norm(tape, c, prefix + ".bn", train));
    }

    typename Tape<F>::NodeId basic_block(Tape<F>& tape, typename Tape<F>::NodeId x,
                                         const std::string& prefix, int in_ch, int width,
                                         int stride, bool train) {
        auto w1 = tape.param(prefix + ".conv1.w", params_.at(prefix + ".conv1.w"));
        auto c1 = tape.conv3d(x, w1, {stride, stride, stride}, {1, 1, 1});
        auto r1 = tape.relu(apply_norm(tape, c1, prefix + ".bn1", train));
        auto w2 = tape.param(prefix + ".conv2.w", params_.at(prefix + ".conv2.w"));
        auto c2 = tape.conv3d(r1, w2, {1, 1, 1}, {1, 1, 1});
        auto n2 = apply_norm(tape, c2, prefix + ".bn2", train);
        typename Tape<F>::NodeId shortcut = x;
        if (in_ch != width || stride != 1) {
            auto wp = tape.param(prefix + ".proj.conv.w", params_.at(prefix + ".proj.conv.w"));
            auto cp = tape.conv3d(x, wp, {stride, stride, stride}, {0, 0, 0});
            shortcut = apply_norm(tape, cp, prefix + ".proj.bn", train);
        }
        return tape.relu(tape.add(n2, shortcut));
    }

    ModelConfig cfg_;
    ParamSet<F> params_;
    BufferSet<F> buffers_;
};

}  // namespace muval
