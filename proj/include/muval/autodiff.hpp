#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "muval/errors.hpp"
#include "muval/rng.hpp"
#include "muval/tensor.hpp"

namespace muval {

// Ordered collection of named learnable tensors. Insertion order is the
// iteration, serialization, and initialization order, so runs are repeatable.
template <class F>
class ParamSet {
public:
    void add(const std::string& name, Tensor<F> value) {
        if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
        index_.emplace(name, names_.size());
        names_.push_back(name);
        values_.push_back(std::move(value));
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<F>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter: " + name);
        return values_[it->second];
    }
    const Tensor<F>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter: " + name);
        return values_[it->second];
    }

    std::size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    Tensor<F>& value(std::size_t i) { return values_[i]; }
    const Tensor<F>& value(std::size_t i) const { return values_[i]; }

    std::int64_t total_scalars() const {
        std::int64_t n = 0;
        for (const auto& v : values_) n += v.numel();
        return n;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor<F>> values_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Per-parameter gradients of one recorded forward pass plus the loss value.
template <class F>
struct GradRecord {
    double loss = 0.0;
    ParamSet<F> grads;
};

// Non-learnable named buffers (batch-norm running statistics).
template <class F>
using BufferSet = ParamSet<F>;

// Running statistics handle for a batch-norm tape op.
template <class F>
struct BnStats {
    Tensor<F>* running_mean = nullptr;
    Tensor<F>* running_var = nullptr;
};

// Reverse-mode tape. Every op appends a node holding the forward value and a
// closure that scatters the node's gradient into its parents. One forward
// recording yields one backward pass; re-run the forward to re-record.
template <class F>
class Tape {
public:
    using NodeId = int;

    explicit Tape(bool recording = true) : recording_(recording) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }

    const Tensor<F>& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    Tensor<F>& grad(NodeId id) { return nodes_[static_cast<std::size_t>(id)].grad; }

    NodeId input(Tensor<F> v) { return push(std::move(v), {}, false, {}); }

    NodeId param(const std::string& name, const Tensor<F>& v) {
        NodeId id = push(v, {}, recording_, {});
        nodes_[static_cast<std::size_t>(id)].param_name = name;
        return id;
    }

    NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false) {
        const Tensor<F>& av = value(a);
        const Tensor<F>& bv = value(b);
        if (av.rank() != 2 || bv.rank() != 2) throw DimensionError("tape matmul expects rank-2 operands");
        const int m = trans_a ? av.shape()[1] : av.shape()[0];
        const int k = trans_a ? av.shape()[0] : av.shape()[1];
        const int kb = trans_b ? bv.shape()[1] : bv.shape()[0];
        const int p = trans_b ? bv.shape()[0] : bv.shape()[1];
        if (k != kb)
            throw DimensionError("tape matmul inner dimensions disagree: " + shape_str(av.shape()) +
                                 (trans_a ? "^T" : "") + " vs " + shape_str(bv.shape()) +
                                 (trans_b ? "^T" : ""));
        Tensor<F> out(Shape{m, p});
        detail::matmul_into(av, bv, trans_a, trans_b, out);
        return push(std::move(out), {a, b}, needs(a) || needs(b), [this, a, b, trans_a, trans_b](NodeId self) {
            const Tensor<F>& go = grad(self);
            if (needs(a)) {
                Tensor<F> ga(value(a).shape());
                if (!trans_a) {
                    detail::matmul_into(go, value(b), false, !trans_b, ga);
                } else {
                    detail::matmul_into(value(b), go, trans_b, true, ga);
                }
                accumulate(a, ga);
            }
            if (needs(b)) {
                Tensor<F> gb(value(b).shape());
                if (!trans_b) {
                    detail::matmul_into(value(a), go, !trans_a, false, gb);
                } else {
                    detail::matmul_into(go, value(a), true, trans_a, gb);
                }
                accumulate(b, gb);
            }
        });
    }

    NodeId add(NodeId a, NodeId b) {
        const Tensor<F>& av = value(a);
        const Tensor<F>& bv = value(b);
        if (!av.same_shape(bv)) throw DimensionError("tape add shape mismatch");
        Tensor<F> out(av.shape());
        for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = av[i] + bv[i];
        return push(std::move(out), {a, b}, needs(a) || needs(b), [this, a, b](NodeId self) {
            const Tensor<F>& go = grad(self);
            if (needs(a)) accumulate(a, go);
            if (needs(b)) accumulate(b, go);
        });
    }

    NodeId mul(NodeId a, NodeId b) {
        const Tensor<F>& av = value(a);
        const Tensor<F>& bv = value(b);
        if (!av.same_shape(bv)) throw DimensionError("tape mul shape mismatch");
        Tensor<F> out(av.shape());
        for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = av[i] * bv[i];
        return push(std::move(out), {a, b}, needs(a) || needs(b), [this, a, b](NodeId self) {
            const Tensor<F>& go = grad(self);
            if (needs(a)) {
                Tensor<F> ga(value(a).shape());
                for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] = go[i] * value(b)[i];
                accumulate(a, ga);
            }
            if (needs(b)) {
                Tensor<F> gb(value(b).shape());
                for (std::int64_t i = 0; i < gb.numel(); ++i) gb[i] = go[i] * value(a)[i];
                accumulate(b, gb);
            }
        });
    }

    NodeId relu(NodeId a) {
        Tensor<F> out = ops::relu(value(a));
        return push(std::move(out), {a}, needs(a), [this, a](NodeId self) {
            if (!needs(a)) return;
            const Tensor<F>& go = grad(self);
            Tensor<F> ga(value(a).shape());
            for (std::int64_t i = 0; i < ga.numel(); ++i)
                ga[i] = value(a)[i] > F(0) ? go[i] : F(0);
            accumulate(a, ga);
        });
    }

    NodeId sigmoid(NodeId a) {
        Tensor<F> out = ops::sigmoid(value(a));
        return push(std::move(out), {a}, needs(a), [this, a](NodeId self) {
            if (!needs(a)) return;
            const Tensor<F>& go = grad(self);
            const Tensor<F>& y = value(self);
            Tensor<F> ga(value(a).shape());
            for (std::int64_t i = 0; i < ga.numel(); ++i)
                ga[i] = static_cast<F>(static_cast<double>(go[i]) * static_cast<double>(y[i]) *
                                       (1.0 - static_cast<double>(y[i])));
            accumulate(a, ga);
        });
    }

    NodeId sum(NodeId a) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < value(a).numel(); ++i) acc += static_cast<double>(value(a)[i]);
        Tensor<F> out(Shape{1});
        out[0] = static_cast<F>(acc);
        return push(std::move(out), {a}, needs(a), [this, a](NodeId self) {
            if (!needs(a)) return;
            const F g = grad(self)[0];
            Tensor<F> ga = Tensor<F>::full(value(a).shape(), g);
            accumulate(a, ga);
        });
    }

    NodeId reshape(NodeId a, Shape shape) {
        if (shape_numel(shape) != value(a).numel())
            throw DimensionError("reshape element count mismatch");
        Tensor<F> out(shape);
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = value(a)[i];
        return push(std::move(out), {a}, needs(a), [this, a](NodeId self) {
            if (!needs(a)) return;
            const Tensor<F>& go = grad(self);
            Tensor<F> ga(value(a).shape());
            for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] = go[i];
            accumulate(a, ga);
        });
    }

    // x (N,Ci,D,H,W), kernels (Co,Ci,kd,kh,kw) -> (N,Co,D',H',W')
    NodeId conv3d(NodeId x, NodeId w, std::array<int, 3> stride, std::array<int, 3> padding) {
        const Tensor<F>& xv = value(x);
        const Tensor<F>& wv = value(w);
        if (xv.rank() != 5) throw DimensionError("tape conv3d expects rank-5 input (N,C,D,H,W)");
        const auto g = detail::conv3d_geometry(xv, wv, stride, padding);
        Tensor<F> out(Shape{g.n, g.co, g.od, g.oh, g.ow});
        const std::int64_t in_sz = static_cast<std::int64_t>(g.ci) * g.di * g.hi * g.wi;
        const std::int64_t out_sz = static_cast<std::int64_t>(g.co) * g.od * g.oh * g.ow;
        std::vector<double> scratch;
        for (int n = 0; n < g.n; ++n)
            detail::conv3d_forward_into(xv.data() + n * in_sz, wv.data(), out.data() + n * out_sz, g,
                                        scratch);
        return push(std::move(out), {x, w}, needs(x) || needs(w), [this, x, w, g, in_sz, out_sz](NodeId self) {
            const Tensor<F>& go = grad(self);
            const Tensor<F>& xv2 = value(x);
            const Tensor<F>& wv2 = value(w);
            if (needs(w)) {
                std::vector<double> kacc(static_cast<std::size_t>(wv2.numel()), 0.0);
                for (int n = 0; n < g.n; ++n)
                    detail::conv3d_backward_kernels(xv2.data() + n * in_sz, go.data() + n * out_sz,
                                                    kacc.data(), g);
                Tensor<F> gw(wv2.shape());
                for (std::int64_t i = 0; i < gw.numel(); ++i)
                    gw[i] = static_cast<F>(kacc[static_cast<std::size_t>(i)]);
                accumulate(w, gw);
            }
            if (needs(x)) {
                Tensor<F> gx(xv2.shape());
                std::vector<double> iacc;
                for (int n = 0; n < g.n; ++n) {
                    iacc.assign(static_cast<std::size_t>(in_sz), 0.0);
                    detail::conv3d_backward_input(wv2.data(), go.data() + n * out_sz, iacc.data(), g);
                    for (std::int64_t i = 0; i < in_sz; ++i)
                        gx[n * in_sz + i] = static_cast<F>(iacc[static_cast<std::size_t>(i)]);
                }
                accumulate(x, gx);
            }
        });
    }

    // Batch normalization over (N,D,H,W) per channel; x (N,C,D,H,W).
    // Training mode uses batch statistics (biased variance) and pushes the
    // running statistics forward; eval mode reads the running statistics.
    NodeId batchnorm3d(NodeId x, NodeId gamma, NodeId beta, BnStats<F> stats, bool train,
                       double eps = 1e-5, double momentum = 0.1) {
        const Tensor<F>& xv = value(x);
        if (xv.rank() != 5) throw DimensionError("batchnorm3d expects rank-5 input");
        const int n = xv.shape()[0], c = xv.shape()[1];
        const std::int64_t sp = static_cast<std::int64_t>(xv.shape()[2]) * xv.shape()[3] * xv.shape()[4];
        const Tensor<F>& gv = value(gamma);
        const Tensor<F>& bv = value(beta);
        if (gv.numel() != c || bv.numel() != c) throw DimensionError("batchnorm3d affine size mismatch");
        const std::int64_t m = static_cast<std::int64_t>(n) * sp;

        std::vector<double> mean(static_cast<std::size_t>(c), 0.0), var(static_cast<std::size_t>(c), 0.0);
        if (train) {
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int b = 0; b < n; ++b) {
                    const F* p = xv.data() + (static_cast<std::int64_t>(b) * c + ch) * sp;
                    for (std::int64_t i = 0; i < sp; ++i) acc += static_cast<double>(p[i]);
                }
                mean[static_cast<std::size_t>(ch)] = acc / static_cast<double>(m);
            }
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                const double mu = mean[static_cast<std::size_t>(ch)];
                for (int b = 0; b < n; ++b) {
                    const F* p = xv.data() + (static_cast<std::int64_t>(b) * c + ch) * sp;
                    for (std::int64_t i = 0; i < sp; ++i) {
                        const double d = static_cast<double>(p[i]) - mu;
                        acc += d * d;
                    }
                }
                var[static_cast<std::size_t>(ch)] = acc / static_cast<double>(m);
            }
            if (stats.running_mean && stats.running_var) {
                const double unbias = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
                for (int ch = 0; ch < c; ++ch) {
                    auto& rm = (*stats.running_mean)[ch];
                    auto& rv = (*stats.running_var)[ch];
                    rm = static_cast<F>((1.0 - momentum) * static_cast<double>(rm) +
                                        momentum * mean[static_cast<std::size_t>(ch)]);
                    rv = static_cast<F>((1.0 - momentum) * static_cast<double>(rv) +
                                        momentum * var[static_cast<std::size_t>(ch)] * unbias);
                }
            }
        } else {
            if (!stats.running_mean || !stats.running_var)
                throw ContractError("batchnorm3d eval mode requires running statistics");
            for (int ch = 0; ch < c; ++ch) {
                mean[static_cast<std::size_t>(ch)] = static_cast<double>((*stats.running_mean)[ch]);
                var[static_cast<std::size_t>(ch)] = static_cast<double>((*stats.running_var)[ch]);
            }
        }

        std::vector<double> invstd(static_cast<std::size_t>(c));
        for (int ch = 0; ch < c; ++ch)
            invstd[static_cast<std::size_t>(ch)] = 1.0 / std::sqrt(var[static_cast<std::size_t>(ch)] + eps);

        Tensor<F> xhat(xv.shape());
        Tensor<F> out(xv.shape());
        for (int b = 0; b < n; ++b) {
            for (int ch = 0; ch < c; ++ch) {
                const F* p = xv.data() + (static_cast<std::int64_t>(b) * c + ch) * sp;
                F* ph = xhat.data() + (static_cast<std::int64_t>(b) * c + ch) * sp;
                F* po = out.data() + (static_cast<std::int64_t>(b) * c + ch) * sp;
                const double mu = mean[static_cast<std::size_t>(ch)];
                const double is = invstd[static_cast<std::size_t>(ch)];
                const double ga = static_cast<double>(gv[ch]);
                const double be = static_cast<double>(bv[ch]);
                for (std::int64_t i = 0; i < sp; ++i) {
                    const double xh = (static_cast<double>(p[i]) - mu) * is;
                    ph[i] = static_cast<F>(xh);
                    po[i] = static_cast<F>(ga * xh + be);
                }
            }
        }

        auto xhat_holder = std::make_shared<Tensor<F>>(std::move(xhat));
        return push(std::move(out), {x, gamma, beta}, needs(x) || needs(gamma) || needs(beta),
                    [this, x, gamma, beta, xhat_holder, invstd, train, n, c, sp, m](NodeId self) {
                        const Tensor<F>& go = grad(self);
                        const Tensor<F>& xh = *xhat_holder;
                        const Tensor<F>& gv2 = value(gamma);
                        std::vector<double> sum_go(static_cast<std::size_t>(c), 0.0);
                        std::vector<double> sum_goxh(static_cast<std::size_t>(c), 0.0);
                        for (int b = 0; b < n; ++b) {
                            for (int ch = 0; ch < c; ++ch) {
                                const std::int64_t base = (static_cast<std::int64_t>(b) * c + ch) * sp;
                                double a0 = 0.0, a1 = 0.0;
                                for (std::int64_t i = 0; i < sp; ++i) {
                                    const double g = static_cast<double>(go[base + i]);
                                    a0 += g;
                                    a1 += g * static_cast<double>(xh[base + i]);
                                }
                                sum_go[static_cast<std::size_t>(ch)] += a0;
                                sum_goxh[static_cast<std::size_t>(ch)] += a1;
                            }
                        }
                        if (needs(gamma)) {
                            Tensor<F> gg(Shape{c});
                            for (int ch = 0; ch < c; ++ch)
                                gg[ch] = static_cast<F>(sum_goxh[static_cast<std::size_t>(ch)]);
                            accumulate(gamma, gg);
                        }
                        if (needs(beta)) {
                            Tensor<F> gb(Shape{c});
                            for (int ch = 0; ch < c; ++ch)
                                gb[ch] = static_cast<F>(sum_go[static_cast<std::size_t>(ch)]);
                            accumulate(beta, gb);
                        }
                        if (needs(x)) {
                            Tensor<F> gx(xh.shape());
                            for (int b = 0; b < n; ++b) {
                                for (int ch = 0; ch < c; ++ch) {
                                    const std::int64_t base = (static_cast<std::int64_t>(b) * c + ch) * sp;
                                    const double ga = static_cast<double>(gv2[ch]);
                                    const double is = invstd[static_cast<std::size_t>(ch)];
                                    if (train) {
                                        const double mg = sum_go[static_cast<std::size_t>(ch)] / static_cast<double>(m);
                                        const double mgx = sum_goxh[static_cast<std::size_t>(ch)] / static_cast<double>(m);
                                        for (std::int64_t i = 0; i < sp; ++i) {
                                            const double g = static_cast<double>(go[base + i]);
                                            const double xhv = static_cast<double>(xh[base + i]);
                                            gx[base + i] = static_cast<F>(ga * is * (g - mg - xhv * mgx));
                                        }
                                    } else {
                                        for (std::int64_t i = 0; i < sp; ++i)
                                            gx[base + i] = static_cast<F>(
                                                ga * is * static_cast<double>(go[base + i]));
                                    }
                                }
                            }
                            accumulate(x, gx);
                        }
                    });
    }

    NodeId maxpool3d(NodeId x, std::array<int, 3> kernel, std::array<int, 3> stride,
                     std::array<int, 3> padding) {
        const Tensor<F>& xv = value(x);
        if (xv.rank() != 5) throw DimensionError("maxpool3d expects rank-5 input");
        const int n = xv.shape()[0], c = xv.shape()[1];
        const int di = xv.shape()[2], hi = xv.shape()[3], wi = xv.shape()[4];
        const int od = conv_out_extent(di, kernel[0], stride[0], padding[0]);
        const int oh = conv_out_extent(hi, kernel[1], stride[1], padding[1]);
        const int ow = conv_out_extent(wi, kernel[2], stride[2], padding[2]);
        if (od < 1 || oh < 1 || ow < 1) throw DimensionError("maxpool3d output extent underflow");
        Tensor<F> out(Shape{n, c, od, oh, ow});
        auto argmax = std::make_shared<std::vector<std::int64_t>>(
            static_cast<std::size_t>(out.numel()));
        const std::int64_t in_sp = static_cast<std::int64_t>(di) * hi * wi;
        std::int64_t oi = 0;
        for (int b = 0; b < n; ++b) {
            for (int ch = 0; ch < c; ++ch) {
                const F* p = xv.data() + (static_cast<std::int64_t>(b) * c + ch) * in_sp;
                for (int zd = 0; zd < od; ++zd) {
                    for (int zh = 0; zh < oh; ++zh) {
                        for (int zw = 0; zw < ow; ++zw, ++oi) {
                            F best = -std::numeric_limits<F>::infinity();
                            std::int64_t best_idx = -1;
                            for (int kd = 0; kd < kernel[0]; ++kd) {
                                const int id = zd * stride[0] - padding[0] + kd;
                                if (id < 0 || id >= di) continue;
                                for (int kh = 0; kh < kernel[1]; ++kh) {
                                    const int ih = zh * stride[1] - padding[1] + kh;
                                    if (ih < 0 || ih >= hi) continue;
                                    for (int kw = 0; kw < kernel[2]; ++kw) {
                                        const int iw = zw * stride[2] - padding[2] + kw;
                                        if (iw < 0 || iw >= wi) continue;
                                        const std::int64_t idx =
                                            (static_cast<std::int64_t>(id) * hi + ih) * wi + iw;
                                        if (p[idx] > best) {
                                            best = p[idx];
                                            best_idx = idx;
                                        }
                                    }
                                }
                            }
                            out[oi] = best;
                            (*argmax)[static_cast<std::size_t>(oi)] =
                                (static_cast<std::int64_t>(b) * c + ch) * in_sp + best_idx;
                        }
                    }
                }
            }
        }
        return push(std::move(out), {x}, needs(x), [this, x, argmax](NodeId self) {
            if (!needs(x)) return;
            const Tensor<F>& go = grad(self);
            Tensor<F> gx(value(x).shape());
            for (std::int64_t i = 0; i < go.numel(); ++i)
                gx[(*argmax)[static_cast<std::size_t>(i)]] += go[i];
            accumulate(x, gx);
        });
    }

    // (N,C,D,H,W) -> (N,C), mean over the spatial volume.
    NodeId global_avg_pool(NodeId x) {
        const Tensor<F>& xv = value(x);
        if (xv.rank() != 5) throw DimensionError("global_avg_pool expects rank-5 input");
        const int n = xv.shape()[0], c = xv.shape()[1];
        const std::int64_t sp = static_cast<std::int64_t>(xv.shape()[2]) * xv.shape()[3] * xv.shape()[4];
        Tensor<F> out(Shape{n, c});
        for (int b = 0; b < n; ++b) {
            for (int ch = 0; ch < c; ++ch) {
                const F* p = xv.data() + (static_cast<std::int64_t>(b) * c + ch) * sp;
                double acc = 0.0;
                for (std::int64_t i = 0; i < sp; ++i) acc += static_cast<double>(p[i]);
                out.at2(b, ch) = static_cast<F>(acc / static_cast<double>(sp));
            }
        }
        return push(std::move(out), {x}, needs(x), [this, x, n, c, sp](NodeId self) {
            if (!needs(x)) return;
            const Tensor<F>& go = grad(self);
            Tensor<F> gx(value(x).shape());
            for (int b = 0; b < n; ++b)
                for (int ch = 0; ch < c; ++ch) {
                    const F g = static_cast<F>(static_cast<double>(go.at2(b, ch)) / static_cast<double>(sp));
                    F* p = gx.data() + (static_cast<std::int64_t>(b) * c + ch) * sp;
                    for (std::int64_t i = 0; i < sp; ++i) p[i] = g;
                }
            accumulate(x, gx);
        });
    }

    // Slice-mean pooling of a batch of volumes (N,D,H,W) along one view axis:
    // axis 0 keeps depth (transverse), 1 keeps height (coronal), 2 keeps width
    // (sagittal).
    NodeId pool_axis(NodeId x, int axis) {
        const Tensor<F>& xv = value(x);
        if (xv.rank() != 4) throw DimensionError("pool_axis expects rank-4 input (N,D,H,W)");
        const int n = xv.shape()[0], d = xv.shape()[1], h = xv.shape()[2], w = xv.shape()[3];
        const int keep = xv.shape()[1 + axis];
        Tensor<F> out(Shape{n, keep});
        const std::int64_t sp = static_cast<std::int64_t>(d) * h * w;
        std::vector<double> acc(static_cast<std::size_t>(keep));
        for (int b = 0; b < n; ++b) {
            std::fill(acc.begin(), acc.end(), 0.0);
            const F* p = xv.data() + b * sp;
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < h; ++j)
                    for (int k = 0; k < w; ++k) {
                        const int slice = axis == 0 ? i : (axis == 1 ? j : k);
                        acc[static_cast<std::size_t>(slice)] +=
                            static_cast<double>(p[(static_cast<std::int64_t>(i) * h + j) * w + k]);
                    }
            const double denom = static_cast<double>(sp) / static_cast<double>(keep);
            for (int s = 0; s < keep; ++s)
                out.at2(b, s) = static_cast<F>(acc[static_cast<std::size_t>(s)] / denom);
        }
        return push(std::move(out), {x}, needs(x), [this, x, axis, n, d, h, w](NodeId self) {
            if (!needs(x)) return;
            const Tensor<F>& go = grad(self);
            const int keep = value(self).shape()[1];
            const double denom = static_cast<double>(d) * h * w / static_cast<double>(keep);
            Tensor<F> gx(value(x).shape());
            const std::int64_t sp = static_cast<std::int64_t>(d) * h * w;
            for (int b = 0; b < n; ++b) {
                F* p = gx.data() + b * sp;
                for (int i = 0; i < d; ++i)
                    for (int j = 0; j < h; ++j)
                        for (int k = 0; k < w; ++k) {
                            const int slice = axis == 0 ? i : (axis == 1 ? j : k);
                            p[(static_cast<std::int64_t>(i) * h + j) * w + k] =
                                static_cast<F>(static_cast<double>(go.at2(b, slice)) / denom);
                        }
            }
            accumulate(x, gx);
        });
    }

    // out(n,i,j,k) = (at(n,i) + ac(n,j) + as(n,k)) / 3 * x(n,i,j,k)
    NodeId fuse_multiview(NodeId x, NodeId at, NodeId ac, NodeId as) {
        const Tensor<F>& xv = value(x);
        if (xv.rank() != 4) throw DimensionError("fuse_multiview expects rank-4 input (N,D,H,W)");
        const int n = xv.shape()[0], d = xv.shape()[1], h = xv.shape()[2], w = xv.shape()[3];
        check_weights(at, n, d, "transverse");
        check_weights(ac, n, h, "coronal");
        check_weights(as, n, w, "sagittal");
        Tensor<F> out(xv.shape());
        const Tensor<F>& tv = value(at);
        const Tensor<F>& cv = value(ac);
        const Tensor<F>& sv = value(as);
        std::int64_t idx = 0;
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < h; ++j)
                    for (int k = 0; k < w; ++k, ++idx) {
                        const double wgt = (static_cast<double>(tv.at2(b, i)) +
                                            static_cast<double>(cv.at2(b, j)) +
                                            static_cast<double>(sv.at2(b, k))) /
                                           3.0;
                        out[idx] = static_cast<F>(wgt * static_cast<double>(xv[idx]));
                    }
        return push(std::move(out), {x, at, ac, as},
                    needs(x) || needs(at) || needs(ac) || needs(as),
                    [this, x, at, ac, as, n, d, h, w](NodeId self) {
                        const Tensor<F>& go = grad(self);
                        const Tensor<F>& xv2 = value(x);
                        const Tensor<F>& tv2 = value(at);
                        const Tensor<F>& cv2 = value(ac);
                        const Tensor<F>& sv2 = value(as);
                        Tensor<F> gx(xv2.shape());
                        std::vector<double> gt(static_cast<std::size_t>(n) * d, 0.0);
                        std::vector<double> gc(static_cast<std::size_t>(n) * h, 0.0);
                        std::vector<double> gs(static_cast<std::size_t>(n) * w, 0.0);
                        std::int64_t idx = 0;
                        for (int b = 0; b < n; ++b)
                            for (int i = 0; i < d; ++i)
                                for (int j = 0; j < h; ++j)
                                    for (int k = 0; k < w; ++k, ++idx) {
                                        const double g = static_cast<double>(go[idx]);
                                        const double xval = static_cast<double>(xv2[idx]);
                                        const double wgt = (static_cast<double>(tv2.at2(b, i)) +
                                                            static_cast<double>(cv2.at2(b, j)) +
                                                            static_cast<double>(sv2.at2(b, k))) /
                                                           3.0;
                                        gx[idx] = static_cast<F>(g * wgt);
                                        const double gshare = g * xval / 3.0;
                                        gt[static_cast<std::size_t>(b) * d + i] += gshare;
                                        gc[static_cast<std::size_t>(b) * h + j] += gshare;
                                        gs[static_cast<std::size_t>(b) * w + k] += gshare;
                                    }
                        if (needs(x)) accumulate(x, gx);
                        if (needs(at)) accumulate_from_double(at, gt);
                        if (needs(ac)) accumulate_from_double(ac, gc);
                        if (needs(as)) accumulate_from_double(as, gs);
                    });
    }

    // Single-view reweighting: out(n,i,j,k) = at(n,i) * x(n,i,j,k)
    NodeId scale_transverse(NodeId x, NodeId at) {
        const Tensor<F>& xv = value(x);
        if (xv.rank() != 4) throw DimensionError("scale_transverse expects rank-4 input (N,D,H,W)");
        const int n = xv.shape()[0], d = xv.shape()[1], h = xv.shape()[2], w = xv.shape()[3];
        check_weights(at, n, d, "transverse");
        const Tensor<F>& tv = value(at);
        Tensor<F> out(xv.shape());
        const std::int64_t plane = static_cast<std::int64_t>(h) * w;
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < d; ++i) {
                const F a = tv.at2(b, i);
                const std::int64_t base = (static_cast<std::int64_t>(b) * d + i) * plane;
                for (std::int64_t q = 0; q < plane; ++q) out[base + q] = a * xv[base + q];
            }
        return push(std::move(out), {x, at}, needs(x) || needs(at),
                    [this, x, at, n, d, plane](NodeId self) {
                        const Tensor<F>& go = grad(self);
                        const Tensor<F>& xv2 = value(x);
                        const Tensor<F>& tv2 = value(at);
                        if (needs(x)) {
                            Tensor<F> gx(xv2.shape());
                            for (int b = 0; b < n; ++b)
                                for (int i = 0; i < d; ++i) {
                                    const F a = tv2.at2(b, i);
                                    const std::int64_t base = (static_cast<std::int64_t>(b) * d + i) * plane;
                                    for (std::int64_t q = 0; q < plane; ++q) gx[base + q] = a * go[base + q];
                                }
                            accumulate(x, gx);
                        }
                        if (needs(at)) {
                            std::vector<double> gt(static_cast<std::size_t>(n) * d, 0.0);
                            for (int b = 0; b < n; ++b)
                                for (int i = 0; i < d; ++i) {
                                    const std::int64_t base = (static_cast<std::int64_t>(b) * d + i) * plane;
                                    double acc = 0.0;
                                    for (std::int64_t q = 0; q < plane; ++q)
                                        acc += static_cast<double>(go[base + q]) *
                                               static_cast<double>(xv2[base + q]);
                                    gt[static_cast<std::size_t>(b) * d + i] = acc;
                                }
                            accumulate_from_double(at, gt);
                        }
                    });
    }

    NodeId softmax_rows(NodeId z) {
        Tensor<F> p = ops::softmax_rows(value(z));
        return push(std::move(p), {z}, needs(z), [this, z](NodeId self) {
            if (!needs(z)) return;
            const Tensor<F>& go = grad(self);
            const Tensor<F>& p2 = value(self);
            const int n = p2.shape()[0], c = p2.shape()[1];
            Tensor<F> gz(p2.shape());
            for (int i = 0; i < n; ++i) {
                double dot = 0.0;
                for (int j = 0; j < c; ++j)
                    dot += static_cast<double>(go.at2(i, j)) * static_cast<double>(p2.at2(i, j));
                for (int j = 0; j < c; ++j)
                    gz.at2(i, j) = static_cast<F>(static_cast<double>(p2.at2(i, j)) *
                                                  (static_cast<double>(go.at2(i, j)) - dot));
            }
            accumulate(z, gz);
        });
    }

    // Mean cross-entropy against constant one-hot targets; log clamped at 1e-12.
    NodeId cross_entropy(NodeId probs, Tensor<F> onehot) {
        const Tensor<F>& pv = value(probs);
        if (pv.rank() != 2 || !pv.same_shape(onehot))
            throw DimensionError("cross_entropy target shape mismatch");
        const int n = pv.shape()[0];
        if (n == 0) throw ContractError("cross_entropy: empty batch");
        double total = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < pv.shape()[1]; ++j) {
                const double y = static_cast<double>(onehot.at2(i, j));
                if (y != 0.0)
                    total -= y * std::log(std::max(static_cast<double>(pv.at2(i, j)), ops::kLogClamp));
            }
        Tensor<F> out(Shape{1});
        out[0] = static_cast<F>(total / n);
        auto y_holder = std::make_shared<Tensor<F>>(std::move(onehot));
        return push(std::move(out), {probs}, needs(probs), [this, probs, y_holder, n](NodeId self) {
            if (!needs(probs)) return;
            const double gl = static_cast<double>(grad(self)[0]);
            const Tensor<F>& p2 = value(probs);
            Tensor<F> gp(p2.shape());
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < p2.shape()[1]; ++j) {
                    const double y = static_cast<double>(y_holder->at2(i, j));
                    const double p = static_cast<double>(p2.at2(i, j));
                    gp.at2(i, j) = (y != 0.0 && p >= ops::kLogClamp)
                                       ? static_cast<F>(-gl * y / (p * n))
                                       : F(0);
                }
            accumulate(probs, gp);
        });
    }

    // Reverse accumulation from a scalar loss node; returns the gradient of
    // every named parameter that participated in the recording.
    GradRecord<F> backward(NodeId loss) {
        if (!recording_) throw ContractError("backward on a non-recording tape");
        if (consumed_) throw ContractError("backward already ran for this recording");
        if (!value(loss).is_scalar())
            throw ContractError("backward requires a scalar loss, got shape " +
                                shape_str(value(loss).shape()));
        consumed_ = true;
        for (auto& nd : nodes_)
            if (nd.needs_grad) nd.grad = Tensor<F>(nd.value.shape());
        nodes_[static_cast<std::size_t>(loss)].grad = Tensor<F>::full(Shape{1}, F(1));
        for (NodeId id = loss; id >= 0; --id) {
            auto& nd = nodes_[static_cast<std::size_t>(id)];
            if (nd.needs_grad && nd.backprop) nd.backprop(id);
        }
        GradRecord<F> rec;
        rec.loss = static_cast<double>(value(loss)[0]);
        for (auto& nd : nodes_)
            if (!nd.param_name.empty()) rec.grads.add(nd.param_name, nd.grad);
        return rec;
    }

private:
    struct Node {
        Tensor<F> value;
        Tensor<F> grad;
        std::vector<NodeId> parents;
        std::function<void(NodeId)> backprop;
        std::string param_name;
        bool needs_grad = false;
    };

    bool needs(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

    void accumulate(NodeId id, const Tensor<F>& g) {
        Tensor<F>& dst = nodes_[static_cast<std::size_t>(id)].grad;
        for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
    }

    void accumulate_from_double(NodeId id, const std::vector<double>& g) {
        Tensor<F>& dst = nodes_[static_cast<std::size_t>(id)].grad;
        for (std::size_t i = 0; i < g.size(); ++i) dst[static_cast<std::int64_t>(i)] += static_cast<F>(g[i]);
    }

    void check_weights(NodeId a, int n, int len, const char* view) const {
        const Tensor<F>& v = nodes_[static_cast<std::size_t>(a)].value;
        if (v.rank() != 2 || v.shape()[0] != n || v.shape()[1] != len)
            throw DimensionError(std::string("attention weight length mismatch for ") + view +
                                 " view: got " + shape_str(v.shape()) + ", expected (" +
                                 std::to_string(n) + "," + std::to_string(len) + ")");
    }

    NodeId push(Tensor<F> value, std::vector<NodeId> parents, bool needs_grad,
                std::function<void(NodeId)> backprop) {
        Node nd;
        nd.value = std::move(value);
        nd.parents = std::move(parents);
        nd.needs_grad = recording_ && needs_grad;
        if (nd.needs_grad) nd.backprop = std::move(backprop);
        nodes_.push_back(std::move(nd));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
    bool recording_ = true;
    bool consumed_ = false;
};

struct GradCheckOptions {
    double epsilon = 1e-5;
    int max_coords_per_tensor = 64;
    std::uint64_t seed = 1234;
};

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::int64_t worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Central-difference verification of reverse-mode gradients. `eval` runs the
// model: with with_grad=true it must return the loss and the full GradRecord;
// with with_grad=false only the loss field is read. Samples up to
// max_coords_per_tensor coordinates per parameter with a seeded uniform draw.
template <class F, class Eval>
GradCheckResult grad_check(Eval&& eval, ParamSet<F>& params, const GradCheckOptions& opt = {}) {
    if (!(opt.epsilon > 0.0)) throw ContractError("grad_check requires epsilon > 0");
    GradRecord<F> analytic = eval(params, true);
    if (!std::isfinite(analytic.loss)) throw NumericError("grad_check: non-finite loss at base point");
    Rng rng(opt.seed);
    GradCheckResult res;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const std::string& name = params.names()[pi];
        Tensor<F>& theta = params.value(pi);
        // A parameter absent from the recording has zero gradient.
        const Tensor<F>* g = analytic.grads.contains(name) ? &analytic.grads.at(name) : nullptr;
        const std::int64_t n = theta.numel();
        const int probes = static_cast<int>(std::min<std::int64_t>(n, opt.max_coords_per_tensor));
        for (int t = 0; t < probes; ++t) {
            const std::int64_t idx =
                n <= opt.max_coords_per_tensor ? t : rng.uniform_int(0, n - 1);
            const F saved = theta[idx];
            theta[idx] = static_cast<F>(static_cast<double>(saved) + opt.epsilon);
            const double lp = eval(params, false).loss;
            theta[idx] = static_cast<F>(static_cast<double>(saved) - opt.epsilon);
            const double lm = eval(params, false).loss;
            theta[idx] = saved;
            if (!std::isfinite(lp) || !std::isfinite(lm))
                throw NumericError("grad_check: non-finite loss probing " + name);
            const double numeric = (lp - lm) / (2.0 * opt.epsilon);
            const double anal = g ? static_cast<double>((*g)[idx]) : 0.0;
            const double rel =
                std::abs(anal - numeric) / std::max(1e-8, std::abs(anal) + std::abs(numeric));
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_param = name;
                res.worst_index = idx;
                res.worst_analytic = anal;
                res.worst_numeric = numeric;
            }
        }
    }
    return res;
}

}  // namespace muval
