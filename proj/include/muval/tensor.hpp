#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "muval/errors.hpp"

namespace muval {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int e : s) {
        if (e <= 0) throw DimensionError("non-positive extent in shape " + shape_str(s));
        n *= e;
    }
    return n;
}

// Dense N-dimensional array, row-major (last index fastest). The scalar type
// is a template parameter: float is the storage type for training, double is
// used when checking gradients. Reductions always accumulate in double.
template <class F>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), F(0)) {}

    Tensor(Shape shape, std::vector<F> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_))
            throw DimensionError("data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_str(shape_));
    }

    static Tensor full(Shape shape, F value) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = value;
        return t;
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool is_scalar() const { return numel() == 1; }

    F* data() { return data_.data(); }
    const F* data() const { return data_.data(); }
    F& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const F& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    F& at2(int i, int j) { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
    const F& at2(int i, int j) const { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }

    bool all_finite() const {
        for (const F& x : data_)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    void require_finite(const std::string& what) const {
        if (!all_finite()) throw NumericError("non-finite value in " + what);
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    template <class G>
    Tensor<G> cast() const {
        Tensor<G> out(shape_);
        for (std::int64_t i = 0; i < numel(); ++i) out[i] = static_cast<G>(data_[static_cast<std::size_t>(i)]);
        return out;
    }

private:
    Shape shape_{};
    std::vector<F> data_{};
};

// Output extents of a strided, zero-padded cross-correlation along one axis.
inline int conv_out_extent(int in, int kernel, int stride, int pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

namespace detail {

// C[m,p] = sum_k opA[m,k] * opB[k,p], where opX is X or X^T per flag.
// Double accumulation regardless of storage type.
template <class F>
void matmul_into(const Tensor<F>& a, const Tensor<F>& b, bool trans_a, bool trans_b, Tensor<F>& out) {
    const int m = trans_a ? a.shape()[1] : a.shape()[0];
    const int k = trans_a ? a.shape()[0] : a.shape()[1];
    const int p = trans_b ? b.shape()[0] : b.shape()[1];
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < p; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) {
                const F av = trans_a ? a.at2(t, i) : a.at2(i, t);
                const F bv = trans_b ? b.at2(j, t) : b.at2(t, j);
                acc += static_cast<double>(av) * static_cast<double>(bv);
            }
            out.at2(i, j) = static_cast<F>(acc);
        }
    }
}

struct Conv3dGeom {
    int n = 1;                      // batch
    int ci = 0, di = 0, hi = 0, wi = 0;
    int co = 0, kd = 0, kh = 0, kw = 0;
    int sd = 1, sh = 1, sw = 1;
    int pd = 0, ph = 0, pw = 0;
    int od = 0, oh = 0, ow = 0;
};

// Validates shapes for input (N,Ci,D,H,W) or (Ci,D,H,W) against kernels
// (Co,Ci,kd,kh,kw) and computes output extents.
template <class F>
Conv3dGeom conv3d_geometry(const Tensor<F>& input, const Tensor<F>& kernels,
                           const std::array<int, 3>& stride, const std::array<int, 3>& padding) {
    if (kernels.rank() != 5)
        throw DimensionError("conv3d kernels must have rank 5, got " + shape_str(kernels.shape()));
    Conv3dGeom g;
    if (input.rank() == 5) {
        g.n = input.shape()[0];
        g.ci = input.shape()[1];
        g.di = input.shape()[2];
        g.hi = input.shape()[3];
        g.wi = input.shape()[4];
    } else if (input.rank() == 4) {
        g.ci = input.shape()[0];
        g.di = input.shape()[1];
        g.hi = input.shape()[2];
        g.wi = input.shape()[3];
    } else {
        throw DimensionError("conv3d input must have rank 4 or 5, got " + shape_str(input.shape()));
    }
    g.co = kernels.shape()[0];
    if (kernels.shape()[1] != g.ci)
        throw DimensionError("conv3d channel mismatch: input has " + std::to_string(g.ci) +
                             " channels, kernels expect " + std::to_string(kernels.shape()[1]));
    g.kd = kernels.shape()[2];
    g.kh = kernels.shape()[3];
    g.kw = kernels.shape()[4];
    g.sd = stride[0];
    g.sh = stride[1];
    g.sw = stride[2];
    g.pd = padding[0];
    g.ph = padding[1];
    g.pw = padding[2];
    if (g.sd <= 0 || g.sh <= 0 || g.sw <= 0) throw DimensionError("conv3d stride must be positive");
    if (g.pd < 0 || g.ph < 0 || g.pw < 0) throw DimensionError("conv3d padding must be non-negative");
    g.od = conv_out_extent(g.di, g.kd, g.sd, g.pd);
    g.oh = conv_out_extent(g.hi, g.kh, g.sh, g.ph);
    g.ow = conv_out_extent(g.wi, g.kw, g.sw, g.pw);
    if (g.od < 1 || g.oh < 1 || g.ow < 1)
        throw DimensionError("conv3d output extent underflow: input " + shape_str(input.shape()) +
                             ", kernel " + shape_str(kernels.shape()));
    return g;
}

// Direct cross-correlation with zero padding. Accumulates per output element
// in a double scratch buffer; one sample of the batch at a time.
template <class F>
void conv3d_forward_into(const F* in, const F* ker, F* out, const Conv3dGeom& g,
                         std::vector<double>& scratch) {
    const std::int64_t out_sp = static_cast<std::int64_t>(g.od) * g.oh * g.ow;
    const std::int64_t in_sp = static_cast<std::int64_t>(g.di) * g.hi * g.wi;
    scratch.assign(static_cast<std::size_t>(g.co) * out_sp, 0.0);
    for (int co = 0; co < g.co; ++co) {
        double* acc = scratch.data() + static_cast<std::size_t>(co) * out_sp;
        for (int ci = 0; ci < g.ci; ++ci) {
            const F* in_c = in + static_cast<std::int64_t>(ci) * in_sp;
            const F* ker_c = ker + (static_cast<std::int64_t>(co) * g.ci + ci) * g.kd * g.kh * g.kw;
            for (int kd = 0; kd < g.kd; ++kd) {
                for (int kh = 0; kh < g.kh; ++kh) {
                    for (int kw = 0; kw < g.kw; ++kw) {
                        const double kv = static_cast<double>(ker_c[(kd * g.kh + kh) * g.kw + kw]);
                        if (kv == 0.0) continue;
                        for (int od = 0; od < g.od; ++od) {
                            const int id = od * g.sd - g.pd + kd;
                            if (id < 0 || id >= g.di) continue;
                            for (int oh = 0; oh < g.oh; ++oh) {
                                const int ih = oh * g.sh - g.ph + kh;
                                if (ih < 0 || ih >= g.hi) continue;
                                double* acc_row = acc + (static_cast<std::int64_t>(od) * g.oh + oh) * g.ow;
                                const F* in_row = in_c + (static_cast<std::int64_t>(id) * g.hi + ih) * g.wi;
                                const int iw0 = -g.pw + kw;
                                int ow_lo = 0, ow_hi = g.ow;
                                if (iw0 < 0) ow_lo = (-iw0 + g.sw - 1) / g.sw;
                                while (ow_hi > ow_lo && iw0 + (ow_hi - 1) * g.sw >= g.wi) --ow_hi;
                                if (g.sw == 1) {
                                    const F* src = in_row + iw0 + ow_lo;
                                    for (int ow = ow_lo; ow < ow_hi; ++ow)
                                        acc_row[ow] += kv * static_cast<double>(src[ow - ow_lo]);
                                } else {
                                    for (int ow = ow_lo; ow < ow_hi; ++ow)
                                        acc_row[ow] += kv * static_cast<double>(in_row[iw0 + ow * g.sw]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(g.co) * out_sp; ++i)
        out[i] = static_cast<F>(scratch[static_cast<std::size_t>(i)]);
}

// d(loss)/d(kernels) for one sample, accumulated into kgrad (double buffer).
template <class F>
void conv3d_backward_kernels(const F* in, const F* gout, double* kgrad, const Conv3dGeom& g) {
    const std::int64_t out_sp = static_cast<std::int64_t>(g.od) * g.oh * g.ow;
    const std::int64_t in_sp = static_cast<std::int64_t>(g.di) * g.hi * g.wi;
    for (int co = 0; co < g.co; ++co) {
        const F* go_c = gout + static_cast<std::int64_t>(co) * out_sp;
        for (int ci = 0; ci < g.ci; ++ci) {
            const F* in_c = in + static_cast<std::int64_t>(ci) * in_sp;
            double* kg_c = kgrad + (static_cast<std::int64_t>(co) * g.ci + ci) * g.kd * g.kh * g.kw;
            for (int kd = 0; kd < g.kd; ++kd) {
                for (int kh = 0; kh < g.kh; ++kh) {
                    for (int kw = 0; kw < g.kw; ++kw) {
                        double acc = 0.0;
                        for (int od = 0; od < g.od; ++od) {
                            const int id = od * g.sd - g.pd + kd;
                            if (id < 0 || id >= g.di) continue;
                            for (int oh = 0; oh < g.oh; ++oh) {
                                const int ih = oh * g.sh - g.ph + kh;
                                if (ih < 0 || ih >= g.hi) continue;
                                const F* go_row = go_c + (static_cast<std::int64_t>(od) * g.oh + oh) * g.ow;
                                const F* in_row = in_c + (static_cast<std::int64_t>(id) * g.hi + ih) * g.wi;
                                const int iw0 = -g.pw + kw;
                                int ow_lo = 0, ow_hi = g.ow;
                                if (iw0 < 0) ow_lo = (-iw0 + g.sw - 1) / g.sw;
                                while (ow_hi > ow_lo && iw0 + (ow_hi - 1) * g.sw >= g.wi) --ow_hi;
                                for (int ow = ow_lo; ow < ow_hi; ++ow)
                                    acc += static_cast<double>(go_row[ow]) *
                                           static_cast<double>(in_row[iw0 + ow * g.sw]);
                            }
                        }
                        kg_c[(kd * g.kh + kh) * g.kw + kw] += acc;
                    }
                }
            }
        }
    }
}

// d(loss)/d(input) for one sample, accumulated into igrad (double buffer).
// Scatter form; single writer, fixed iteration order.
template <class F>
void conv3d_backward_input(const F* ker, const F* gout, double* igrad, const Conv3dGeom& g) {
    const std::int64_t out_sp = static_cast<std::int64_t>(g.od) * g.oh * g.ow;
    const std::int64_t in_sp = static_cast<std::int64_t>(g.di) * g.hi * g.wi;
    for (int co = 0; co < g.co; ++co) {
        const F* go_c = gout + static_cast<std::int64_t>(co) * out_sp;
        for (int ci = 0; ci < g.ci; ++ci) {
            double* ig_c = igrad + static_cast<std::int64_t>(ci) * in_sp;
            const F* ker_c = ker + (static_cast<std::int64_t>(co) * g.ci + ci) * g.kd * g.kh * g.kw;
            for (int kd = 0; kd < g.kd; ++kd) {
                for (int kh = 0; kh < g.kh; ++kh) {
                    for (int kw = 0; kw < g.kw; ++kw) {
                        const double kv = static_cast<double>(ker_c[(kd * g.kh + kh) * g.kw + kw]);
                        if (kv == 0.0) continue;
                        for (int od = 0; od < g.od; ++od) {
                            const int id = od * g.sd - g.pd + kd;
                            if (id < 0 || id >= g.di) continue;
                            for (int oh = 0; oh < g.oh; ++oh) {
                                const int ih = oh * g.sh - g.ph + kh;
                                if (ih < 0 || ih >= g.hi) continue;
                                const F* go_row = go_c + (static_cast<std::int64_t>(od) * g.oh + oh) * g.ow;
                                double* ig_row = ig_c + (static_cast<std::int64_t>(id) * g.hi + ih) * g.wi;
                                const int iw0 = -g.pw + kw;
                                int ow_lo = 0, ow_hi = g.ow;
                                if (iw0 < 0) ow_lo = (-iw0 + g.sw - 1) / g.sw;
                                while (ow_hi > ow_lo && iw0 + (ow_hi - 1) * g.sw >= g.wi) --ow_hi;
                                for (int ow = ow_lo; ow < ow_hi; ++ow)
                                    ig_row[iw0 + ow * g.sw] += kv * static_cast<double>(go_row[ow]);
                            }
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

namespace ops {

// C = A * B for rank-2 operands with agreeing inner dimensions.
template <class F>
Tensor<F> matmul(const Tensor<F>& a, const Tensor<F>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw DimensionError("matmul expects rank-2 tensors, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    if (a.shape()[1] != b.shape()[0])
        throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    Tensor<F> out(Shape{a.shape()[0], b.shape()[1]});
    detail::matmul_into(a, b, false, false, out);
    out.require_finite("matmul output");
    return out;
}

// Direct cross-correlation (no kernel flip) with zero padding.
// input (C_in,D,H,W), kernels (C_out,C_in,kd,kh,kw) -> (C_out,D',H',W').
template <class F>
Tensor<F> conv3d(const Tensor<F>& input, const Tensor<F>& kernels, const std::array<int, 3>& stride,
                 const std::array<int, 3>& padding) {
    if (input.rank() != 4)
        throw DimensionError("conv3d expects rank-4 input, got " + shape_str(input.shape()));
    const auto g = detail::conv3d_geometry(input, kernels, stride, padding);
    Tensor<F> out(Shape{g.co, g.od, g.oh, g.ow});
    std::vector<double> scratch;
    detail::conv3d_forward_into(input.data(), kernels.data(), out.data(), g, scratch);
    out.require_finite("conv3d output");
    return out;
}

template <class F>
Tensor<F> relu(const Tensor<F>& x) {
    Tensor<F> out(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] > F(0) ? x[i] : F(0);
    return out;
}

// Branch-on-sign sigmoid; output clamped to the open interval (0,1) so the
// attention-weight invariant survives rounding for large |x|.
template <class F>
F sigmoid(F x) {
    double y;
    if (x >= F(0)) {
        const double e = std::exp(-static_cast<double>(x));
        y = 1.0 / (1.0 + e);
    } else {
        const double e = std::exp(static_cast<double>(x));
        y = e / (1.0 + e);
    }
    F out = static_cast<F>(y);
    const F lo = std::numeric_limits<F>::denorm_min();
    const F hi = F(1) - std::numeric_limits<F>::epsilon() / F(2);
    if (out <= F(0)) out = lo;
    if (out >= F(1)) out = hi;
    return out;
}

template <class F>
Tensor<F> sigmoid(const Tensor<F>& x) {
    Tensor<F> out(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = sigmoid(x[i]);
    return out;
}

// Row-wise softmax with max subtraction; rows stay positive and sum to 1.
template <class F>
Tensor<F> softmax_rows(const Tensor<F>& z) {
    if (z.rank() != 2) throw DimensionError("softmax_rows expects rank-2 input");
    const int n = z.shape()[0], c = z.shape()[1];
    Tensor<F> p(z.shape());
    for (int i = 0; i < n; ++i) {
        double zmax = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < c; ++j) zmax = std::max(zmax, static_cast<double>(z.at2(i, j)));
        double denom = 0.0;
        for (int j = 0; j < c; ++j) denom += std::exp(static_cast<double>(z.at2(i, j)) - zmax);
        for (int j = 0; j < c; ++j)
            p.at2(i, j) = static_cast<F>(std::exp(static_cast<double>(z.at2(i, j)) - zmax) / denom);
    }
    return p;
}

inline constexpr double kLogClamp = 1e-12;

// Mean negative log-likelihood over one-hot rows, log clamped at 1e-12.
template <class F>
double cross_entropy(const Tensor<F>& p_batch, const Tensor<F>& y_batch) {
    if (p_batch.rank() != 2 || y_batch.rank() != 2 || !p_batch.same_shape(y_batch))
        throw DimensionError("cross_entropy expects matching rank-2 batches");
    const int n = p_batch.shape()[0], c = p_batch.shape()[1];
    if (n == 0) throw ContractError("cross_entropy: empty batch");
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        double row_sum = 0.0;
        for (int j = 0; j < c; ++j) row_sum += static_cast<double>(p_batch.at2(i, j));
        if (std::abs(row_sum - 1.0) > 1e-5)
            throw ContractError("cross_entropy: probability row " + std::to_string(i) +
                                " sums to " + std::to_string(row_sum));
        for (int j = 0; j < c; ++j) {
            const double y = static_cast<double>(y_batch.at2(i, j));
            if (y != 0.0)
                total -= y * std::log(std::max(static_cast<double>(p_batch.at2(i, j)), kLogClamp));
        }
    }
    return total / n;
}

}  // namespace ops

}  // namespace muval
