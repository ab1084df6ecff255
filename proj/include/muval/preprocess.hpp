#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "muval/errors.hpp"
#include "muval/rng.hpp"
#include "muval/volume.hpp"

namespace muval {

// Windowing, resampling, and training-time augmentation settings.
struct PreprocessConfig {
    double window_low = -100.0;   // CT number units
    double window_high = 200.0;
    int target_d = 64;
    int target_h = 256;
    int target_w = 256;
    double max_translate_frac = 0.1;   // per axis, integer voxels
    double max_rotate_deg = 10.0;      // in-plane (h-w)
    double flip_prob_h = 0.5;
    double flip_prob_w = 0.5;
    double noise_sigma = 0.01;

    void validate() const {
        if (!(window_low < window_high)) throw ConfigError("window requires low < high");
        if (target_d < 1 || target_h < 1 || target_w < 1)
            throw ConfigError("target extents must be at least 1");
    }
};

// out = (clamp(x, low, high) - low) / (high - low). The fixed window endpoints
// act as the min/max, so the mapping is identical across volumes.
inline Volume window_normalize(const Volume& v, double low, double high) {
    if (!(low < high)) throw ConfigError("window_normalize requires low < high");
    Volume out(v.depth(), v.height(), v.width());
    const double span = high - low;
    for (std::int64_t i = 0; i < v.numel(); ++i) {
        const double x = static_cast<double>(v.flat(i));
        if (!std::isfinite(x)) throw NumericError("window_normalize: non-finite voxel");
        out.flat(i) = static_cast<float>((std::clamp(x, low, high) - low) / span);
    }
    return out;
}

namespace detail {

// Align-corners source coordinate for output index t: t*(S-1)/(T-1), or the
// source midpoint when the target axis is degenerate.
inline double align_corners_coord(int t, int src_extent, int dst_extent) {
    if (dst_extent > 1)
        return static_cast<double>(t) * (src_extent - 1) / static_cast<double>(dst_extent - 1);
    return static_cast<double>(src_extent - 1) / 2.0;
}

struct AxisTap {
    int lo;
    int hi;
    double w_hi;  // weight of the hi neighbor; lo gets 1 - w_hi
};

inline AxisTap axis_tap(int t, int src_extent, int dst_extent) {
    const double c = align_corners_coord(t, src_extent, dst_extent);
    int lo = static_cast<int>(std::floor(c));
    lo = std::clamp(lo, 0, src_extent - 1);
    const int hi = std::min(lo + 1, src_extent - 1);
    return {lo, hi, c - lo};
}

}  // namespace detail

// Per-axis linear (trilinear) resampling with the align-corners convention.
// Identical source and target shapes reproduce the input bit-exactly.
inline Volume resize_trilinear(const Volume& v, int td, int th, int tw) {
    if (td < 1 || th < 1 || tw < 1) throw ConfigError("resize target extents must be at least 1");
    if (td == v.depth() && th == v.height() && tw == v.width()) return v;
    Volume out(td, th, tw);
    std::vector<detail::AxisTap> taps_d(static_cast<std::size_t>(td));
    std::vector<detail::AxisTap> taps_h(static_cast<std::size_t>(th));
    std::vector<detail::AxisTap> taps_w(static_cast<std::size_t>(tw));
    for (int i = 0; i < td; ++i) taps_d[static_cast<std::size_t>(i)] = detail::axis_tap(i, v.depth(), td);
    for (int j = 0; j < th; ++j) taps_h[static_cast<std::size_t>(j)] = detail::axis_tap(j, v.height(), th);
    for (int k = 0; k < tw; ++k) taps_w[static_cast<std::size_t>(k)] = detail::axis_tap(k, v.width(), tw);
    for (int i = 0; i < td; ++i) {
        const auto& ti = taps_d[static_cast<std::size_t>(i)];
        for (int j = 0; j < th; ++j) {
            const auto& tj = taps_h[static_cast<std::size_t>(j)];
            for (int k = 0; k < tw; ++k) {
                const auto& tk = taps_w[static_cast<std::size_t>(k)];
                double acc = 0.0;
                for (int a = 0; a < 2; ++a) {
                    const int si = a ? ti.hi : ti.lo;
                    const double wa = a ? ti.w_hi : 1.0 - ti.w_hi;
                    if (wa == 0.0) continue;
                    for (int b = 0; b < 2; ++b) {
                        const int sj = b ? tj.hi : tj.lo;
                        const double wb = b ? tj.w_hi : 1.0 - tj.w_hi;
                        if (wb == 0.0) continue;
                        for (int c = 0; c < 2; ++c) {
                            const int sk = c ? tk.hi : tk.lo;
                            const double wc = c ? tk.w_hi : 1.0 - tk.w_hi;
                            if (wc == 0.0) continue;
                            acc += wa * wb * wc * static_cast<double>(v.at(si, sj, sk));
                        }
                    }
                }
                out.at(i, j, k) = static_cast<float>(acc);
            }
        }
    }
    return out;
}

namespace detail {

inline Volume translate_zero_fill(const Volume& v, int di, int dj, int dk) {
    if (di == 0 && dj == 0 && dk == 0) return v;
    Volume out(v.depth(), v.height(), v.width());
    for (int i = 0; i < v.depth(); ++i) {
        const int si = i - di;
        if (si < 0 || si >= v.depth()) continue;
        for (int j = 0; j < v.height(); ++j) {
            const int sj = j - dj;
            if (sj < 0 || sj >= v.height()) continue;
            for (int k = 0; k < v.width(); ++k) {
                const int sk = k - dk;
                if (sk < 0 || sk >= v.width()) continue;
                out.at(i, j, k) = v.at(si, sj, sk);
            }
        }
    }
    return out;
}

// Rotate every transverse slice by `angle` radians about the slice center,
// bilinear sampling, zero outside the source support.
inline Volume rotate_in_plane(const Volume& v, double angle) {
    if (angle == 0.0) return v;
    Volume out(v.depth(), v.height(), v.width());
    const double cj = (v.height() - 1) / 2.0;
    const double ck = (v.width() - 1) / 2.0;
    const double cs = std::cos(angle), sn = std::sin(angle);
    for (int i = 0; i < v.depth(); ++i) {
        for (int j = 0; j < v.height(); ++j) {
            for (int k = 0; k < v.width(); ++k) {
                // Inverse map: source coordinates of this output voxel.
                const double yj = j - cj, yk = k - ck;
                const double sj = cs * yj + sn * yk + cj;
                const double sk = -sn * yj + cs * yk + ck;
                const int j0 = static_cast<int>(std::floor(sj));
                const int k0 = static_cast<int>(std::floor(sk));
                const double fj = sj - j0, fk = sk - k0;
                double acc = 0.0;
                for (int b = 0; b < 2; ++b) {
                    const int jj = j0 + b;
                    if (jj < 0 || jj >= v.height()) continue;
                    const double wb = b ? fj : 1.0 - fj;
                    for (int c = 0; c < 2; ++c) {
                        const int kk = k0 + c;
                        if (kk < 0 || kk >= v.width()) continue;
                        const double wc = c ? fk : 1.0 - fk;
                        acc += wb * wc * static_cast<double>(v.at(i, jj, kk));
                    }
                }
                out.at(i, j, k) = static_cast<float>(acc);
            }
        }
    }
    return out;
}

inline Volume flip_axis(const Volume& v, int axis) {
    Volume out(v.depth(), v.height(), v.width());
    for (int i = 0; i < v.depth(); ++i)
        for (int j = 0; j < v.height(); ++j)
            for (int k = 0; k < v.width(); ++k) {
                const int si = axis == 0 ? v.depth() - 1 - i : i;
                const int sj = axis == 1 ? v.height() - 1 - j : j;
                const int sk = axis == 2 ? v.width() - 1 - k : k;
                out.at(i, j, k) = v.at(si, sj, sk);
            }
    return out;
}

}  // namespace detail

// Training-time augmentation, in order: integer translation per axis, in-plane
// rotation, independent h/w flips, additive Gaussian noise, clamp to [0,1].
// Deterministic in (v, cfg, seed); a zero-magnitude config is the identity.
inline Volume augment(const Volume& v, const PreprocessConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    const int max_di = static_cast<int>(std::floor(cfg.max_translate_frac * v.depth()));
    const int max_dj = static_cast<int>(std::floor(cfg.max_translate_frac * v.height()));
    const int max_dk = static_cast<int>(std::floor(cfg.max_translate_frac * v.width()));
    const int di = static_cast<int>(rng.uniform_int(-max_di, max_di));
    const int dj = static_cast<int>(rng.uniform_int(-max_dj, max_dj));
    const int dk = static_cast<int>(rng.uniform_int(-max_dk, max_dk));
    const double max_rad = cfg.max_rotate_deg * 3.14159265358979323846 / 180.0;
    const double angle = max_rad > 0.0 ? rng.uniform(-max_rad, max_rad) : 0.0;
    const bool do_flip_h = rng.uniform() < cfg.flip_prob_h;
    const bool do_flip_w = rng.uniform() < cfg.flip_prob_w;

    Volume out = detail::translate_zero_fill(v, di, dj, dk);
    out = detail::rotate_in_plane(out, angle);
    if (do_flip_h) out = detail::flip_axis(out, 1);
    if (do_flip_w) out = detail::flip_axis(out, 2);
    if (cfg.noise_sigma > 0.0) {
        for (std::int64_t i = 0; i < out.numel(); ++i)
            out.flat(i) = static_cast<float>(static_cast<double>(out.flat(i)) +
                                             rng.normal(0.0, cfg.noise_sigma));
    }
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out.flat(i) = std::clamp(out.flat(i), 0.0f, 1.0f);
    return out;
}

}  // namespace muval
