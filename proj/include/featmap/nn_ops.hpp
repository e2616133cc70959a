#pragma once

// Spatial and normalization primitives on top of the tape: conv2d,
// transposed conv2d, 2x2 max pooling, 2x bilinear upsampling, batch norm.
// Convolutions run as im2col + GEMM per sample; backward recomputes the
// column buffer instead of retaining it, which keeps tape memory flat.
//
// Layout conventions: images are [N,C,H,W] row-major; conv weights are
// [Cout,Cin,kh,kw]; transposed-conv weights are [Cin,Cout,kh,kw].

#include <algorithm>
#include <cmath>

#include "featmap/autodiff.hpp"

namespace featmap {

namespace detail {

// exact ceil/floor division for possibly negative numerators, b > 0
inline int div_ceil(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }
inline int div_floor(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

// cols is [C*kh*kw x Ho*Wo] row-major with an explicit row stride so a
// batch can share one matrix (sample s owns columns [s*P, (s+1)*P)).
// Bounds are hoisted out of the pixel loops; stride-1 rows are straight
// copies.
template <typename T>
void im2col(const T* x, int c, int h, int w, int kh, int kw, int stride, int pad, int ho, int wo,
            T* cols, int64_t row_stride) {
    for (int ci = 0; ci < c; ++ci) {
        const T* plane = x + int64_t(ci) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                T* row = cols + (int64_t(ci) * kh * kw + int64_t(ky) * kw + kx) * row_stride;
                // valid ox range: 0 <= ox*stride - pad + kx < w
                const int lo = std::max(0, div_ceil(pad - kx, stride));
                const int hi = std::min(wo - 1, div_floor(w - 1 + pad - kx, stride));
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    T* dst = row + int64_t(oy) * wo;
                    if (iy < 0 || iy >= h || lo > hi) {
                        std::fill_n(dst, wo, T(0));
                        continue;
                    }
                    std::fill_n(dst, lo, T(0));
                    const T* src = plane + int64_t(iy) * w + (int64_t(lo) * stride - pad + kx);
                    if (stride == 1) {
                        std::copy_n(src, hi - lo + 1, dst + lo);
                    } else {
                        for (int ox = lo; ox <= hi; ++ox, src += stride) dst[ox] = *src;
                    }
                    std::fill_n(dst + hi + 1, wo - 1 - hi, T(0));
                }
            }
        }
    }
}

// Transpose scatter of im2col: accumulates columns back into the image.
template <typename T>
void col2im_add(const T* cols, int c, int h, int w, int kh, int kw, int stride, int pad, int ho,
                int wo, T* x, int64_t row_stride) {
    for (int ci = 0; ci < c; ++ci) {
        T* plane = x + int64_t(ci) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const T* row = cols + (int64_t(ci) * kh * kw + int64_t(ky) * kw + kx) * row_stride;
                const int lo = std::max(0, div_ceil(pad - kx, stride));
                const int hi = std::min(wo - 1, div_floor(w - 1 + pad - kx, stride));
                if (lo > hi) continue;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const T* src = row + int64_t(oy) * wo;
                    T* dst = plane + int64_t(iy) * w + (int64_t(lo) * stride - pad + kx);
                    for (int ox = lo; ox <= hi; ++ox, dst += stride) *dst += src[ox];
                }
            }
        }
    }
}

template <typename T>
using MapCM = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>>;
template <typename T>
using CMapCM = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>>;

// [N][C][P] row-major  ->  matrix [C x N*P] row-major (and back). Lets a
// whole batch run as a single GEMM per convolution.
template <typename T>
void gather_batch(const T* x, int n, int c, int64_t p, T* mat) {
    for (int s = 0; s < n; ++s)
        for (int j = 0; j < c; ++j)
            std::copy_n(x + (int64_t(s) * c + j) * p, p, mat + int64_t(j) * n * p + int64_t(s) * p);
}

template <typename T>
void scatter_batch(const T* mat, int n, int c, int64_t p, T* x) {
    for (int s = 0; s < n; ++s)
        for (int j = 0; j < c; ++j)
            std::copy_n(mat + int64_t(j) * n * p + int64_t(s) * p, p, x + (int64_t(s) * c + j) * p);
}

template <typename T>
void scatter_batch_add(const T* mat, int n, int c, int64_t p, T* x) {
    for (int s = 0; s < n; ++s)
        for (int j = 0; j < c; ++j) {
            const T* src = mat + int64_t(j) * n * p + int64_t(s) * p;
            T* dst = x + (int64_t(s) * c + j) * p;
            for (int64_t k = 0; k < p; ++k) dst[k] += src[k];
        }
}

}  // namespace detail

// ----------------------------------------------------------------- conv2d

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, int stride, int pad) {
    detail::check_same_tape(x, w, "conv2d");
    Tape<T>& t = *x.tape;
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if (sx.size() != 4 || sw.size() != 4 || sx[1] != sw[1])
        throw ShapeError("conv2d: shape mismatch " + shape_str(sx) + " vs " + shape_str(sw));
    const int n = sx[0], ci = sx[1], h = sx[2], wd = sx[3];
    const int co = sw[0], kh = sw[2], kw = sw[3];
    // floor semantics: a trailing partial window is dropped
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (wd + 2 * pad - kw) / stride + 1;
    if (h + 2 * pad < kh || wd + 2 * pad < kw)
        throw ShapeError("conv2d: kernel larger than padded input, " + shape_str(sx) +
                         " kernel " + shape_str(sw));

    const int k = ci * kh * kw;
    const int p = ho * wo;
    const int64_t np = int64_t(n) * p;
    std::vector<T> cols(size_t(k) * np);  // one im2col for the whole batch
    for (int s = 0; s < n; ++s)
        detail::im2col(t.val_ptr(x.id) + int64_t(s) * ci * h * wd, ci, h, wd, kh, kw, stride, pad,
                       ho, wo, cols.data() + int64_t(s) * p, np);
    std::vector<T> big(size_t(co) * np);
    {
        CMapRM<T> W(t.val_ptr(w.id), co, k);
        CMapRM<T> C(cols.data(), k, int(np));
        MapRM<T>(big.data(), co, int(np)).noalias() = W * C;
    }
    std::vector<T> out(size_t(n) * co * p);
    detail::scatter_batch(big.data(), n, co, p, out.data());

    const bool tracked = t.tracked(x.id) || t.tracked(w.id);
    Var<T> o{&t, t.emit({n, co, ho, wo}, std::move(out), tracked)};
    if (tracked) {
        Tape<T>* tp = &t;
        int ix = x.id, iw = w.id, io = o.id;
        t.record([tp, ix, iw, io, n, ci, h, wd, co, kh, kw, stride, pad, ho, wo, k, p, np]() {
            T* gx = tp->grad_ptr(ix);
            T* gw = tp->grad_ptr(iw);
            std::vector<T> gout(size_t(co) * np);
            detail::gather_batch(tp->grad(io).data(), n, co, p, gout.data());
            CMapRM<T> G(gout.data(), co, int(np));
            if (gw) {
                std::vector<T> cols(size_t(k) * np);  // recomputed, not retained
                for (int s = 0; s < n; ++s)
                    detail::im2col(tp->val_ptr(ix) + int64_t(s) * ci * h * wd, ci, h, wd, kh, kw,
                                   stride, pad, ho, wo, cols.data() + int64_t(s) * p, np);
                CMapRM<T> C(cols.data(), k, int(np));
                MapRM<T>(gw, co, k).noalias() += G * C.transpose();
            }
            if (gx) {
                std::vector<T> dcols(size_t(k) * np);
                CMapRM<T> W(tp->val_ptr(iw), co, k);
                MapRM<T>(dcols.data(), k, int(np)).noalias() = W.transpose() * G;
                for (int s = 0; s < n; ++s)
                    detail::col2im_add(dcols.data() + int64_t(s) * p, ci, h, wd, kh, kw, stride,
                                       pad, ho, wo, gx + int64_t(s) * ci * h * wd, np);
            }
        });
    }
    return o;
}

// --------------------------------------------------------- transposed conv

template <typename T>
Var<T> transposed_conv2d(Var<T> x, Var<T> w, int stride, int pad) {
    detail::check_same_tape(x, w, "transposed-conv2d");
    Tape<T>& t = *x.tape;
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if (sx.size() != 4 || sw.size() != 4 || sx[1] != sw[0])
        throw ShapeError("transposed-conv2d: shape mismatch " + shape_str(sx) + " vs " +
                         shape_str(sw));
    const int n = sx[0], ci = sx[1], h = sx[2], wd = sx[3];
    const int co = sw[1], kh = sw[2], kw = sw[3];
    const int ho = (h - 1) * stride - 2 * pad + kh;
    const int wo = (wd - 1) * stride - 2 * pad + kw;
    if (ho <= 0 || wo <= 0)
        throw ShapeError("transposed-conv2d: degenerate output for input " + shape_str(sx));

    const int k = co * kh * kw;
    const int p = h * wd;  // columns indexed by input pixels
    const int64_t np = int64_t(n) * p;
    std::vector<T> xmat(size_t(ci) * np);
    detail::gather_batch(t.val_ptr(x.id), n, ci, p, xmat.data());
    std::vector<T> cols(size_t(k) * np);
    {
        CMapRM<T> W(t.val_ptr(w.id), ci, k);
        CMapRM<T> X(xmat.data(), ci, int(np));
        MapRM<T>(cols.data(), k, int(np)).noalias() = W.transpose() * X;
    }
    std::vector<T> out(size_t(n) * co * ho * wo, T(0));
    for (int s = 0; s < n; ++s)
        detail::col2im_add(cols.data() + int64_t(s) * p, co, ho, wo, kh, kw, stride, pad, h, wd,
                           out.data() + int64_t(s) * co * ho * wo, np);

    const bool tracked = t.tracked(x.id) || t.tracked(w.id);
    Var<T> o{&t, t.emit({n, co, ho, wo}, std::move(out), tracked)};
    if (tracked) {
        Tape<T>* tp = &t;
        int ix = x.id, iw = w.id, io = o.id;
        t.record([tp, ix, iw, io, n, ci, h, wd, co, kh, kw, stride, pad, ho, wo, k, p, np]() {
            T* gx = tp->grad_ptr(ix);
            T* gw = tp->grad_ptr(iw);
            std::vector<T> dcols(size_t(k) * np);
            for (int s = 0; s < n; ++s)
                detail::im2col(tp->grad(io).data() + int64_t(s) * co * ho * wo, co, ho, wo, kh, kw,
                               stride, pad, h, wd, dcols.data() + int64_t(s) * p, np);
            CMapRM<T> D(dcols.data(), k, int(np));
            if (gx) {
                std::vector<T> gxmat(size_t(ci) * np);
                CMapRM<T> W(tp->val_ptr(iw), ci, k);
                MapRM<T>(gxmat.data(), ci, int(np)).noalias() = W * D;
                detail::scatter_batch_add(gxmat.data(), n, ci, p, gx);
            }
            if (gw) {
                std::vector<T> xmat(size_t(ci) * np);
                detail::gather_batch(tp->val_ptr(ix), n, ci, p, xmat.data());
                CMapRM<T> X(xmat.data(), ci, int(np));
                MapRM<T>(gw, ci, k).noalias() += X * D.transpose();
            }
        });
    }
    return o;
}

// ------------------------------------------------------------- max pooling

// 2x2 window, stride 2. Ties resolve to the first maximum in scan order.
template <typename T>
Var<T> max_pool2x2(Var<T> x) {
    Tape<T>& t = *x.tape;
    const Shape& sx = x.shape();
    if (sx.size() != 4 || sx[2] % 2 != 0 || sx[3] % 2 != 0)
        throw ShapeError("max-pool2x2: requires [N,C,H,W] with even H,W, got " + shape_str(sx));
    const int n = sx[0], c = sx[1], h = sx[2], w = sx[3];
    const int ho = h / 2, wo = w / 2;
    const int64_t planes = int64_t(n) * c;
    std::vector<T> out(size_t(planes) * ho * wo);
    std::vector<int32_t> argmax(out.size());
    const T* px = t.val_ptr(x.id);
    for (int64_t pl = 0; pl < planes; ++pl) {
        const T* in = px + pl * h * w;
        T* po = out.data() + pl * ho * wo;
        int32_t* pa = argmax.data() + pl * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                const int base = (2 * oy) * w + 2 * ox;
                int best = base;
                T bv = in[base];
                const int cand[3] = {base + 1, base + w, base + w + 1};
                for (int idx : cand) {
                    if (in[idx] > bv) {
                        bv = in[idx];
                        best = idx;
                    }
                }
                po[oy * wo + ox] = bv;
                pa[oy * wo + ox] = best;
            }
        }
    }
    const bool tracked = t.tracked(x.id);
    Var<T> o{&t, t.emit({n, c, ho, wo}, std::move(out), tracked)};
    if (tracked) {
        Tape<T>* tp = &t;
        int ix = x.id, io = o.id;
        t.record([tp, ix, io, planes, h, w, ho, wo, am = std::move(argmax)]() {
            const T* g = tp->grad(io).data();
            if (T* gx = tp->grad_ptr(ix)) {
                for (int64_t pl = 0; pl < planes; ++pl) {
                    const T* gp = g + pl * ho * wo;
                    const int32_t* pa = am.data() + pl * ho * wo;
                    T* gi = gx + pl * h * w;
                    for (int i = 0; i < ho * wo; ++i) gi[pa[i]] += gp[i];
                }
            }
        });
    }
    return o;
}

// ------------------------------------------------------ bilinear upsample

namespace detail {

// Sampling taps for 2x upsampling with half-pixel centers: output i reads
// source i/2 - 0.25 (even) or (i-1)/2 + 0.25 (odd), clamped at the edges.
struct UpTap {
    int lo, hi;
    double wlo, whi;
};

inline std::vector<UpTap> upsample2x_taps(int in) {
    std::vector<UpTap> taps(size_t(in) * 2);
    for (int i = 0; i < 2 * in; ++i) {
        const double src = (i + 0.5) / 2.0 - 0.5;
        int lo = int(std::floor(src));
        double f = src - lo;
        int hi = lo + 1;
        lo = std::clamp(lo, 0, in - 1);
        hi = std::clamp(hi, 0, in - 1);
        taps[size_t(i)] = {lo, hi, 1.0 - f, f};
    }
    return taps;
}

}  // namespace detail

template <typename T>
Var<T> bilinear_upsample2x(Var<T> x) {
    Tape<T>& t = *x.tape;
    const Shape& sx = x.shape();
    if (sx.size() != 4) throw ShapeError("bilinear-upsample2x: requires [N,C,H,W], got " + shape_str(sx));
    const int n = sx[0], c = sx[1], h = sx[2], w = sx[3];
    const int ho = 2 * h, wo = 2 * w;
    const auto ty = detail::upsample2x_taps(h);
    const auto tx = detail::upsample2x_taps(w);
    const int64_t planes = int64_t(n) * c;
    std::vector<T> out(size_t(planes) * ho * wo);
    const T* px = t.val_ptr(x.id);
    for (int64_t pl = 0; pl < planes; ++pl) {
        const T* in = px + pl * h * w;
        T* po = out.data() + pl * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
            const auto& y = ty[size_t(oy)];
            for (int ox = 0; ox < wo; ++ox) {
                const auto& xx = tx[size_t(ox)];
                po[oy * wo + ox] = T(y.wlo * (xx.wlo * in[y.lo * w + xx.lo] + xx.whi * in[y.lo * w + xx.hi]) +
                                     y.whi * (xx.wlo * in[y.hi * w + xx.lo] + xx.whi * in[y.hi * w + xx.hi]));
            }
        }
    }
    const bool tracked = t.tracked(x.id);
    Var<T> o{&t, t.emit({n, c, ho, wo}, std::move(out), tracked)};
    if (tracked) {
        Tape<T>* tp = &t;
        int ix = x.id, io = o.id;
        t.record([tp, ix, io, planes, h, w, ho, wo, ty, tx]() {
            const T* g = tp->grad(io).data();
            if (T* gx = tp->grad_ptr(ix)) {
                for (int64_t pl = 0; pl < planes; ++pl) {
                    const T* gp = g + pl * ho * wo;
                    T* gi = gx + pl * h * w;
                    for (int oy = 0; oy < ho; ++oy) {
                        const auto& y = ty[size_t(oy)];
                        for (int ox = 0; ox < wo; ++ox) {
                            const auto& xx = tx[size_t(ox)];
                            const T gv = gp[oy * wo + ox];
                            gi[y.lo * w + xx.lo] += T(y.wlo * xx.wlo) * gv;
                            gi[y.lo * w + xx.hi] += T(y.wlo * xx.whi) * gv;
                            gi[y.hi * w + xx.lo] += T(y.whi * xx.wlo) * gv;
                            gi[y.hi * w + xx.hi] += T(y.whi * xx.whi) * gv;
                        }
                    }
                }
            }
        });
    }
    return o;
}

// --------------------------------------------------------------- batchnorm

// Running statistics live outside the tape; they are updated in training
// mode (when update_stats) and are the sole source of normalization in
// inference mode, where the op is affine in its input.
template <typename T>
struct BatchNormState {
    std::vector<T>* running_mean = nullptr;
    std::vector<T>* running_var = nullptr;
    T momentum = T(0.1);
    T eps = T(1e-5);
};

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, const BatchNormState<T>& st, bool training,
                  bool update_stats = true) {
    detail::check_same_tape(x, gamma, "batch-norm");
    detail::check_same_tape(x, beta, "batch-norm");
    Tape<T>& t = *x.tape;
    const Shape& sx = x.shape();
    if (sx.size() != 2 && sx.size() != 4)
        throw ShapeError("batch-norm: requires [N,F] or [N,C,H,W], got " + shape_str(sx));
    const int n = sx[0];
    const int c = sx[1];
    const int64_t hw = sx.size() == 4 ? int64_t(sx[2]) * sx[3] : 1;
    const int64_t m = int64_t(n) * hw;  // reduction count per channel
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
        throw ShapeError("batch-norm: affine params must be [" + std::to_string(c) + "], got " +
                         shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    if (int64_t(st.running_mean->size()) != c || int64_t(st.running_var->size()) != c)
        throw ShapeError("batch-norm: running stats size mismatch");

    const T* px = t.val_ptr(x.id);
    const T* pg = t.val_ptr(gamma.id);
    const T* pb = t.val_ptr(beta.id);

    std::vector<T> mean(static_cast<size_t>(c));
    std::vector<T> invstd(static_cast<size_t>(c));
    if (training) {
        for (int j = 0; j < c; ++j) {
            T acc = 0;
            for (int i = 0; i < n; ++i) {
                const T* p = px + (int64_t(i) * c + j) * hw;
                for (int64_t q = 0; q < hw; ++q) acc += p[q];
            }
            mean[size_t(j)] = acc / T(m);
        }
        for (int j = 0; j < c; ++j) {
            T acc = 0;
            for (int i = 0; i < n; ++i) {
                const T* p = px + (int64_t(i) * c + j) * hw;
                for (int64_t q = 0; q < hw; ++q) {
                    const T d = p[q] - mean[size_t(j)];
                    acc += d * d;
                }
            }
            const T var = acc / T(m);
            invstd[size_t(j)] = T(1) / std::sqrt(var + st.eps);
            if (update_stats) {
                (*st.running_mean)[size_t(j)] =
                    (T(1) - st.momentum) * (*st.running_mean)[size_t(j)] + st.momentum * mean[size_t(j)];
                (*st.running_var)[size_t(j)] =
                    (T(1) - st.momentum) * (*st.running_var)[size_t(j)] + st.momentum * var;
            }
        }
    } else {
        for (int j = 0; j < c; ++j) {
            mean[size_t(j)] = (*st.running_mean)[size_t(j)];
            invstd[size_t(j)] = T(1) / std::sqrt((*st.running_var)[size_t(j)] + st.eps);
        }
    }

    std::vector<T> xhat(t.val(x.id).size());
    std::vector<T> out(xhat.size());
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < c; ++j) {
            const int64_t base = (int64_t(i) * c + j) * hw;
            const T mu = mean[size_t(j)], is = invstd[size_t(j)], ga = pg[j], be = pb[j];
            for (int64_t q = 0; q < hw; ++q) {
                const T xh = (px[base + q] - mu) * is;
                xhat[size_t(base + q)] = xh;
                out[size_t(base + q)] = ga * xh + be;
            }
        }
    }

    const bool tracked = t.tracked(x.id) || t.tracked(gamma.id) || t.tracked(beta.id);
    Var<T> o{&t, t.emit(sx, std::move(out), tracked)};
    if (tracked) {
        Tape<T>* tp = &t;
        int ix = x.id, ig = gamma.id, ib = beta.id, io = o.id;
        t.record([tp, ix, ig, ib, io, n, c, hw, m, training, xh = std::move(xhat),
                  is = std::move(invstd)]() {
            const T* g = tp->grad(io).data();
            const T* pg = tp->val_ptr(ig);
            T* gx = tp->grad_ptr(ix);
            T* gg = tp->grad_ptr(ig);
            T* gb = tp->grad_ptr(ib);
            for (int j = 0; j < c; ++j) {
                T sum_g = 0, sum_gxh = 0;
                for (int i = 0; i < n; ++i) {
                    const int64_t base = (int64_t(i) * c + j) * hw;
                    for (int64_t q = 0; q < hw; ++q) {
                        sum_g += g[base + q];
                        sum_gxh += g[base + q] * xh[size_t(base + q)];
                    }
                }
                if (gg) gg[j] += sum_gxh;
                if (gb) gb[j] += sum_g;
                if (gx) {
                    const T ga = pg[j], isj = is[size_t(j)];
                    if (training) {
                        const T inv_m = T(1) / T(m);
                        for (int i = 0; i < n; ++i) {
                            const int64_t base = (int64_t(i) * c + j) * hw;
                            for (int64_t q = 0; q < hw; ++q) {
                                const T dxh = g[base + q] * ga;
                                gx[base + q] += isj * (dxh - inv_m * (ga * sum_g + xh[size_t(base + q)] * ga * sum_gxh));
                            }
                        }
                    } else {
                        for (int i = 0; i < n; ++i) {
                            const int64_t base = (int64_t(i) * c + j) * hw;
                            for (int64_t q = 0; q < hw; ++q) gx[base + q] += g[base + q] * ga * isj;
                        }
                    }
                }
            }
        });
    }
    return o;
}

}  // namespace featmap
