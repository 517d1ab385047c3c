#pragma once

#include "advlab/core/autodiff.hpp"

namespace advlab {

namespace detail {

// zero-padded copy of [C,H,W] so inner conv loops are branch-free
inline Tensor pad_chw(const Tensor& x, int pad) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor out({c, h + 2 * pad, w + 2 * pad});
    const int wp = w + 2 * pad;
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            std::copy_n(x.ptr() + (static_cast<size_t>(ci) * h + y) * w, w,
                        out.ptr() + (static_cast<size_t>(ci) * (h + 2 * pad) + y + pad) * wp + pad);
    return out;
}

inline void crop_add_chw(const Tensor& padded, int pad, Tensor& dst) {
    const int c = dst.dim(0), h = dst.dim(1), w = dst.dim(2);
    const int wp = w + 2 * pad;
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y) {
            const float* src = padded.ptr() + (static_cast<size_t>(ci) * (h + 2 * pad) + y + pad) * wp + pad;
            float* d = dst.ptr() + (static_cast<size_t>(ci) * h + y) * w;
            for (int x = 0; x < w; ++x) d[x] += src[x];
        }
}

inline void conv2d_forward(const Tensor& xp /*padded*/, const Tensor& w, const Tensor& b,
                           int stride, Tensor& out) {
    const int cin = xp.dim(0), hp = xp.dim(1), wp = xp.dim(2);
    const int cout = out.dim(0), ho = out.dim(1), wo = out.dim(2);
    const int kh = w.dim(2), kw = w.dim(3);
    (void)hp;
    for (int co = 0; co < cout; ++co) {
        float* oplane = out.ptr() + static_cast<size_t>(co) * ho * wo;
        const float bias = b.empty() ? 0.0f : b[co];
        for (int64_t i = 0; i < static_cast<int64_t>(ho) * wo; ++i) oplane[i] = bias;
        for (int ci = 0; ci < cin; ++ci) {
            const float* iplane = xp.ptr() + static_cast<size_t>(ci) * hp * wp;
            const float* wbase = w.ptr() + ((static_cast<size_t>(co) * cin + ci) * kh) * kw;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    const float wv = wbase[static_cast<size_t>(ky) * kw + kx];
                    for (int y = 0; y < ho; ++y) {
                        const float* irow = iplane + static_cast<size_t>(y * stride + ky) * wp + kx;
                        float* orow = oplane + static_cast<size_t>(y) * wo;
                        if (stride == 1) {
                            for (int x = 0; x < wo; ++x) orow[x] += wv * irow[x];
                        } else {
                            for (int x = 0; x < wo; ++x) orow[x] += wv * irow[static_cast<size_t>(x) * stride];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

// conv2d on [Cin,H,W] with weight [Cout,Cin,kh,kw], bias [Cout] (may be empty),
// symmetric zero padding. Output spatial dims: (H + 2p - kh)/stride + 1.
inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    if (x->val.ndim() != 3 || w->val.ndim() != 4 || x->val.dim(0) != w->val.dim(1))
        throw ShapeError("conv2d: input " + x->val.shape_str() + " weight " + w->val.shape_str());
    const int cin = x->val.dim(0), h = x->val.dim(1), wd = x->val.dim(2);
    const int cout = w->val.dim(0), kh = w->val.dim(2), kw = w->val.dim(3);
    if (!b->val.empty() && b->val.numel() != cout) throw ShapeError("conv2d bias");
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (wd + 2 * pad - kw) / stride + 1;
    if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: empty output");

    Tensor xp = pad > 0 ? detail::pad_chw(x->val, pad) : x->val;
    Tensor out({cout, ho, wo});
    detail::conv2d_forward(xp, w->val, b->val, stride, out);

    return detail::make_op(std::move(out), {x, w, b},
                           [x = x.get(), w = w.get(), b = b.get(), stride, pad, cin, h, wd, cout, kh, kw, ho,
                            wo](Node& n) {
        const float* g = n.grad.ptr();
        const int hp = h + 2 * pad, wp = wd + 2 * pad;

        if (b->needs_grad && !b->val.empty()) {
            float* gb = b->ensure_grad().ptr();
            for (int co = 0; co < cout; ++co) {
                const float* gplane = g + static_cast<size_t>(co) * ho * wo;
                double acc = 0.0;
                for (int64_t i = 0; i < static_cast<int64_t>(ho) * wo; ++i) acc += gplane[i];
                gb[co] += static_cast<float>(acc);
            }
        }

        if (w->needs_grad) {
            Tensor xp = pad > 0 ? detail::pad_chw(x->val, pad) : x->val;
            float* gw = w->ensure_grad().ptr();
            for (int co = 0; co < cout; ++co) {
                const float* gplane = g + static_cast<size_t>(co) * ho * wo;
                for (int ci = 0; ci < cin; ++ci) {
                    const float* iplane = xp.ptr() + static_cast<size_t>(ci) * hp * wp;
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            double acc = 0.0;
                            for (int y = 0; y < ho; ++y) {
                                const float* irow = iplane + static_cast<size_t>(y * stride + ky) * wp + kx;
                                const float* grow = gplane + static_cast<size_t>(y) * wo;
                                if (stride == 1) {
                                    for (int xx = 0; xx < wo; ++xx) acc += static_cast<double>(irow[xx]) * grow[xx];
                                } else {
                                    for (int xx = 0; xx < wo; ++xx)
                                        acc += static_cast<double>(irow[static_cast<size_t>(xx) * stride]) * grow[xx];
                                }
                            }
                            gw[((static_cast<size_t>(co) * cin + ci) * kh + ky) * kw + kx] +=
                                static_cast<float>(acc);
                        }
                }
            }
        }

        if (x->needs_grad) {
            Tensor gxp({cin, hp, wp});
            for (int co = 0; co < cout; ++co) {
                const float* gplane = g + static_cast<size_t>(co) * ho * wo;
                for (int ci = 0; ci < cin; ++ci) {
                    float* iplane = gxp.ptr() + static_cast<size_t>(ci) * hp * wp;
                    const float* wbase = w->val.ptr() + ((static_cast<size_t>(co) * cin + ci) * kh) * kw;
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const float wv = wbase[static_cast<size_t>(ky) * kw + kx];
                            for (int y = 0; y < ho; ++y) {
                                float* irow = iplane + static_cast<size_t>(y * stride + ky) * wp + kx;
                                const float* grow = gplane + static_cast<size_t>(y) * wo;
                                if (stride == 1) {
                                    for (int xx = 0; xx < wo; ++xx) irow[xx] += wv * grow[xx];
                                } else {
                                    for (int xx = 0; xx < wo; ++xx) irow[static_cast<size_t>(xx) * stride] += wv * grow[xx];
                                }
                            }
                        }
                }
            }
            if (pad > 0) {
                detail::crop_add_chw(gxp, pad, x->ensure_grad());
            } else {
                float* gx = x->ensure_grad().ptr();
                for (int64_t i = 0; i < x->val.numel(); ++i) gx[i] += gxp[i];
            }
        }
    });
}

inline Var upsample_nearest2(const Var& x) {
    if (x->val.ndim() != 3) throw ShapeError("upsample_nearest2 needs [C,H,W]");
    const int c = x->val.dim(0), h = x->val.dim(1), w = x->val.dim(2);
    Tensor out({c, 2 * h, 2 * w});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y) {
            const float* irow = x->val.ptr() + (static_cast<size_t>(ci) * h + y) * w;
            float* o0 = out.ptr() + (static_cast<size_t>(ci) * 2 * h + 2 * y) * 2 * w;
            float* o1 = o0 + 2 * w;
            for (int xx = 0; xx < w; ++xx) {
                o0[2 * xx] = o0[2 * xx + 1] = irow[xx];
                o1[2 * xx] = o1[2 * xx + 1] = irow[xx];
            }
        }
    return detail::make_op(std::move(out), {x}, [x = x.get(), c, h, w](Node& n) {
        if (!x->needs_grad) return;
        float* gx = x->ensure_grad().ptr();
        const float* g = n.grad.ptr();
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y) {
                float* grow = gx + (static_cast<size_t>(ci) * h + y) * w;
                const float* g0 = g + (static_cast<size_t>(ci) * 2 * h + 2 * y) * 2 * w;
                const float* g1 = g0 + 2 * w;
                for (int xx = 0; xx < w; ++xx)
                    grow[xx] += g0[2 * xx] + g0[2 * xx + 1] + g1[2 * xx] + g1[2 * xx + 1];
            }
    });
}

inline Var avg_pool2(const Var& x) {
    if (x->val.ndim() != 3 || x->val.dim(1) % 2 || x->val.dim(2) % 2)
        throw ShapeError("avg_pool2 needs even [C,H,W]");
    const int c = x->val.dim(0), h = x->val.dim(1) / 2, w = x->val.dim(2) / 2;
    Tensor out({c, h, w});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y) {
            const float* i0 = x->val.ptr() + (static_cast<size_t>(ci) * 2 * h + 2 * y) * 2 * w;
            const float* i1 = i0 + 2 * w;
            float* orow = out.ptr() + (static_cast<size_t>(ci) * h + y) * w;
            for (int xx = 0; xx < w; ++xx)
                orow[xx] = 0.25f * (i0[2 * xx] + i0[2 * xx + 1] + i1[2 * xx] + i1[2 * xx + 1]);
        }
    return detail::make_op(std::move(out), {x}, [x = x.get(), c, h, w](Node& n) {
        if (!x->needs_grad) return;
        float* gx = x->ensure_grad().ptr();
        const float* g = n.grad.ptr();
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y) {
                const float* grow = g + (static_cast<size_t>(ci) * h + y) * w;
                float* g0 = gx + (static_cast<size_t>(ci) * 2 * h + 2 * y) * 2 * w;
                float* g1 = g0 + 2 * w;
                for (int xx = 0; xx < w; ++xx) {
                    const float v = 0.25f * grow[xx];
                    g0[2 * xx] += v;
                    g0[2 * xx + 1] += v;
                    g1[2 * xx] += v;
                    g1[2 * xx + 1] += v;
                }
            }
    });
}

// global average pool [C,H,W] -> [C]
inline Var global_avg_pool(const Var& x) {
    if (x->val.ndim() != 3) throw ShapeError("global_avg_pool needs [C,H,W]");
    const int c = x->val.dim(0);
    const int64_t plane = static_cast<int64_t>(x->val.dim(1)) * x->val.dim(2);
    Tensor out({c});
    for (int ci = 0; ci < c; ++ci) {
        const float* p = x->val.ptr() + ci * plane;
        double acc = 0.0;
        for (int64_t i = 0; i < plane; ++i) acc += p[i];
        out[ci] = static_cast<float>(acc / static_cast<double>(plane));
    }
    return detail::make_op(std::move(out), {x}, [x = x.get(), c, plane](Node& n) {
        if (!x->needs_grad) return;
        float* gx = x->ensure_grad().ptr();
        const float* g = n.grad.ptr();
        const float inv = 1.0f / static_cast<float>(plane);
        for (int ci = 0; ci < c; ++ci) {
            const float gv = g[ci] * inv;
            float* p = gx + ci * plane;
            for (int64_t i = 0; i < plane; ++i) p[i] += gv;
        }
    });
}

}  // namespace advlab
