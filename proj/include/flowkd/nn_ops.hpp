#pragma once

#include <vector>

#include "flowkd/tensor.hpp"

namespace flowkd {

// Structured ops for the small conv nets: conv2d (3x3 / 1x1, stride 1 or 2,
// zero padding k/2), max-pool 2x2, global average pool, and the per-channel
// broadcasts batchnorm is composed from. Input layout is N x C x H x W.

namespace detail {

template <class T>
inline void check_4d(const TensorT<T>& a, const char* op) {
    if (a.ndim() != 4) throw std::invalid_argument(std::string(op) + ": expected 4-d tensor");
}

}  // namespace detail

// x: {N,C,H,W}, w: {OC,IC,KH,KW}, b: {OC}; pad = KH/2, stride in {1,2}.
template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, int stride) {
    detail::check_4d(x, "conv2d");
    if (w.ndim() != 4) throw std::invalid_argument("conv2d: weight must be 4-d");
    if (stride != 1 && stride != 2) throw std::invalid_argument("conv2d: stride must be 1 or 2");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int OC = w.dim(0), IC = w.dim(1), KH = w.dim(2), KW = w.dim(3);
    if (IC != C) throw std::invalid_argument("conv2d: input channel mismatch");
    if (KH != KW || (KH != 1 && KH != 3)) throw std::invalid_argument("conv2d: kernel must be 1x1 or 3x3");
    if (b.ndim() != 1 || b.dim(0) != OC) throw std::invalid_argument("conv2d: bias must have one entry per output channel");
    const int P = KH / 2;
    const int OH = (H + 2 * P - KH) / stride + 1;
    const int OW = (W + 2 * P - KW) / stride + 1;

    std::vector<T> out(static_cast<size_t>(N) * OC * OH * OW, T(0));
    const T* xv = x.value().data();
    const T* wv = w.value().data();
    const T* bv = b.value().data();
    auto xi = [&](int n, int c, int h, int ww) {
        return ((static_cast<size_t>(n) * C + c) * H + h) * W + ww;
    };
    auto wi = [&](int oc, int ic, int kh, int kw) {
        return ((static_cast<size_t>(oc) * IC + ic) * KH + kh) * KW + kw;
    };
    auto oi = [&](int n, int oc, int oh, int ow) {
        return ((static_cast<size_t>(n) * OC + oc) * OH + oh) * OW + ow;
    };
    for (int n = 0; n < N; ++n)
        for (int oc = 0; oc < OC; ++oc)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    T s = bv[oc];
                    const int h0 = oh * stride - P;
                    const int w0 = ow * stride - P;
                    for (int ic = 0; ic < C; ++ic)
                        for (int kh = 0; kh < KH; ++kh) {
                            const int h = h0 + kh;
                            if (h < 0 || h >= H) continue;
                            for (int kw = 0; kw < KW; ++kw) {
                                const int ww = w0 + kw;
                                if (ww < 0 || ww >= W) continue;
                                s += xv[xi(n, ic, h, ww)] * wv[wi(oc, ic, kh, kw)];
                            }
                        }
                    out[oi(n, oc, oh, ow)] = s;
                }

    return TensorT<T>::make_op({N, OC, OH, OW}, std::move(out), {x, w, b},
                               [N, C, H, W, OC, IC, KH, KW, P, stride, OH, OW](auto& nd) {
        auto* px = nd.parents[0].node();
        auto* pw = nd.parents[1].node();
        auto* pb = nd.parents[2].node();
        auto xi = [&](int n, int c, int h, int ww) {
            return ((static_cast<size_t>(n) * C + c) * H + h) * W + ww;
        };
        auto wi = [&](int oc, int ic, int kh, int kw) {
            return ((static_cast<size_t>(oc) * IC + ic) * KH + kh) * KW + kw;
        };
        auto oi = [&](int n, int oc, int oh, int ow) {
            return ((static_cast<size_t>(n) * OC + oc) * OH + oh) * OW + ow;
        };
        for (int n = 0; n < N; ++n)
            for (int oc = 0; oc < OC; ++oc)
                for (int oh = 0; oh < OH; ++oh)
                    for (int ow = 0; ow < OW; ++ow) {
                        const T g = nd.grad[oi(n, oc, oh, ow)];
                        if (g == T(0)) continue;
                        if (pb->requires_grad) pb->grad[oc] += g;
                        const int h0 = oh * stride - P;
                        const int w0 = ow * stride - P;
                        for (int ic = 0; ic < C; ++ic)
                            for (int kh = 0; kh < KH; ++kh) {
                                const int h = h0 + kh;
                                if (h < 0 || h >= H) continue;
                                for (int kw = 0; kw < KW; ++kw) {
                                    const int ww = w0 + kw;
                                    if (ww < 0 || ww >= W) continue;
                                    if (pw->requires_grad)
                                        pw->grad[wi(oc, ic, kh, kw)] += g * px->value[xi(n, ic, h, ww)];
                                    if (px->requires_grad)
                                        px->grad[xi(n, ic, h, ww)] += g * pw->value[wi(oc, ic, kh, kw)];
                                }
                            }
                    }
    });
}

// 2x2 max pool, stride 2; H and W must be even. Ties take the first
// (row-major) maximal element.
template <class T>
TensorT<T> maxpool2(const TensorT<T>& x) {
    detail::check_4d(x, "maxpool2");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0) throw std::invalid_argument("maxpool2: spatial dims must be even");
    const int OH = H / 2, OW = W / 2;
    std::vector<T> out(static_cast<size_t>(N) * C * OH * OW);
    std::vector<size_t> argmax(out.size());
    const T* xv = x.value().data();
    size_t o = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow, ++o) {
                    size_t base = ((static_cast<size_t>(n) * C + c) * H + 2 * oh) * W + 2 * ow;
                    size_t best = base;
                    T bv = xv[base];
                    const size_t cand[3] = {base + 1, base + W, base + W + 1};
                    for (size_t k : cand)
                        if (xv[k] > bv) { bv = xv[k]; best = k; }
                    out[o] = bv;
                    argmax[o] = best;
                }
    return TensorT<T>::make_op({N, C, OH, OW}, std::move(out), {x},
                               [argmax = std::move(argmax)](auto& nd) {
        auto* px = nd.parents[0].node();
        for (size_t i = 0; i < nd.grad.size(); ++i) px->grad[argmax[i]] += nd.grad[i];
    });
}

// {N,C,H,W} -> {N,C}: mean over the spatial dims.
template <class T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
    detail::check_4d(x, "global_avg_pool");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const T inv = T(1) / static_cast<T>(H * W);
    std::vector<T> out(static_cast<size_t>(N) * C, T(0));
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            T s = 0;
            const T* p = x.value().data() + ((static_cast<size_t>(n) * C + c) * H) * W;
            for (int k = 0; k < H * W; ++k) s += p[k];
            out[static_cast<size_t>(n) * C + c] = s * inv;
        }
    return TensorT<T>::make_op({N, C}, std::move(out), {x}, [N, C, H, W, inv](auto& nd) {
        auto* px = nd.parents[0].node();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const T g = nd.grad[static_cast<size_t>(n) * C + c] * inv;
                T* p = px->grad.data() + ((static_cast<size_t>(n) * C + c) * H) * W;
                for (int k = 0; k < H * W; ++k) p[k] += g;
            }
    });
}

// {N,C,H,W} -> {C}: mean over batch and spatial dims.
template <class T>
TensorT<T> channel_mean(const TensorT<T>& x) {
    detail::check_4d(x, "channel_mean");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const T inv = T(1) / static_cast<T>(N * H * W);
    std::vector<T> out(static_cast<size_t>(C), T(0));
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* p = x.value().data() + ((static_cast<size_t>(n) * C + c) * H) * W;
            T s = 0;
            for (int k = 0; k < H * W; ++k) s += p[k];
            out[c] += s;
        }
    for (int c = 0; c < C; ++c) out[c] *= inv;
    return TensorT<T>::make_op({C}, std::move(out), {x}, [N, C, H, W, inv](auto& nd) {
        auto* px = nd.parents[0].node();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const T g = nd.grad[c] * inv;
                T* p = px->grad.data() + ((static_cast<size_t>(n) * C + c) * H) * W;
                for (int k = 0; k < H * W; ++k) p[k] += g;
            }
    });
}

namespace detail {

template <class T>
inline void check_chanvec(const TensorT<T>& x, const TensorT<T>& v, const char* op) {
    check_4d(x, op);
    if (v.ndim() != 1 || v.dim(0) != x.dim(1))
        throw std::invalid_argument(std::string(op) + ": vector length must equal channel count");
}

}  // namespace detail

// out[n,c,h,w] = x[n,c,h,w] + v[c]
template <class T>
TensorT<T> add_chan(const TensorT<T>& x, const TensorT<T>& v) {
    detail::check_chanvec(x, v, "add_chan");
    const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    std::vector<T> out(x.numel());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T vc = v.value()[c];
            const size_t base = (static_cast<size_t>(n) * C + c) * HW;
            for (int k = 0; k < HW; ++k) out[base + k] = x.value()[base + k] + vc;
        }
    return TensorT<T>::make_op(x.shape(), std::move(out), {x, v}, [N, C, HW](auto& nd) {
        auto* px = nd.parents[0].node();
        auto* pv = nd.parents[1].node();
        if (px->requires_grad) detail::add_into(px->grad, nd.grad);
        if (pv->requires_grad)
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const size_t base = (static_cast<size_t>(n) * C + c) * HW;
                    for (int k = 0; k < HW; ++k) pv->grad[c] += nd.grad[base + k];
                }
    });
}

// out[n,c,h,w] = x[n,c,h,w] * v[c]
template <class T>
TensorT<T> mul_chan(const TensorT<T>& x, const TensorT<T>& v) {
    detail::check_chanvec(x, v, "mul_chan");
    const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    std::vector<T> out(x.numel());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T vc = v.value()[c];
            const size_t base = (static_cast<size_t>(n) * C + c) * HW;
            for (int k = 0; k < HW; ++k) out[base + k] = x.value()[base + k] * vc;
        }
    return TensorT<T>::make_op(x.shape(), std::move(out), {x, v}, [N, C, HW](auto& nd) {
        auto* px = nd.parents[0].node();
        auto* pv = nd.parents[1].node();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const size_t base = (static_cast<size_t>(n) * C + c) * HW;
                for (int k = 0; k < HW; ++k) {
                    if (px->requires_grad) px->grad[base + k] += nd.grad[base + k] * pv->value[c];
                    if (pv->requires_grad) pv->grad[c] += nd.grad[base + k] * px->value[base + k];
                }
            }
    });
}

}  // namespace flowkd
