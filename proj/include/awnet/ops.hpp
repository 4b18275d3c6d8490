// Differentiable operations on NCHW tensors. Every op records a backward
// closure on the tape when gradients are enabled and any input requires
// them. Iteration orders are fixed, so forward results are bit-deterministic.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "awnet/tensor.hpp"

namespace awnet {

namespace detail {

// C[M x N] += A[M x K] * B[K x N], all row-major.
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
    for (std::size_t m = 0; m < M; ++m) {
        T* c = C + m * N;
        const T* a = A + m * K;
        for (std::size_t k = 0; k < K; ++k) {
            const T av = a[k];
            const T* b = B + k * N;
            for (std::size_t n = 0; n < N; ++n) c[n] += av * b[n];
        }
    }
}

// C[M x N] += A[M x K] * B[N x K]^T
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
    for (std::size_t m = 0; m < M; ++m) {
        const T* a = A + m * K;
        for (std::size_t n = 0; n < N; ++n) {
            const T* b = B + n * K;
            T acc = T(0);
            for (std::size_t k = 0; k < K; ++k) acc += a[k] * b[k];
            C[m * N + n] += acc;
        }
    }
}

// C[M x N] += A[K x M]^T * B[K x N]
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
    for (std::size_t k = 0; k < K; ++k) {
        const T* a = A + k * M;
        const T* b = B + k * N;
        for (std::size_t m = 0; m < M; ++m) {
            const T av = a[m];
            T* c = C + m * N;
            for (std::size_t n = 0; n < N; ++n) c[n] += av * b[n];
        }
    }
}

template <typename T>
Tensor<T> make_tensor(Shape shape, std::vector<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return Tensor<T>(std::move(n));
}

template <typename T>
bool wants_grad(const Tensor<T>& t) {
    return t.node()->requires_grad;
}

struct Dims4 {
    std::size_t n, c, h, w;
};

template <typename T>
Dims4 dims4(const Tensor<T>& t, const char* op) {
    if (t.dim() != 4)
        shape_error(std::string(op) + ": expected NCHW tensor, got " + shape_str(t.shape()));
    return {t.extent(0), t.extent(1), t.extent(2), t.extent(3)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops. Shapes must match exactly, or one operand may be
// N x C x 1 x 1 against the other's N x C x H x W (the context-fusion case).
// No other implicit broadcasting.
// ---------------------------------------------------------------------------

namespace detail {

enum class Broadcast { none, lhs_small, rhs_small };

template <typename T>
Broadcast binary_layout(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() == b.shape()) return Broadcast::none;
    auto is_ctx = [](const Shape& big, const Shape& small) {
        return big.size() == 4 && small.size() == 4 && small[0] == big[0] &&
               small[1] == big[1] && small[2] == 1 && small[3] == 1;
    };
    if (is_ctx(a.shape(), b.shape())) return Broadcast::rhs_small;
    if (is_ctx(b.shape(), a.shape())) return Broadcast::lhs_small;
    shape_error(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                shape_str(b.shape()) + " are neither equal nor NCHW/NC11 broadcastable");
}

// Reduce a full-shape gradient onto an N x C x 1 x 1 operand.
template <typename T>
void reduce_to_nc11(const std::vector<T>& g, const Shape& big, std::vector<T>& out) {
    const std::size_t n = big[0], c = big[1], hw = big[2] * big[3];
    for (std::size_t i = 0; i < n * c; ++i) {
        T acc = T(0);
        const T* src = g.data() + i * hw;
        for (std::size_t j = 0; j < hw; ++j) acc += src[j];
        out[i] += acc;
    }
}

template <typename T, typename FwdSame, typename FwdBcast>
std::vector<T> binary_forward(const Tensor<T>& a, const Tensor<T>& b, Broadcast layout,
                              FwdSame&& same, FwdBcast&& bcast) {
    const auto& av = a.node()->value;
    const auto& bv = b.node()->value;
    if (layout == Broadcast::none) {
        std::vector<T> out(av.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = same(av[i], bv[i]);
        return out;
    }
    const bool rhs_small = (layout == Broadcast::rhs_small);
    const auto& big = rhs_small ? a : b;
    const auto& bigv = rhs_small ? av : bv;
    const auto& smallv = rhs_small ? bv : av;
    const std::size_t hw = big.extent(2) * big.extent(3);
    std::vector<T> out(bigv.size());
    for (std::size_t i = 0; i < smallv.size(); ++i) {
        const T s = smallv[i];
        const T* src = bigv.data() + i * hw;
        T* dst = out.data() + i * hw;
        for (std::size_t j = 0; j < hw; ++j) dst[j] = bcast(src[j], s, rhs_small);
    }
    return out;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    auto layout = detail::binary_layout(a, b, "add");
    auto out_vals = detail::binary_forward(
        a, b, layout, [](T x, T y) { return x + y; },
        [](T big, T small, bool) { return big + small; });
    const Shape& out_shape = (layout == detail::Broadcast::lhs_small) ? b.shape() : a.shape();
    Tensor<T> out = detail::make_tensor(out_shape, std::move(out_vals));
    if (grad_enabled() && (detail::wants_grad(a) || detail::wants_grad(b))) {
        auto an = a.node();
        auto bn = b.node();
        auto& o = *out.node();
        o.requires_grad = true;
        if (an->requires_grad) o.parents.push_back(an);
        if (bn->requires_grad) o.parents.push_back(bn);
        Shape big_shape = out_shape;
        o.backward_fn = [an, bn, layout, big_shape](const std::vector<T>& g) {
            auto pass = [&](const std::shared_ptr<detail::Node<T>>& n, bool is_small) {
                if (!n->requires_grad) return;
                n->ensure_grad();
                if (is_small)
                    detail::reduce_to_nc11(g, big_shape, n->grad);
                else
                    for (std::size_t i = 0; i < g.size(); ++i) n->grad[i] += g[i];
            };
            pass(an, layout == detail::Broadcast::lhs_small);
            pass(bn, layout == detail::Broadcast::rhs_small);
        };
    }
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    auto layout = detail::binary_layout(a, b, "sub");
    auto out_vals = detail::binary_forward(
        a, b, layout, [](T x, T y) { return x - y; },
        [](T big, T small, bool rhs_small) { return rhs_small ? big - small : small - big; });
    const Shape& out_shape = (layout == detail::Broadcast::lhs_small) ? b.shape() : a.shape();
    Tensor<T> out = detail::make_tensor(out_shape, std::move(out_vals));
    if (grad_enabled() && (detail::wants_grad(a) || detail::wants_grad(b))) {
        auto an = a.node();
        auto bn = b.node();
        auto& o = *out.node();
        o.requires_grad = true;
        if (an->requires_grad) o.parents.push_back(an);
        if (bn->requires_grad) o.parents.push_back(bn);
        Shape big_shape = out_shape;
        o.backward_fn = [an, bn, layout, big_shape](const std::vector<T>& g) {
            if (an->requires_grad) {
                an->ensure_grad();
                if (layout == detail::Broadcast::lhs_small) {
                    detail::reduce_to_nc11(g, big_shape, an->grad);
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                if (layout == detail::Broadcast::rhs_small) {
                    std::vector<T> neg(g.size());
                    for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
                    detail::reduce_to_nc11(neg, big_shape, bn->grad);
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i] -= g[i];
                }
            }
        };
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    auto layout = detail::binary_layout(a, b, "mul");
    auto out_vals = detail::binary_forward(
        a, b, layout, [](T x, T y) { return x * y; },
        [](T big, T small, bool) { return big * small; });
    const Shape& out_shape = (layout == detail::Broadcast::lhs_small) ? b.shape() : a.shape();
    Tensor<T> out = detail::make_tensor(out_shape, std::move(out_vals));
    if (grad_enabled() && (detail::wants_grad(a) || detail::wants_grad(b))) {
        auto an = a.node();
        auto bn = b.node();
        auto& o = *out.node();
        o.requires_grad = true;
        if (an->requires_grad) o.parents.push_back(an);
        if (bn->requires_grad) o.parents.push_back(bn);
        Shape big_shape = out_shape;
        o.backward_fn = [an, bn, layout, big_shape](const std::vector<T>& g) {
            const std::size_t hw =
                big_shape.size() == 4 ? big_shape[2] * big_shape[3] : 1;
            auto side = [&](const std::shared_ptr<detail::Node<T>>& self,
                            const std::shared_ptr<detail::Node<T>>& other, bool self_small,
                            bool other_small) {
                if (!self->requires_grad) return;
                self->ensure_grad();
                if (self_small) {
                    // d small = sum_{hw} g * big
                    for (std::size_t i = 0; i < self->grad.size(); ++i) {
                        T acc = T(0);
                        const T* gp = g.data() + i * hw;
                        const T* ov = other->value.data() + i * hw;
                        for (std::size_t j = 0; j < hw; ++j) acc += gp[j] * ov[j];
                        self->grad[i] += acc;
                    }
                } else if (other_small) {
                    for (std::size_t i = 0; i < other->value.size(); ++i) {
                        const T s = other->value[i];
                        const T* gp = g.data() + i * hw;
                        T* dst = self->grad.data() + i * hw;
                        for (std::size_t j = 0; j < hw; ++j) dst[j] += gp[j] * s;
                    }
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i)
                        self->grad[i] += g[i] * other->value[i];
                }
            };
            side(an, bn, layout == detail::Broadcast::lhs_small,
                 layout == detail::Broadcast::rhs_small);
            side(bn, an, layout == detail::Broadcast::rhs_small,
                 layout == detail::Broadcast::lhs_small);
        };
    }
    return out;
}

// Same-shape only; used by loss arithmetic where denominators are bounded
// away from zero.
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        shape_error("div: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                    " differ");
    const auto& av = a.node()->value;
    const auto& bv = b.node()->value;
    std::vector<T> out_vals(av.size());
    for (std::size_t i = 0; i < out_vals.size(); ++i) out_vals[i] = av[i] / bv[i];
    Tensor<T> out = detail::make_tensor(a.shape(), std::move(out_vals));
    if (grad_enabled() && (detail::wants_grad(a) || detail::wants_grad(b))) {
        auto an = a.node();
        auto bn = b.node();
        auto& o = *out.node();
        o.requires_grad = true;
        if (an->requires_grad) o.parents.push_back(an);
        if (bn->requires_grad) o.parents.push_back(bn);
        o.backward_fn = [an, bn](const std::vector<T>& g) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] / bn->value[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const T b2 = bn->value[i] * bn->value[i];
                    bn->grad[i] -= g[i] * an->value[i] / b2;
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Unary ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_op(const Tensor<T>& x, Fwd&& fwd, Bwd&& bwd_factor_from_input) {
    const auto& xv = x.node()->value;
    std::vector<T> out_vals(xv.size());
    for (std::size_t i = 0; i < out_vals.size(); ++i) out_vals[i] = fwd(xv[i]);
    Tensor<T> out = make_tensor(x.shape(), std::move(out_vals));
    if (grad_enabled() && wants_grad(x)) {
        auto xn = x.node();
        auto& o = *out.node();
        o.requires_grad = true;
        o.parents.push_back(xn);
        auto bwd = bwd_factor_from_input;
        o.backward_fn = [xn, bwd](const std::vector<T>& g) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                xn->grad[i] += g[i] * bwd(xn->value[i]);
        };
    }
    return out;
}

}  // namespace detail

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    // Subgradient at 0 is 0.
    return detail::unary_op(
        x, [](T v) { return v > T(0) ? v : T(0); },
        [](T v) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T negative_slope) {
    return detail::unary_op(
        x, [negative_slope](T v) { return v > T(0) ? v : negative_slope * v; },
        [negative_slope](T v) { return v > T(0) ? T(1) : negative_slope; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    auto sig = [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
    };
    return detail::unary_op(x, sig, [sig](T v) {
        const T s = sig(v);
        return s * (T(1) - s);
    });
}

// Elementwise square root; inputs must be non-negative (loss internals keep
// arguments >= eps^2).
template <typename T>
Tensor<T> sqrt_elem(const Tensor<T>& x) {
    for (T v : x.data())
        if (v < T(0)) shape_error("sqrt_elem: negative input");
    return detail::unary_op(
        x, [](T v) { return std::sqrt(v); },
        [](T v) { return T(1) / (T(2) * std::sqrt(v)); });
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& x, T s) {
    return detail::unary_op(
        x, [s](T v) { return v * s; }, [s](T) { return s; });
}

template <typename T>
Tensor<T> scalar_add(const Tensor<T>& x, T s) {
    return detail::unary_op(
        x, [s](T v) { return v + s; }, [](T) { return T(1); });
}

// ---------------------------------------------------------------------------
// conv2d: input N x I x H x W, weight O x I x kH x kW, optional bias O.
// Output spatial size floor((H + 2p - kH)/s) + 1. Implemented as im2col plus
// a small GEMM; the nested-loop reference lives in the test suite.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void im2col(const T* x, std::size_t I, std::size_t H, std::size_t W, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t OH,
            std::size_t OW, T* col) {
    const std::size_t P = OH * OW;
    for (std::size_t i = 0; i < I; ++i) {
        for (std::size_t r = 0; r < kh; ++r) {
            for (std::size_t c = 0; c < kw; ++c) {
                T* dst = col + ((i * kh + r) * kw + c) * P;
                for (std::size_t oh = 0; oh < OH; ++oh) {
                    const std::int64_t ih =
                        static_cast<std::int64_t>(oh * stride + r) - static_cast<std::int64_t>(pad);
                    if (ih < 0 || ih >= static_cast<std::int64_t>(H)) {
                        std::fill(dst, dst + OW, T(0));
                        dst += OW;
                        continue;
                    }
                    const T* src = x + (i * H + static_cast<std::size_t>(ih)) * W;
                    for (std::size_t ow = 0; ow < OW; ++ow) {
                        const std::int64_t iw = static_cast<std::int64_t>(ow * stride + c) -
                                                static_cast<std::int64_t>(pad);
                        *dst++ = (iw < 0 || iw >= static_cast<std::int64_t>(W))
                                     ? T(0)
                                     : src[static_cast<std::size_t>(iw)];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_accumulate(const T* col, std::size_t I, std::size_t H, std::size_t W,
                       std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
                       std::size_t OH, std::size_t OW, T* gx) {
    const std::size_t P = OH * OW;
    for (std::size_t i = 0; i < I; ++i) {
        for (std::size_t r = 0; r < kh; ++r) {
            for (std::size_t c = 0; c < kw; ++c) {
                const T* src = col + ((i * kh + r) * kw + c) * P;
                for (std::size_t oh = 0; oh < OH; ++oh) {
                    const std::int64_t ih =
                        static_cast<std::int64_t>(oh * stride + r) - static_cast<std::int64_t>(pad);
                    if (ih < 0 || ih >= static_cast<std::int64_t>(H)) continue;
                    T* dst = gx + (i * H + static_cast<std::size_t>(ih)) * W;
                    const T* row = src + oh * OW;
                    for (std::size_t ow = 0; ow < OW; ++ow) {
                        const std::int64_t iw = static_cast<std::int64_t>(ow * stride + c) -
                                                static_cast<std::int64_t>(pad);
                        if (iw >= 0 && iw < static_cast<std::int64_t>(W))
                            dst[static_cast<std::size_t>(iw)] += row[ow];
                    }
                }
            }
        }
    }
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const std::optional<Tensor<T>>& bias, std::size_t stride = 1,
                 std::size_t padding = 0) {
    const auto d = detail::dims4(input, "conv2d");
    if (weight.dim() != 4)
        shape_error("conv2d: weight must be OIHW, got " + shape_str(weight.shape()));
    const std::size_t O = weight.extent(0), I = weight.extent(1);
    const std::size_t kh = weight.extent(2), kw = weight.extent(3);
    if (I != d.c)
        shape_error("conv2d: input channels (" + std::to_string(d.c) +
                    ") != weight input channels (" + std::to_string(I) + ")");
    if (stride < 1) shape_error("conv2d: stride must be >= 1");
    if (d.h + 2 * padding < kh || d.w + 2 * padding < kw)
        shape_error("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                    " larger than padded input " + shape_str(input.shape()));
    if (bias && (bias->dim() != 1 || bias->extent(0) != O))
        shape_error("conv2d: bias must have shape [" + std::to_string(O) + "]");

    const std::size_t OH = (d.h + 2 * padding - kh) / stride + 1;
    const std::size_t OW = (d.w + 2 * padding - kw) / stride + 1;
    const std::size_t P = OH * OW;
    const std::size_t K = I * kh * kw;
    const bool pointwise = (kh == 1 && kw == 1 && stride == 1 && padding == 0);

    std::vector<T> out_vals(d.n * O * P, T(0));
    std::vector<T> col;
    if (!pointwise) col.resize(K * P);
    const T* xv = input.data().data();
    const T* wv = weight.data().data();
    for (std::size_t n = 0; n < d.n; ++n) {
        const T* xn = xv + n * d.c * d.h * d.w;
        const T* cols = xn;
        if (!pointwise) {
            detail::im2col(xn, I, d.h, d.w, kh, kw, stride, padding, OH, OW, col.data());
            cols = col.data();
        }
        detail::gemm_nn(O, P, K, wv, cols, out_vals.data() + n * O * P);
    }
    if (bias) {
        const T* bv = bias->data().data();
        for (std::size_t n = 0; n < d.n; ++n)
            for (std::size_t o = 0; o < O; ++o) {
                T* dst = out_vals.data() + (n * O + o) * P;
                const T b = bv[o];
                for (std::size_t p = 0; p < P; ++p) dst[p] += b;
            }
    }

    Tensor<T> out = detail::make_tensor({d.n, O, OH, OW}, std::move(out_vals));
    const bool need = grad_enabled() &&
                      (detail::wants_grad(input) || detail::wants_grad(weight) ||
                       (bias && detail::wants_grad(*bias)));
    if (need) {
        auto xn = input.node();
        auto wn = weight.node();
        typename Tensor<T>::NodePtr bn = bias ? bias->node() : nullptr;
        auto& o = *out.node();
        o.requires_grad = true;
        if (xn->requires_grad) o.parents.push_back(xn);
        if (wn->requires_grad) o.parents.push_back(wn);
        if (bn && bn->requires_grad) o.parents.push_back(bn);
        const auto dd = d;
        o.backward_fn = [xn, wn, bn, dd, O, I, kh, kw, stride, padding, OH, OW,
                         pointwise](const std::vector<T>& g) {
            const std::size_t P = OH * OW;
            const std::size_t K = I * kh * kw;
            std::vector<T> col, gcol;
            if (!pointwise) col.resize(K * P);
            if (xn->requires_grad) {
                xn->ensure_grad();
                if (!pointwise) gcol.resize(K * P);
            }
            if (wn->requires_grad) wn->ensure_grad();
            if (bn && bn->requires_grad) bn->ensure_grad();
            for (std::size_t n = 0; n < dd.n; ++n) {
                const T* xb = xn->value.data() + n * dd.c * dd.h * dd.w;
                const T* gb = g.data() + n * O * P;
                const T* cols = xb;
                if (!pointwise) {
                    detail::im2col(xb, I, dd.h, dd.w, kh, kw, stride, padding, OH, OW,
                                   col.data());
                    cols = col.data();
                }
                if (bn && bn->requires_grad) {
                    for (std::size_t o2 = 0; o2 < O; ++o2) {
                        T acc = T(0);
                        const T* src = gb + o2 * P;
                        for (std::size_t p = 0; p < P; ++p) acc += src[p];
                        bn->grad[o2] += acc;
                    }
                }
                if (wn->requires_grad)
                    detail::gemm_nt(O, K, P, gb, cols, wn->grad.data());
                if (xn->requires_grad) {
                    if (pointwise) {
                        detail::gemm_tn(K, P, O, wn->value.data(), gb,
                                        xn->grad.data() + n * dd.c * dd.h * dd.w);
                    } else {
                        std::fill(gcol.begin(), gcol.end(), T(0));
                        detail::gemm_tn(K, P, O, wn->value.data(), gb, gcol.data());
                        detail::col2im_accumulate(gcol.data(), I, dd.h, dd.w, kh, kw, stride,
                                                  padding, OH, OW,
                                                  xn->grad.data() + n * dd.c * dd.h * dd.w);
                    }
                }
            }
        };
    }
    return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, std::size_t stride = 1,
                 std::size_t padding = 0) {
    return conv2d(input, weight, std::optional<Tensor<T>>{}, stride, padding);
}

// ---------------------------------------------------------------------------
// Attention / normalization ops
// ---------------------------------------------------------------------------

// Softmax over the spatial extent of a single-channel map (N x 1 x H x W).
// Shift-invariant by construction (max subtraction).
template <typename T>
Tensor<T> softmax_spatial(const Tensor<T>& x) {
    const auto d = detail::dims4(x, "softmax_spatial");
    if (d.c != 1)
        shape_error("softmax_spatial: expected single channel, got " + shape_str(x.shape()));
    const std::size_t hw = d.h * d.w;
    const auto& xv = x.node()->value;
    std::vector<T> out_vals(xv.size());
    for (std::size_t n = 0; n < d.n; ++n) {
        const T* src = xv.data() + n * hw;
        T* dst = out_vals.data() + n * hw;
        T m = src[0];
        for (std::size_t i = 1; i < hw; ++i) m = std::max(m, src[i]);
        double sum = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
            dst[i] = std::exp(src[i] - m);
            sum += static_cast<double>(dst[i]);
        }
        const T inv = static_cast<T>(1.0 / sum);
        for (std::size_t i = 0; i < hw; ++i) dst[i] *= inv;
    }
    Tensor<T> out = detail::make_tensor(x.shape(), std::move(out_vals));
    if (grad_enabled() && detail::wants_grad(x)) {
        auto xn = x.node();
        auto& o = *out.node();
        o.requires_grad = true;
        o.parents.push_back(xn);
        std::vector<T> y = out.node()->value;
        const std::size_t N = d.n;
        o.backward_fn = [xn, y, N, hw](const std::vector<T>& g) {
            xn->ensure_grad();
            for (std::size_t n = 0; n < N; ++n) {
                const T* yp = y.data() + n * hw;
                const T* gp = g.data() + n * hw;
                double dot = 0.0;
                for (std::size_t i = 0; i < hw; ++i)
                    dot += static_cast<double>(gp[i]) * static_cast<double>(yp[i]);
                T* dst = xn->grad.data() + n * hw;
                for (std::size_t i = 0; i < hw; ++i)
                    dst[i] += yp[i] * (gp[i] - static_cast<T>(dot));
            }
        };
    }
    return out;
}

// LayerNorm across channels of an N x C x 1 x 1 vector, population variance,
// eps = 1e-5, then per-channel affine (gain, bias of shape [C]).
template <typename T>
Tensor<T> layer_norm_channels(const Tensor<T>& x, const Tensor<T>& gain,
                              const Tensor<T>& bias) {
    const auto d = detail::dims4(x, "layer_norm_channels");
    if (d.h != 1 || d.w != 1)
        shape_error("layer_norm_channels: spatial extent must be 1x1, got " +
                    shape_str(x.shape()));
    if (d.c < 2)
        shape_error("layer_norm_channels: needs at least 2 channels, got " +
                    std::to_string(d.c));
    if (gain.dim() != 1 || gain.extent(0) != d.c || bias.dim() != 1 || bias.extent(0) != d.c)
        shape_error("layer_norm_channels: gain/bias must have shape [" + std::to_string(d.c) +
                    "]");
    constexpr double kEps = 1e-5;
    const auto& xv = x.node()->value;
    const auto& gv = gain.node()->value;
    const auto& bv = bias.node()->value;
    std::vector<T> out_vals(xv.size());
    std::vector<T> xhat(xv.size());
    std::vector<T> inv_std(d.n);
    for (std::size_t n = 0; n < d.n; ++n) {
        const T* src = xv.data() + n * d.c;
        double mean = 0.0;
        for (std::size_t c = 0; c < d.c; ++c) mean += static_cast<double>(src[c]);
        mean /= static_cast<double>(d.c);
        double var = 0.0;
        for (std::size_t c = 0; c < d.c; ++c) {
            const double dv = static_cast<double>(src[c]) - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(d.c);
        const double inv = 1.0 / std::sqrt(var + kEps);
        inv_std[n] = static_cast<T>(inv);
        for (std::size_t c = 0; c < d.c; ++c) {
            const T xh = static_cast<T>((static_cast<double>(src[c]) - mean) * inv);
            xhat[n * d.c + c] = xh;
            out_vals[n * d.c + c] = gv[c] * xh + bv[c];
        }
    }
    Tensor<T> out = detail::make_tensor(x.shape(), std::move(out_vals));
    const bool need = grad_enabled() && (detail::wants_grad(x) || detail::wants_grad(gain) ||
                                         detail::wants_grad(bias));
    if (need) {
        auto xn = x.node();
        auto gn = gain.node();
        auto bn = bias.node();
        auto& o = *out.node();
        o.requires_grad = true;
        if (xn->requires_grad) o.parents.push_back(xn);
        if (gn->requires_grad) o.parents.push_back(gn);
        if (bn->requires_grad) o.parents.push_back(bn);
        const std::size_t N = d.n, C = d.c;
        o.backward_fn = [xn, gn, bn, xhat, inv_std, N, C](const std::vector<T>& g) {
            for (std::size_t n = 0; n < N; ++n) {
                const T* gp = g.data() + n * C;
                const T* xh = xhat.data() + n * C;
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    for (std::size_t c = 0; c < C; ++c) gn->grad[c] += gp[c] * xh[c];
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (std::size_t c = 0; c < C; ++c) bn->grad[c] += gp[c];
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    double mean_gxh = 0.0, mean_gxh_xh = 0.0;
                    std::vector<T> gxh(C);
                    for (std::size_t c = 0; c < C; ++c) {
                        gxh[c] = gp[c] * gn->value[c];
                        mean_gxh += static_cast<double>(gxh[c]);
                        mean_gxh_xh += static_cast<double>(gxh[c]) * static_cast<double>(xh[c]);
                    }
                    mean_gxh /= static_cast<double>(C);
                    mean_gxh_xh /= static_cast<double>(C);
                    T* dst = xn->grad.data() + n * C;
                    for (std::size_t c = 0; c < C; ++c)
                        dst[c] += inv_std[n] * static_cast<T>(static_cast<double>(gxh[c]) -
                                                              mean_gxh -
                                                              static_cast<double>(xh[c]) *
                                                                  mean_gxh_xh);
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Resampling ops
// ---------------------------------------------------------------------------

namespace detail {

inline void adaptive_bounds(std::size_t i, std::size_t in, std::size_t out,
                            std::size_t& lo, std::size_t& hi) {
    lo = (i * in) / out;
    hi = ((i + 1) * in + out - 1) / out;  // ceil
}

}  // namespace detail

// Mean over (near-)equal partitions. Accumulates in T, row-major, so a 2x2
// pooling shares its rounding with the wavelet LL path.
template <typename T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    const auto d = detail::dims4(x, "adaptive_avg_pool");
    if (out_h == 0 || out_w == 0) shape_error("adaptive_avg_pool: zero output extent");
    if (out_h > d.h || out_w > d.w)
        shape_error("adaptive_avg_pool: output " + std::to_string(out_h) + "x" +
                    std::to_string(out_w) + " exceeds input " + shape_str(x.shape()));
    const auto& xv = x.node()->value;
    std::vector<T> out_vals(d.n * d.c * out_h * out_w);
    std::size_t idx = 0;
    for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
        const T* plane = xv.data() + nc * d.h * d.w;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
            std::size_t h0, h1;
            detail::adaptive_bounds(oh, d.h, out_h, h0, h1);
            for (std::size_t ow = 0; ow < out_w; ++ow) {
                std::size_t w0, w1;
                detail::adaptive_bounds(ow, d.w, out_w, w0, w1);
                T acc = T(0);
                for (std::size_t ih = h0; ih < h1; ++ih)
                    for (std::size_t iw = w0; iw < w1; ++iw) acc += plane[ih * d.w + iw];
                out_vals[idx++] = acc / static_cast<T>((h1 - h0) * (w1 - w0));
            }
        }
    }
    Tensor<T> out = detail::make_tensor({d.n, d.c, out_h, out_w}, std::move(out_vals));
    if (grad_enabled() && detail::wants_grad(x)) {
        auto xn = x.node();
        auto& o = *out.node();
        o.requires_grad = true;
        o.parents.push_back(xn);
        const auto dd = d;
        o.backward_fn = [xn, dd, out_h, out_w](const std::vector<T>& g) {
            xn->ensure_grad();
            std::size_t idx = 0;
            for (std::size_t nc = 0; nc < dd.n * dd.c; ++nc) {
                T* plane = xn->grad.data() + nc * dd.h * dd.w;
                for (std::size_t oh = 0; oh < out_h; ++oh) {
                    std::size_t h0, h1;
                    detail::adaptive_bounds(oh, dd.h, out_h, h0, h1);
                    for (std::size_t ow = 0; ow < out_w; ++ow) {
                        std::size_t w0, w1;
                        detail::adaptive_bounds(ow, dd.w, out_w, w0, w1);
                        const T gv = g[idx++] / static_cast<T>((h1 - h0) * (w1 - w0));
                        for (std::size_t ih = h0; ih < h1; ++ih)
                            for (std::size_t iw = w0; iw < w1; ++iw)
                                plane[ih * dd.w + iw] += gv;
                    }
                }
            }
        };
    }
    return out;
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    const auto d = detail::dims4(x, "upsample_nearest");
    if (out_h < d.h || out_w < d.w)
        shape_error("upsample_nearest: output smaller than input");
    const auto& xv = x.node()->value;
    std::vector<T> out_vals(d.n * d.c * out_h * out_w);
    std::size_t idx = 0;
    for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
        const T* plane = xv.data() + nc * d.h * d.w;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
            const std::size_t ih = oh * d.h / out_h;
            for (std::size_t ow = 0; ow < out_w; ++ow) {
                const std::size_t iw = ow * d.w / out_w;
                out_vals[idx++] = plane[ih * d.w + iw];
            }
        }
    }
    Tensor<T> out = detail::make_tensor({d.n, d.c, out_h, out_w}, std::move(out_vals));
    if (grad_enabled() && detail::wants_grad(x)) {
        auto xn = x.node();
        auto& o = *out.node();
        o.requires_grad = true;
        o.parents.push_back(xn);
        const auto dd = d;
        o.backward_fn = [xn, dd, out_h, out_w](const std::vector<T>& g) {
            xn->ensure_grad();
            std::size_t idx = 0;
            for (std::size_t nc = 0; nc < dd.n * dd.c; ++nc) {
                T* plane = xn->grad.data() + nc * dd.h * dd.w;
                for (std::size_t oh = 0; oh < out_h; ++oh) {
                    const std::size_t ih = oh * dd.h / out_h;
                    for (std::size_t ow = 0; ow < out_w; ++ow) {
                        const std::size_t iw = ow * dd.w / out_w;
                        plane[ih * dd.w + iw] += g[idx++];
                    }
                }
            }
        };
    }
    return out;
}

// Sub-pixel rearrangement: N x (C r^2) x H x W -> N x C x rH x rW.
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r) {
    const auto d = detail::dims4(x, "pixel_shuffle");
    if (r == 0 || d.c % (r * r) != 0)
        shape_error("pixel_shuffle: channels " + std::to_string(d.c) +
                    " not divisible by r^2 = " + std::to_string(r * r));
    const std::size_t C = d.c / (r * r);
    const std::size_t OH = d.h * r, OW = d.w * r;
    const auto& xv = x.node()->value;
    std::vector<T> out_vals(xv.size());
    for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t dh = 0; dh < r; ++dh)
                for (std::size_t dw = 0; dw < r; ++dw) {
                    const std::size_t ic = (c * r + dh) * r + dw;
                    const T* src = xv.data() + ((n * d.c + ic) * d.h) * d.w;
                    for (std::size_t h = 0; h < d.h; ++h) {
                        T* dst = out_vals.data() +
                                 ((n * C + c) * OH + h * r + dh) * OW + dw;
                        for (std::size_t w = 0; w < d.w; ++w) dst[w * r] = src[h * d.w + w];
                    }
                }
    Tensor<T> out = detail::make_tensor({d.n, C, OH, OW}, std::move(out_vals));
    if (grad_enabled() && detail::wants_grad(x)) {
        auto xn = x.node();
        auto& o = *out.node();
        o.requires_grad = true;
        o.parents.push_back(xn);
        const auto dd = d;
        o.backward_fn = [xn, dd, r, C, OH, OW](const std::vector<T>& g) {
            xn->ensure_grad();
            for (std::size_t n = 0; n < dd.n; ++n)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t dh = 0; dh < r; ++dh)
                        for (std::size_t dw = 0; dw < r; ++dw) {
                            const std::size_t ic = (c * r + dh) * r + dw;
                            T* dst = xn->grad.data() + ((n * dd.c + ic) * dd.h) * dd.w;
                            for (std::size_t h = 0; h < dd.h; ++h) {
                                const T* src =
                                    g.data() + ((n * C + c) * OH + h * r + dh) * OW + dw;
                                for (std::size_t w = 0; w < dd.w; ++w)
                                    dst[h * dd.w + w] += src[w * r];
                            }
                        }
        };
    }
    return out;
}

// Exact inverse of pixel_shuffle.
template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, std::size_t r) {
    const auto d = detail::dims4(x, "pixel_unshuffle");
    if (r == 0 || d.h % r != 0 || d.w % r != 0)
        shape_error("pixel_unshuffle: spatial extents not divisible by r");
    const std::size_t C = d.c * r * r;
    const std::size_t OH = d.h / r, OW = d.w / r;
    const auto& xv = x.node()->value;
    std::vector<T> out_vals(xv.size());
    for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t c = 0; c < d.c; ++c)
            for (std::size_t dh = 0; dh < r; ++dh)
                for (std::size_t dw = 0; dw < r; ++dw) {
                    const std::size_t oc = (c * r + dh) * r + dw;
                    T* dst = out_vals.data() + ((n * C + oc) * OH) * OW;
                    for (std::size_t h = 0; h < OH; ++h) {
                        const T* src =
                            xv.data() + ((n * d.c + c) * d.h + h * r + dh) * d.w + dw;
                        for (std::size_t w = 0; w < OW; ++w) dst[h * OW + w] = src[w * r];
                    }
                }
    Tensor<T> out = detail::make_tensor({d.n, C, OH, OW}, std::move(out_vals));
    if (grad_enabled() && detail::wants_grad(x)) {
        auto xn = x.node();
        auto& o = *out.node();
        o.requires_grad = true;
        o.parents.push_back(xn);
        const auto dd = d;
        o.backward_fn = [xn, dd, r, C, OH, OW](const std::vector<T>& g) {
            xn->ensure_grad();
            for (std::size_t n = 0; n < dd.n; ++n)
                for (std::size_t c = 0; c < dd.c; ++c)
                    for (std::size_t dh = 0; dh < r; ++dh)
                        for (std::size_t dw = 0; dw < r; ++dw) {
                            const std::size_t oc = (c * r + dh) * r + dw;
                            const T* src = g.data() + ((n * C + oc) * OH) * OW;
                            for (std::size_t h = 0; h < OH; ++h) {
                                T* dst = xn->grad.data() +
                                         ((n * dd.c + c) * dd.h + h * r + dh) * dd.w + dw;
                                for (std::size_t w = 0; w < OW; ++w)
                                    dst[w * r] += src[h * OW + w];
                            }
                        }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) shape_error("concat_channels: no inputs");
    const auto d0 = detail::dims4(parts[0], "concat_channels");
    std::size_t total_c = 0;
    for (const auto& p : parts) {
        const auto d = detail::dims4(p, "concat_channels");
        if (d.n != d0.n || d.h != d0.h || d.w != d0.w)
            shape_error("concat_channels: mismatched extents " + shape_str(p.shape()) +
                        " vs " + shape_str(parts[0].shape()));
        total_c += d.c;
    }
    const std::size_t hw = d0.h * d0.w;
    std::vector<T> out_vals(d0.n * total_c * hw);
    std::size_t c_off = 0;
    for (const auto& p : parts) {
        const std::size_t pc = p.extent(1);
        const auto& pv = p.node()->value;
        for (std::size_t n = 0; n < d0.n; ++n)
            std::copy(pv.begin() + n * pc * hw, pv.begin() + (n + 1) * pc * hw,
                      out_vals.begin() + (n * total_c + c_off) * hw);
        c_off += pc;
    }
    Tensor<T> out = detail::make_tensor({d0.n, total_c, d0.h, d0.w}, std::move(out_vals));
    bool need = false;
    if (grad_enabled())
        for (const auto& p : parts) need = need || detail::wants_grad(p);
    if (need) {
        auto& o = *out.node();
        o.requires_grad = true;
        std::vector<typename Tensor<T>::NodePtr> nodes;
        std::vector<std::size_t> chans;
        for (const auto& p : parts) {
            nodes.push_back(p.node());
            chans.push_back(p.extent(1));
            if (p.node()->requires_grad) o.parents.push_back(p.node());
        }
        const std::size_t N = d0.n;
        o.backward_fn = [nodes, chans, N, hw, total_c](const std::vector<T>& g) {
            std::size_t c_off = 0;
            for (std::size_t i = 0; i < nodes.size(); ++i) {
                const std::size_t pc = chans[i];
                if (nodes[i]->requires_grad) {
                    nodes[i]->ensure_grad();
                    for (std::size_t n = 0; n < N; ++n) {
                        const T* src = g.data() + (n * total_c + c_off) * hw;
                        T* dst = nodes[i]->grad.data() + n * pc * hw;
                        for (std::size_t j = 0; j < pc * hw; ++j) dst[j] += src[j];
                    }
                }
                c_off += pc;
            }
        };
    }
    return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t start, std::size_t count) {
    const auto d = detail::dims4(x, "slice_channels");
    if (start + count > d.c)
        shape_error("slice_channels: range [" + std::to_string(start) + ", " +
                    std::to_string(start + count) + ") exceeds " + std::to_string(d.c) +
                    " channels");
    const std::size_t hw = d.h * d.w;
    const auto& xv = x.node()->value;
    std::vector<T> out_vals(d.n * count * hw);
    for (std::size_t n = 0; n < d.n; ++n)
        std::copy(xv.begin() + (n * d.c + start) * hw,
                  xv.begin() + (n * d.c + start + count) * hw,
                  out_vals.begin() + n * count * hw);
    Tensor<T> out = detail::make_tensor({d.n, count, d.h, d.w}, std::move(out_vals));
    if (grad_enabled() && detail::wants_grad(x)) {
        auto xn = x.node();
        auto& o = *out.node();
        o.requires_grad = true;
        o.parents.push_back(xn);
        const auto dd = d;
        o.backward_fn = [xn, dd, start, count, hw](const std::vector<T>& g) {
            xn->ensure_grad();
            for (std::size_t n = 0; n < dd.n; ++n) {
                const T* src = g.data() + n * count * hw;
                T* dst = xn->grad.data() + (n * dd.c + start) * hw;
                for (std::size_t j = 0; j < count * hw; ++j) dst[j] += src[j];
            }
        };
    }
    return out;
}

// Attention-weighted spatial sum: x is N x C x H x W, weights N x 1 x H x W,
// result N x C x 1 x 1. The gather step of the global context block.
template <typename T>
Tensor<T> spatial_weighted_sum(const Tensor<T>& x, const Tensor<T>& weights) {
    const auto d = detail::dims4(x, "spatial_weighted_sum");
    const auto dw = detail::dims4(weights, "spatial_weighted_sum");
    if (dw.n != d.n || dw.c != 1 || dw.h != d.h || dw.w != d.w)
        shape_error("spatial_weighted_sum: weights " + shape_str(weights.shape()) +
                    " incompatible with " + shape_str(x.shape()));
    const std::size_t hw = d.h * d.w;
    const auto& xv = x.node()->value;
    const auto& wv = weights.node()->value;
    std::vector<T> out_vals(d.n * d.c);
    for (std::size_t n = 0; n < d.n; ++n) {
        const T* wp = wv.data() + n * hw;
        for (std::size_t c = 0; c < d.c; ++c) {
            const T* xp = xv.data() + (n * d.c + c) * hw;
            T acc = T(0);
            for (std::size_t j = 0; j < hw; ++j) acc += xp[j] * wp[j];
            out_vals[n * d.c + c] = acc;
        }
    }
    Tensor<T> out = detail::make_tensor({d.n, d.c, 1, 1}, std::move(out_vals));
    const bool need =
        grad_enabled() && (detail::wants_grad(x) || detail::wants_grad(weights));
    if (need) {
        auto xn = x.node();
        auto wn = weights.node();
        auto& o = *out.node();
        o.requires_grad = true;
        if (xn->requires_grad) o.parents.push_back(xn);
        if (wn->requires_grad) o.parents.push_back(wn);
        const auto dd = d;
        o.backward_fn = [xn, wn, dd, hw](const std::vector<T>& g) {
            for (std::size_t n = 0; n < dd.n; ++n) {
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    const T* wp = wn->value.data() + n * hw;
                    for (std::size_t c = 0; c < dd.c; ++c) {
                        const T gv = g[n * dd.c + c];
                        T* dst = xn->grad.data() + (n * dd.c + c) * hw;
                        for (std::size_t j = 0; j < hw; ++j) dst[j] += gv * wp[j];
                    }
                }
                if (wn->requires_grad) {
                    wn->ensure_grad();
                    T* dst = wn->grad.data() + n * hw;
                    for (std::size_t c = 0; c < dd.c; ++c) {
                        const T gv = g[n * dd.c + c];
                        const T* xp = xn->value.data() + (n * dd.c + c) * hw;
                        for (std::size_t j = 0; j < hw; ++j) dst[j] += gv * xp[j];
                    }
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    double acc = 0.0;
    for (T v : x.data()) acc += static_cast<double>(v);
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
    if (grad_enabled() && detail::wants_grad(x)) {
        auto xn = x.node();
        auto& o = *out.node();
        o.requires_grad = true;
        o.parents.push_back(xn);
        o.backward_fn = [xn](const std::vector<T>& g) {
            xn->ensure_grad();
            for (auto& gv : xn->grad) gv += g[0];
        };
    }
    return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    const std::size_t n = x.numel();
    double acc = 0.0;
    for (T v : x.data()) acc += static_cast<double>(v);
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
    if (grad_enabled() && detail::wants_grad(x)) {
        auto xn = x.node();
        auto& o = *out.node();
        o.requires_grad = true;
        o.parents.push_back(xn);
        o.backward_fn = [xn, n](const std::vector<T>& g) {
            xn->ensure_grad();
            const T gv = g[0] / static_cast<T>(n);
            for (auto& dst : xn->grad) dst += gv;
        };
    }
    return out;
}

// Inference-only clamp; returns a detached tensor.
template <typename T>
Tensor<T> clamp01(const Tensor<T>& x) {
    std::vector<T> out_vals(x.numel());
    const auto& xv = x.node()->value;
    for (std::size_t i = 0; i < out_vals.size(); ++i)
        out_vals[i] = std::min(T(1), std::max(T(0), xv[i]));
    return detail::make_tensor(x.shape(), std::move(out_vals));
}

template <typename T>
bool all_finite(const Tensor<T>& x) {
    for (T v : x.data())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace awnet
