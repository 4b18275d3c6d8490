// Single-level 2D Haar transform on NCHW tensors.
//
// Analysis filters are the unnormalized 2x2 Haar bank; f_LL is all-ones, so
// the LL band is the plain sum over each 2x2 block and one level of 2x2
// average pooling equals LL / 4. Synthesis carries the whole 1/4 scale, which
// makes dwt2 -> idwt2 an exact round trip.
//
// Index convention: formulas in the docs are written 1-based, x(2m-1, 2n-1)
// being the top-left sample of block (m, n). The code is 0-based: block (i, j)
// covers samples (2i + di, 2j + dj), di, dj in {0, 1}, i.e. m = i + 1,
// n = j + 1.
//
// Detail-filter signs (one valid orthogonal completion, pinned for tests):
//   f_LH = [[-1, -1], [ 1, 1]]   f_HL = [[-1, 1], [-1, 1]]   f_HH = [[ 1, -1], [-1, 1]]
//
// Odd extents are rejected; the surrounding network only produces even ones
// and implicit padding would break the lossless round trip.
#pragma once

#include <array>
#include <vector>

#include "awnet/ops.hpp"
#include "awnet/tensor.hpp"

namespace awnet {

struct WaveletFilterBank {
    // Row-major 2x2 taps, index [di * 2 + dj].
    static constexpr std::array<double, 4> f_ll{1.0, 1.0, 1.0, 1.0};
    static constexpr std::array<double, 4> f_lh{-1.0, -1.0, 1.0, 1.0};
    static constexpr std::array<double, 4> f_hl{-1.0, 1.0, -1.0, 1.0};
    static constexpr std::array<double, 4> f_hh{1.0, -1.0, -1.0, 1.0};

    static constexpr std::array<std::array<double, 4>, 4> all{f_ll, f_lh, f_hl, f_hh};
};

template <typename T>
struct SubbandSet {
    Tensor<T> ll, lh, hl, hh;
};

namespace detail {

template <typename T>
void require_even(const Dims4& d, const char* op) {
    if (d.h % 2 != 0 || d.w % 2 != 0)
        shape_error(std::string(op) + ": spatial extents must be even, got " +
                    std::to_string(d.h) + "x" + std::to_string(d.w));
}

}  // namespace detail

template <typename T>
SubbandSet<T> dwt2(const Tensor<T>& x) {
    const auto d = detail::dims4(x, "dwt2");
    detail::require_even<T>(d, "dwt2");
    const std::size_t oh = d.h / 2, ow = d.w / 2;
    const std::size_t planes = d.n * d.c;
    const auto& xv = x.node()->value;

    std::array<std::vector<T>, 4> bands;
    for (auto& b : bands) b.resize(planes * oh * ow);
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = xv.data() + p * d.h * d.w;
        const std::size_t base = p * oh * ow;
        for (std::size_t i = 0; i < oh; ++i) {
            const T* r0 = src + (2 * i) * d.w;
            const T* r1 = src + (2 * i + 1) * d.w;
            for (std::size_t j = 0; j < ow; ++j) {
                const T a = r0[2 * j], b = r0[2 * j + 1];
                const T c = r1[2 * j], e = r1[2 * j + 1];
                const std::size_t o = base + i * ow + j;
                bands[0][o] = a + b + c + e;    // LL
                bands[1][o] = -a - b + c + e;   // LH
                bands[2][o] = -a + b - c + e;   // HL
                bands[3][o] = a - b - c + e;    // HH
            }
        }
    }

    const Shape out_shape{d.n, d.c, oh, ow};
    SubbandSet<T> s{detail::make_tensor(out_shape, std::move(bands[0])),
                    detail::make_tensor(out_shape, std::move(bands[1])),
                    detail::make_tensor(out_shape, std::move(bands[2])),
                    detail::make_tensor(out_shape, std::move(bands[3]))};

    if (grad_enabled() && detail::wants_grad(x)) {
        auto xn = x.node();
        const auto dd = d;
        const Tensor<T>* outs[4] = {&s.ll, &s.lh, &s.hl, &s.hh};
        for (int b = 0; b < 4; ++b) {
            auto& o = *outs[b]->node();
            o.requires_grad = true;
            o.parents.push_back(xn);
            const auto& taps = WaveletFilterBank::all[static_cast<std::size_t>(b)];
            o.backward_fn = [xn, dd, oh, ow, taps](const std::vector<T>& g) {
                xn->ensure_grad();
                const std::size_t planes = dd.n * dd.c;
                for (std::size_t p = 0; p < planes; ++p) {
                    const T* gp = g.data() + p * oh * ow;
                    T* dst = xn->grad.data() + p * dd.h * dd.w;
                    for (std::size_t i = 0; i < oh; ++i)
                        for (std::size_t j = 0; j < ow; ++j) {
                            const T gv = gp[i * ow + j];
                            dst[(2 * i) * dd.w + 2 * j] += static_cast<T>(taps[0]) * gv;
                            dst[(2 * i) * dd.w + 2 * j + 1] += static_cast<T>(taps[1]) * gv;
                            dst[(2 * i + 1) * dd.w + 2 * j] += static_cast<T>(taps[2]) * gv;
                            dst[(2 * i + 1) * dd.w + 2 * j + 1] +=
                                static_cast<T>(taps[3]) * gv;
                        }
                }
            };
        }
    }
    return s;
}

template <typename T>
Tensor<T> idwt2(const SubbandSet<T>& s) {
    const auto d = detail::dims4(s.ll, "idwt2");
    for (const Tensor<T>* band : {&s.lh, &s.hl, &s.hh})
        if (band->shape() != s.ll.shape())
            shape_error("idwt2: subband shapes differ: " + shape_str(s.ll.shape()) + " vs " +
                        shape_str(band->shape()));
    const std::size_t H = d.h * 2, W = d.w * 2;
    const std::size_t planes = d.n * d.c;
    const T* ll = s.ll.data().data();
    const T* lh = s.lh.data().data();
    const T* hl = s.hl.data().data();
    const T* hh = s.hh.data().data();

    std::vector<T> out_vals(planes * H * W);
    constexpr T quarter = T(0.25);
    for (std::size_t p = 0; p < planes; ++p) {
        const std::size_t base = p * d.h * d.w;
        T* dst = out_vals.data() + p * H * W;
        for (std::size_t i = 0; i < d.h; ++i)
            for (std::size_t j = 0; j < d.w; ++j) {
                const std::size_t o = base + i * d.w + j;
                const T a = ll[o], b = lh[o], c = hl[o], e = hh[o];
                dst[(2 * i) * W + 2 * j] = quarter * (a - b - c + e);
                dst[(2 * i) * W + 2 * j + 1] = quarter * (a - b + c - e);
                dst[(2 * i + 1) * W + 2 * j] = quarter * (a + b - c - e);
                dst[(2 * i + 1) * W + 2 * j + 1] = quarter * (a + b + c + e);
            }
    }

    Tensor<T> out = detail::make_tensor({d.n, d.c, H, W}, std::move(out_vals));
    const bool need = grad_enabled() &&
                      (detail::wants_grad(s.ll) || detail::wants_grad(s.lh) ||
                       detail::wants_grad(s.hl) || detail::wants_grad(s.hh));
    if (need) {
        auto lln = s.ll.node();
        auto lhn = s.lh.node();
        auto hln = s.hl.node();
        auto hhn = s.hh.node();
        auto& o = *out.node();
        o.requires_grad = true;
        for (const auto& n : {lln, lhn, hln, hhn})
            if (n->requires_grad) o.parents.push_back(n);
        const auto dd = d;
        o.backward_fn = [lln, lhn, hln, hhn, dd, H, W](const std::vector<T>& g) {
            const std::size_t planes = dd.n * dd.c;
            std::array<typename Tensor<T>::NodePtr, 4> bands{lln, lhn, hln, hhn};
            for (std::size_t b = 0; b < 4; ++b) {
                if (!bands[b]->requires_grad) continue;
                bands[b]->ensure_grad();
                const auto& taps = WaveletFilterBank::all[b];
                for (std::size_t p = 0; p < planes; ++p) {
                    const T* gp = g.data() + p * H * W;
                    T* dst = bands[b]->grad.data() + p * dd.h * dd.w;
                    for (std::size_t i = 0; i < dd.h; ++i)
                        for (std::size_t j = 0; j < dd.w; ++j) {
                            const T g00 = gp[(2 * i) * W + 2 * j];
                            const T g01 = gp[(2 * i) * W + 2 * j + 1];
                            const T g10 = gp[(2 * i + 1) * W + 2 * j];
                            const T g11 = gp[(2 * i + 1) * W + 2 * j + 1];
                            dst[i * dd.w + j] += static_cast<T>(0.25) *
                                                 (static_cast<T>(taps[0]) * g00 +
                                                  static_cast<T>(taps[1]) * g01 +
                                                  static_cast<T>(taps[2]) * g10 +
                                                  static_cast<T>(taps[3]) * g11);
                        }
                }
            }
        };
    }
    return out;
}

// Returns (one level of 2x2 average pooling, LL / 4); the two sides must be
// elementwise equal. Both paths sum the same four samples in the same order,
// so the agreement is exact up to the final power-of-two scaling.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> avg_pool_equivalence_check(const Tensor<T>& x) {
    const auto d = detail::dims4(x, "avg_pool_equivalence_check");
    detail::require_even<T>(d, "avg_pool_equivalence_check");
    Tensor<T> pooled = adaptive_avg_pool(x, d.h / 2, d.w / 2);
    Tensor<T> ll_scaled = scalar_mul(dwt2(x).ll, T(0.25));
    return {pooled, ll_scaled};
}

}  // namespace awnet
