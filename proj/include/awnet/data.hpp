// Bayer data handling: packing/unpacking, bilinear demosaicing, synthetic
// pair generation, flip augmentation, and the on-disk dataset layout.
//
// Site layout (pinned): RGGB with the 2x2 cell
//     row 0:  R  G1
//     row 1:  G2 B
// pack_bayer orders channels (R, G1, B, G2) at half resolution.
//
// Flips. Augmentation flips every half-resolution plane and swaps the two
// green planes, which keeps each channel's data on its own color and the
// greens on physically consistent diagonal sites. Relative to a sample-level
// mosaic flip (which turns RGGB into GRBG / GBRG), the packed planes relabel
// as follows; both relations are exercised in the tests:
//   reassembled-plane flip:  (R, G1, B, G2) -> (R_f, G2_f, B_f, G1_f)
//   sample-level hflip:      (R, G1, B, G2) -> (G1_f, R_f, G2_f, B_f)
//   sample-level vflip:      (R, G1, B, G2) -> (G2_f, B_f, G1_f, R_f)
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "awnet/image_io.hpp"
#include "awnet/tensor.hpp"

namespace awnet {

template <typename T>
struct SamplePair {
    Tensor<T> raw4;         // {4, H/2, W/2} in [0, 1]
    Tensor<T> demosaiced3;  // {3, H, W} in [0, 1]
    Tensor<T> target3;      // {3, H, W} in [0, 1]
    std::string id;

    void validate() const {
        if (raw4.dim() != 3 || raw4.extent(0) != 4)
            shape_error("SamplePair: raw4 must be {4, h, w}, got " + shape_str(raw4.shape()));
        if (target3.dim() != 3 || target3.extent(0) != 3)
            shape_error("SamplePair: target3 must be {3, H, W}");
        if (demosaiced3.shape() != target3.shape())
            shape_error("SamplePair: demosaiced3/target3 shapes differ");
        if (raw4.extent(1) * 2 != target3.extent(1) || raw4.extent(2) * 2 != target3.extent(2))
            shape_error("SamplePair: raw extents must be exactly half the target extents");
    }
};

// ---------------------------------------------------------------------------
// Packing
// ---------------------------------------------------------------------------

// {H, W} mosaic -> {4, H/2, W/2} planes in channel order R, G1, B, G2.
template <typename T>
Tensor<T> pack_mosaic(const Tensor<T>& mosaic) {
    if (mosaic.dim() != 2) shape_error("pack_mosaic: expected {H, W} tensor");
    const std::size_t H = mosaic.extent(0), W = mosaic.extent(1);
    if (H % 2 != 0 || W % 2 != 0)
        shape_error("pack_mosaic: extents must be even, got " + shape_str(mosaic.shape()));
    const std::size_t h = H / 2, w = W / 2;
    auto m = mosaic.data();
    std::vector<T> out(4 * h * w);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            out[0 * h * w + i * w + j] = m[(2 * i) * W + 2 * j];          // R
            out[1 * h * w + i * w + j] = m[(2 * i) * W + 2 * j + 1];      // G1
            out[2 * h * w + i * w + j] = m[(2 * i + 1) * W + 2 * j + 1];  // B
            out[3 * h * w + i * w + j] = m[(2 * i + 1) * W + 2 * j];      // G2
        }
    return Tensor<T>::from_vector({4, h, w}, std::move(out));
}

template <typename T>
Tensor<T> unpack_mosaic(const Tensor<T>& raw4) {
    if (raw4.dim() != 3 || raw4.extent(0) != 4)
        shape_error("unpack_mosaic: expected {4, h, w} tensor");
    const std::size_t h = raw4.extent(1), w = raw4.extent(2);
    auto p = raw4.data();
    std::vector<T> out(4 * h * w);
    const std::size_t W = 2 * w;
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            out[(2 * i) * W + 2 * j] = p[0 * h * w + i * w + j];
            out[(2 * i) * W + 2 * j + 1] = p[1 * h * w + i * w + j];
            out[(2 * i + 1) * W + 2 * j + 1] = p[2 * h * w + i * w + j];
            out[(2 * i + 1) * W + 2 * j] = p[3 * h * w + i * w + j];
        }
    return Tensor<T>::from_vector({2 * h, 2 * w}, std::move(out));
}

template <typename T>
Tensor<T> mosaic_tensor(const BayerImage& img, bool normalize = true) {
    img.validate();
    const T scale = normalize ? T(1) / static_cast<T>(img.max_value()) : T(1);
    std::vector<T> v(img.mosaic.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(img.mosaic[i]) * scale;
    return Tensor<T>::from_vector({img.height, img.width}, std::move(v));
}

// Lossless rearrangement of the Bayer sites into 4 half-resolution planes.
template <typename T>
Tensor<T> pack_bayer(const BayerImage& img, bool normalize = true) {
    return pack_mosaic(mosaic_tensor<T>(img, normalize));
}

inline BayerImage to_bayer_image(const Tensor<float>& mosaic01, unsigned bit_depth) {
    if (mosaic01.dim() != 2) shape_error("to_bayer_image: expected {H, W} tensor");
    BayerImage img;
    img.height = mosaic01.extent(0);
    img.width = mosaic01.extent(1);
    img.bit_depth = bit_depth;
    img.mosaic.resize(img.height * img.width);
    const float maxval = static_cast<float>(img.max_value());
    auto m = mosaic01.data();
    for (std::size_t i = 0; i < img.mosaic.size(); ++i) {
        const float v = std::min(1.0f, std::max(0.0f, m[i]));
        img.mosaic[i] = static_cast<std::uint16_t>(std::floor(v * maxval + 0.5f));
    }
    return img;
}

// ---------------------------------------------------------------------------
// Demosaicing
// ---------------------------------------------------------------------------

namespace detail_bayer {

// 0 = R, 1 = G1, 2 = B, 3 = G2 for mosaic position (i, j)
inline int site_class(std::size_t i, std::size_t j) {
    if (i % 2 == 0) return j % 2 == 0 ? 0 : 1;
    return j % 2 == 0 ? 3 : 2;
}

}  // namespace detail_bayer

// Per-channel bilinear interpolation via mask-normalized 3x3 kernels;
// sampled sites pass through exactly, borders renormalize over the
// neighbors that exist.
template <typename T>
Tensor<T> demosaic_bilinear(const Tensor<T>& mosaic) {
    if (mosaic.dim() != 2) shape_error("demosaic_bilinear: expected {H, W} tensor");
    const std::size_t H = mosaic.extent(0), W = mosaic.extent(1);
    if (H % 2 != 0 || W % 2 != 0)
        shape_error("demosaic_bilinear: extents must be even");
    auto m = mosaic.data();

    // cross kernel for the green checkerboard, full kernel for R/B
    static constexpr double kCross[3][3] = {{0, 1, 0}, {1, 4, 1}, {0, 1, 0}};
    static constexpr double kFull[3][3] = {{1, 2, 1}, {2, 4, 2}, {1, 2, 1}};

    std::vector<T> out(3 * H * W);
    for (int channel = 0; channel < 3; ++channel) {
        const auto is_site = [channel](std::size_t i, std::size_t j) {
            const int s = detail_bayer::site_class(i, j);
            if (channel == 0) return s == 0;
            if (channel == 1) return s == 1 || s == 3;
            return s == 2;
        };
        const auto& k = (channel == 1) ? kCross : kFull;
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) {
                double num = 0.0, den = 0.0;
                for (int di = -1; di <= 1; ++di)
                    for (int dj = -1; dj <= 1; ++dj) {
                        const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i) + di;
                        const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j) + dj;
                        if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(H) ||
                            jj >= static_cast<std::ptrdiff_t>(W))
                            continue;
                        if (!is_site(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj)))
                            continue;
                        const double wgt = k[di + 1][dj + 1];
                        num += wgt * static_cast<double>(m[ii * W + jj]);
                        den += wgt;
                    }
                out[(channel * H + i) * W + j] = static_cast<T>(num / den);
            }
    }
    return Tensor<T>::from_vector({3, H, W}, std::move(out));
}

template <typename T>
Tensor<T> demosaic_bilinear(const BayerImage& img) {
    return demosaic_bilinear(mosaic_tensor<T>(img));
}

// ---------------------------------------------------------------------------
// Synthetic pair generation
// ---------------------------------------------------------------------------

struct Degradation {
    double gamma = 2.2;  // display gamma removed before mosaicing
    std::array<double, 9> color_matrix{0.90, 0.08, 0.02,   // row-major 3x3
                                       0.05, 0.90, 0.05,
                                       0.02, 0.08, 0.90};
    double noise_sigma = 0.01;
    // Optional capture misalignment: the sensor view is translated against
    // the target by up to this many pixels per axis (clamped sampling).
    std::size_t max_shift = 0;

    double det() const {
        const auto& a = color_matrix;
        return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
               a[2] * (a[3] * a[7] - a[4] * a[6]);
    }
};

// Simulates a sensor capture of a clean RGB target: linearize (inverse
// gamma), mix through the color matrix, sample the RGGB mosaic, add seeded
// Gaussian noise, clip to [0, 1]. The pair holds the packed mosaic, its
// bilinear demosaic and the untouched target. Pure function of
// (rgb, seed, degradation).
inline SamplePair<float> synthesize_pair(const Tensor<float>& rgb, std::uint64_t seed,
                                         const Degradation& deg = {}, std::string id = "") {
    if (rgb.dim() != 3 || rgb.extent(0) != 3)
        shape_error("synthesize_pair: expected {3, H, W} rgb input");
    const std::size_t H = rgb.extent(1), W = rgb.extent(2);
    if (H % 2 != 0 || W % 2 != 0) shape_error("synthesize_pair: extents must be even");
    if (std::abs(deg.det()) < 1e-8)
        shape_error("synthesize_pair: color matrix is not invertible");

    auto v = rgb.data();
    Rng rng(seed);
    std::ptrdiff_t shift_y = 0, shift_x = 0;
    if (deg.max_shift > 0) {
        std::uniform_int_distribution<std::ptrdiff_t> s(
            -static_cast<std::ptrdiff_t>(deg.max_shift),
            static_cast<std::ptrdiff_t>(deg.max_shift));
        shift_y = s(rng);
        shift_x = s(rng);
    }
    std::normal_distribution<float> noise(0.0f, static_cast<float>(deg.noise_sigma));
    std::vector<float> mosaic(H * W);
    for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
            const std::size_t si = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(
                static_cast<std::ptrdiff_t>(i) + shift_y, 0,
                static_cast<std::ptrdiff_t>(H) - 1));
            const std::size_t sj = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(
                static_cast<std::ptrdiff_t>(j) + shift_x, 0,
                static_cast<std::ptrdiff_t>(W) - 1));
            double lin[3];
            for (int c = 0; c < 3; ++c) {
                const double x = std::clamp<double>(v[(c * H + si) * W + sj], 0.0, 1.0);
                lin[c] = std::pow(x, deg.gamma);
            }
            double mixed[3];
            for (int r = 0; r < 3; ++r)
                mixed[r] = deg.color_matrix[r * 3 + 0] * lin[0] +
                           deg.color_matrix[r * 3 + 1] * lin[1] +
                           deg.color_matrix[r * 3 + 2] * lin[2];
            const int site = detail_bayer::site_class(i, j);
            const int src = (site == 0) ? 0 : (site == 2 ? 2 : 1);
            float s = static_cast<float>(mixed[src]);
            if (deg.noise_sigma > 0.0) s += noise(rng);
            mosaic[i * W + j] = std::min(1.0f, std::max(0.0f, s));
        }

    SamplePair<float> pair;
    auto m = Tensor<float>::from_vector({H, W}, std::move(mosaic));
    pair.raw4 = pack_mosaic(m);
    pair.demosaiced3 = demosaic_bilinear(m);
    pair.target3 = rgb.detach();
    pair.id = std::move(id);
    pair.validate();
    return pair;
}

// Smooth procedural RGB content for the synthetic dataset: per-channel
// gradients, a low-frequency sinusoid and a few soft-edged blobs.
inline Tensor<float> procedural_rgb(std::size_t h, std::size_t w, Rng& rng) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<float> img(3 * h * w);
    for (int c = 0; c < 3; ++c) {
        const float base = 0.25f + 0.5f * u(rng);
        const float gx = (u(rng) - 0.5f) * 0.6f, gy = (u(rng) - 0.5f) * 0.6f;
        const float fx = 1.0f + 2.0f * u(rng), fy = 1.0f + 2.0f * u(rng);
        const float amp = 0.1f * u(rng);
        const float phase = 6.283185f * u(rng);
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                const float yi = static_cast<float>(i) / static_cast<float>(h);
                const float xj = static_cast<float>(j) / static_cast<float>(w);
                img[(c * h + i) * w + j] =
                    base + gx * (xj - 0.5f) + gy * (yi - 0.5f) +
                    amp * std::sin(6.283185f * (fx * xj + fy * yi) + phase);
            }
    }
    const int blobs = 2 + static_cast<int>(u(rng) * 3.0f);
    for (int b = 0; b < blobs; ++b) {
        const float cy = u(rng), cx = u(rng);
        const float radius = 0.05f + 0.2f * u(rng);
        float color[3] = {u(rng), u(rng), u(rng)};
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                const float dy = static_cast<float>(i) / h - cy;
                const float dx = static_cast<float>(j) / w - cx;
                const float d2 = (dx * dx + dy * dy) / (radius * radius);
                if (d2 >= 1.0f) continue;
                const float alpha = 0.7f * (1.0f - d2) * (1.0f - d2);
                for (int c = 0; c < 3; ++c) {
                    float& px = img[(c * h + i) * w + j];
                    px = (1.0f - alpha) * px + alpha * color[c];
                }
            }
    }
    for (auto& v : img) v = std::min(0.98f, std::max(0.02f, v));
    return Tensor<float>::from_vector({3, h, w}, std::move(img));
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

enum class FlipOp { none, hflip, vflip };

namespace detail_bayer {

template <typename T>
Tensor<T> flip_planes(const Tensor<T>& chw, FlipOp op) {
    if (op == FlipOp::none) return chw.detach();
    const std::size_t C = chw.extent(0), H = chw.extent(1), W = chw.extent(2);
    auto v = chw.data();
    std::vector<T> out(v.size());
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) {
                const std::size_t si = (op == FlipOp::vflip) ? H - 1 - i : i;
                const std::size_t sj = (op == FlipOp::hflip) ? W - 1 - j : j;
                out[(c * H + i) * W + j] = v[(c * H + si) * W + sj];
            }
    return Tensor<T>::from_vector(chw.shape(), std::move(out));
}

template <typename T>
Tensor<T> swap_greens(const Tensor<T>& raw4) {
    const std::size_t hw = raw4.extent(1) * raw4.extent(2);
    std::vector<T> out(raw4.data().begin(), raw4.data().end());
    std::swap_ranges(out.begin() + 1 * hw, out.begin() + 2 * hw, out.begin() + 3 * hw);
    return Tensor<T>::from_vector(raw4.shape(), std::move(out));
}

}  // namespace detail_bayer

// Applies the same geometric flip to all three tensors; raw planes are
// flipped plane-wise with the G1/G2 swap described in the header comment.
template <typename T>
SamplePair<T> augment(const SamplePair<T>& pair, FlipOp op) {
    SamplePair<T> out;
    out.id = pair.id;
    out.demosaiced3 = detail_bayer::flip_planes(pair.demosaiced3, op);
    out.target3 = detail_bayer::flip_planes(pair.target3, op);
    Tensor<T> raw = detail_bayer::flip_planes(pair.raw4, op);
    out.raw4 = (op == FlipOp::none) ? raw : detail_bayer::swap_greens(raw);
    return out;
}

// ---------------------------------------------------------------------------
// Dataset loading
// ---------------------------------------------------------------------------

// Layout: <dir>/<split>/{raw,demosaiced,target}/<id>.{praw,png}. Pairs are
// matched by id and returned in sorted-id order; any orphaned file is an
// error that names the ids.
inline std::vector<SamplePair<float>> load_dataset(const std::string& dir,
                                                   const std::string& split) {
    namespace fs = std::filesystem;
    const fs::path base = fs::path(dir) / split;
    auto list_ids = [&](const char* sub, const char* ext) {
        std::vector<std::string> ids;
        const fs::path p = base / sub;
        if (!fs::exists(p)) return ids;
        for (const auto& entry : fs::directory_iterator(p))
            if (entry.is_regular_file() && entry.path().extension() == ext)
                ids.push_back(entry.path().stem().string());
        std::sort(ids.begin(), ids.end());
        return ids;
    };
    const auto raw_ids = list_ids("raw", ".praw");
    const auto dem_ids = list_ids("demosaiced", ".png");
    const auto tgt_ids = list_ids("target", ".png");
    if (raw_ids != dem_ids || raw_ids != tgt_ids) {
        std::string msg = "load_dataset: orphaned files in " + base.string() + ":";
        auto report = [&](const char* what, const std::vector<std::string>& have,
                          const std::vector<std::string>& a,
                          const std::vector<std::string>& b) {
            for (const auto& id : have)
                if (!std::binary_search(a.begin(), a.end(), id) ||
                    !std::binary_search(b.begin(), b.end(), id))
                    msg += std::string(" ") + what + "/" + id;
        };
        report("raw", raw_ids, dem_ids, tgt_ids);
        report("demosaiced", dem_ids, raw_ids, tgt_ids);
        report("target", tgt_ids, raw_ids, dem_ids);
        shape_error(msg);
    }

    std::vector<SamplePair<float>> pairs;
    for (const auto& id : raw_ids) {
        SamplePair<float> pair;
        pair.id = id;
        pair.raw4 = pack_bayer<float>(io::read_praw((base / "raw" / (id + ".praw")).string()));
        pair.demosaiced3 = io::read_png_rgb((base / "demosaiced" / (id + ".png")).string());
        pair.target3 = io::read_png_rgb((base / "target" / (id + ".png")).string());
        pair.validate();
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

}  // namespace awnet
