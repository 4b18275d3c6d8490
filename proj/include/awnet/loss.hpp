// Losses and image-quality metrics: Charbonnier, perceptual (feature-space
// MSE), single-scale SSIM, the per-scale supervision schedule, and PSNR.
//
// The perceptual feature extractor is pluggable. The paper-faithful choice is
// a pretrained classification network; those weights are an external asset
// this repository cannot vendor, so the default is a FIXED random strided
// convolution stack (seed 0, frozen). Externally trained weights can be
// supplied via FeatureExtractor::from_file to restore the original setup.
#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "awnet/network.hpp"
#include "awnet/ops.hpp"
#include "awnet/serialize.hpp"

namespace awnet {

struct CharbonnierParams {
    double epsilon = 1e-3;
};

// mean over all elements of sqrt((pred - target)^2 + eps^2)
template <typename T>
Tensor<T> charbonnier(const Tensor<T>& pred, const Tensor<T>& target,
                      CharbonnierParams params = {}) {
    if (pred.shape() != target.shape())
        shape_error("charbonnier: shapes " + shape_str(pred.shape()) + " and " +
                    shape_str(target.shape()) + " differ");
    if (params.epsilon <= 0.0) shape_error("charbonnier: epsilon must be positive");
    const T eps2 = static_cast<T>(params.epsilon * params.epsilon);
    Tensor<T> diff = sub(pred, target);
    return mean_all(sqrt_elem(scalar_add(mul(diff, diff), eps2)));
}

// Fixed (non-trainable) convolutional feature map for the perceptual loss.
template <typename T>
class FeatureExtractor {
  public:
    FeatureExtractor() = default;

    static FeatureExtractor builtin(std::uint64_t seed = 0) {
        FeatureExtractor fx;
        Rng rng(seed);
        const std::size_t widths[] = {3, 16, 32, 64};
        for (std::size_t i = 0; i + 1 < std::size(widths); ++i)
            fx.layers_.emplace_back(widths[i], widths[i + 1], 3, 2, 1, rng);
        fx.freeze();
        fx.provenance_ = "builtin-random(seed=" + std::to_string(seed) + ")";
        return fx;
    }

    // Loads named records conv0.weight / conv0.bias / conv1... from a weight
    // file (same record codec as checkpoints, magic AWFX). Layer depth is
    // whatever the file provides; strides are fixed at 2.
    static FeatureExtractor from_file(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw io::SerializationError("feature extractor: cannot open " + path);
        io::expect_magic(is, "AWFX", "feature extractor");
        const std::uint32_t version = io::read_u32(is);
        if (version != 1)
            throw io::SerializationError("feature extractor: unsupported version " +
                                         std::to_string(version));
        auto records = io::read_records(is);
        FeatureExtractor fx;
        for (std::size_t i = 0;; ++i) {
            const std::string w_name = "conv" + std::to_string(i) + ".weight";
            const std::string b_name = "conv" + std::to_string(i) + ".bias";
            const io::TensorRecord* w = nullptr;
            const io::TensorRecord* b = nullptr;
            for (const auto& r : records) {
                if (r.name == w_name) w = &r;
                if (r.name == b_name) b = &r;
            }
            if (!w) break;
            if (!b) throw io::SerializationError("feature extractor: missing " + b_name);
            Conv2dLayer<T> layer;
            layer.weight =
                Tensor<T>::from_vector(w->shape, std::vector<T>(w->data.begin(), w->data.end()));
            layer.bias =
                Tensor<T>::from_vector(b->shape, std::vector<T>(b->data.begin(), b->data.end()));
            layer.stride = 2;
            layer.padding = 1;
            fx.layers_.push_back(std::move(layer));
        }
        if (fx.layers_.empty())
            throw io::SerializationError("feature extractor: no conv records in " + path);
        if (fx.layers_.front().weight.extent(1) != 3)
            throw io::SerializationError("feature extractor: first layer must take 3 channels");
        fx.provenance_ = "external-weights(" + path + ")";
        return fx;
    }

    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw io::SerializationError("feature extractor: cannot write " + path);
        os.write("AWFX", 4);
        io::write_u32(os, 1);
        std::vector<io::TensorRecord> records;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            records.push_back(io::to_record("conv" + std::to_string(i) + ".weight",
                                            layers_[i].weight));
            records.push_back(
                io::to_record("conv" + std::to_string(i) + ".bias", layers_[i].bias));
        }
        io::write_records(os, records);
    }

    Tensor<T> features(const Tensor<T>& img) const {
        if (layers_.empty()) shape_error("feature extractor: not initialized");
        if (img.dim() != 4 || img.extent(1) != 3)
            shape_error("feature extractor: expects Nx3xHxW, got " + shape_str(img.shape()));
        Tensor<T> f = img;
        for (const auto& layer : layers_) f = relu(layer.forward(f));
        return f;
    }

    const std::string& provenance() const { return provenance_; }

  private:
    void freeze() {
        for (auto& layer : layers_) {
            layer.weight.set_requires_grad(false);
            layer.bias.set_requires_grad(false);
        }
    }

    std::vector<Conv2dLayer<T>> layers_;
    std::string provenance_;
};

// Feature-space MSE between prediction and target.
template <typename T>
Tensor<T> perceptual(const Tensor<T>& pred, const Tensor<T>& target,
                     const FeatureExtractor<T>& fx) {
    if (pred.shape() != target.shape())
        shape_error("perceptual: shapes " + shape_str(pred.shape()) + " and " +
                    shape_str(target.shape()) + " differ");
    Tensor<T> diff = sub(fx.features(pred), fx.features(target));
    return mean_all(mul(diff, diff));
}

namespace detail {

template <typename T>
Tensor<T> gaussian_window(std::size_t size, double sigma) {
    std::vector<double> k(size);
    const double c = (static_cast<double>(size) - 1.0) / 2.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < size; ++i) {
        k[i] = std::exp(-(static_cast<double>(i) - c) * (static_cast<double>(i) - c) /
                        (2.0 * sigma * sigma));
        sum += k[i];
    }
    std::vector<T> w(size * size);
    for (std::size_t i = 0; i < size; ++i)
        for (std::size_t j = 0; j < size; ++j)
            w[i * size + j] = static_cast<T>((k[i] / sum) * (k[j] / sum));
    return Tensor<T>::from_vector({1, 1, size, size}, std::move(w));
}

}  // namespace detail

// Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
// K2 = 0.03, dynamic range 1.0. Valid windows only, averaged over batch,
// channels and positions. Differentiable.
template <typename T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b) {
    constexpr std::size_t kWindow = 11;
    if (a.shape() != b.shape())
        shape_error("ssim: shapes " + shape_str(a.shape()) + " and " +
                    shape_str(b.shape()) + " differ");
    const auto d = detail::dims4(a, "ssim");
    if (d.h < kWindow || d.w < kWindow)
        shape_error("ssim: image " + shape_str(a.shape()) + " smaller than the " +
                    std::to_string(kWindow) + "x" + std::to_string(kWindow) + " window");
    const Tensor<T> win = detail::gaussian_window<T>(kWindow, 1.5);
    const T c1 = static_cast<T>(0.01 * 0.01);
    const T c2 = static_cast<T>(0.03 * 0.03);

    Tensor<T> acc = Tensor<T>::scalar(T(0));
    for (std::size_t c = 0; c < d.c; ++c) {
        Tensor<T> x = slice_channels(a, c, 1);
        Tensor<T> y = slice_channels(b, c, 1);
        Tensor<T> mu_x = conv2d(x, win);
        Tensor<T> mu_y = conv2d(y, win);
        Tensor<T> var_x = sub(conv2d(mul(x, x), win), mul(mu_x, mu_x));
        Tensor<T> var_y = sub(conv2d(mul(y, y), win), mul(mu_y, mu_y));
        Tensor<T> cov = sub(conv2d(mul(x, y), win), mul(mu_x, mu_y));
        Tensor<T> num = mul(scalar_add(scalar_mul(mul(mu_x, mu_y), T(2)), c1),
                            scalar_add(scalar_mul(cov, T(2)), c2));
        Tensor<T> den = mul(scalar_add(add(mul(mu_x, mu_x), mul(mu_y, mu_y)), c1),
                            scalar_add(add(var_x, var_y), c2));
        acc = add(acc, mean_all(div(num, den)));
    }
    return scalar_mul(acc, T(1) / static_cast<T>(d.c));
}

template <typename T>
Tensor<T> ssim_loss(const Tensor<T>& a, const Tensor<T>& b) {
    return scalar_add(scalar_mul(ssim(a, b), T(-1)), T(1));
}

// Peak signal-to-noise ratio in dB; accumulates the MSE in double. A zero
// MSE reports the +infinity sentinel.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
    if (a.shape() != b.shape())
        shape_error("psnr: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                    " differ");
    double mse = 0.0;
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(av.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse / (peak * peak));
}

struct MultiScaleLossConfig {
    CharbonnierParams charbonnier_params{};
    double perceptual_weight = 0.25;
    double ssim_weight = 0.05;
};

// Per-scale losses and their sum. components_* hold the final-scale pieces.
template <typename T>
struct LossReport {
    std::vector<Tensor<T>> per_scale;  // scale 1..k, small -> large
    Tensor<T> total;
    Tensor<T> final_char, final_perceptual, final_ssim;
};

// Supervision schedule over the k = 5 or 6 scales (1-based, small to large):
//   scales 1-2: Charbonnier only
//   scales 3-4: Charbonnier + 0.25 * perceptual
//   scales 5+ : Charbonnier + 0.25 * perceptual + 0.05 * (1 - SSIM)
// The target is area-averaged down to each scale.
template <typename T>
LossReport<T> multi_scale_loss(const MultiScaleOutput<T>& outs, const Tensor<T>& target,
                               const FeatureExtractor<T>& fx,
                               const MultiScaleLossConfig& cfg = {}) {
    const std::size_t k = outs.outputs.size();
    if (k != 5 && k != 6)
        shape_error("multi_scale_loss: expected 5 or 6 scales, got " + std::to_string(k));
    const auto dt = detail::dims4(target, "multi_scale_loss");
    const auto& top = outs.outputs.back();
    if (top.extent(2) != dt.h || top.extent(3) != dt.w || top.extent(0) != dt.n ||
        dt.c != 3)
        shape_error("multi_scale_loss: target " + shape_str(target.shape()) +
                    " does not match the largest output " + shape_str(top.shape()));

    LossReport<T> report;
    Tensor<T> total = Tensor<T>::scalar(T(0));
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t scale = i + 1;
        const auto& pred = outs.outputs[i];
        Tensor<T> scaled_target =
            (pred.extent(2) == dt.h && pred.extent(3) == dt.w)
                ? target
                : adaptive_avg_pool(target, pred.extent(2), pred.extent(3));
        Tensor<T> l_char = charbonnier(pred, scaled_target, cfg.charbonnier_params);
        Tensor<T> l_scale = l_char;
        Tensor<T> l_perc, l_ssim;
        if (scale >= 3) {
            l_perc = perceptual(pred, scaled_target, fx);
            l_scale = add(l_scale, scalar_mul(l_perc, static_cast<T>(cfg.perceptual_weight)));
        }
        if (scale >= 5) {
            l_ssim = ssim_loss(pred, scaled_target);
            l_scale = add(l_scale, scalar_mul(l_ssim, static_cast<T>(cfg.ssim_weight)));
        }
        if (i + 1 == k) {
            report.final_char = l_char;
            report.final_perceptual = l_perc;
            report.final_ssim = l_ssim;
        }
        report.per_scale.push_back(l_scale);
        total = add(total, l_scale);
    }
    report.total = std::move(total);
    return report;
}

}  // namespace awnet
