// Building blocks: residual dense block, global context block, their
// composite, residual wavelet down/up-sampling, pyramid pooling.
//
// Width notes. The down block's learned branch convolves the block INPUT
// (spatial domain), not the transform output; the low-frequency band joins it
// by concatenation and a 1x1 fusion. Skip subbands always carry the down
// block's input channel count; the up block reconciles its decoder width with
// a 1x1 convolution ahead of the inverse transform.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "awnet/ops.hpp"
#include "awnet/tensor.hpp"
#include "awnet/wavelet.hpp"

namespace awnet {

template <typename T>
class ParameterRegistry {
  public:
    void add(const std::string& name, Tensor<T> t) {
        for (const auto& [n, _] : items_)
            if (n == name) shape_error("ParameterRegistry: duplicate name '" + name + "'");
        items_.emplace_back(name, std::move(t));
    }

    Tensor<T>& find(const std::string& name) {
        for (auto& [n, t] : items_)
            if (n == name) return t;
        shape_error("ParameterRegistry: unknown parameter '" + name + "'");
    }

    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }
    std::size_t size() const { return items_.size(); }

  private:
    std::vector<std::pair<std::string, Tensor<T>>> items_;
};

struct BlockConfig {
    std::size_t in_channels = 16;
    std::size_t growth_rate = 16;
    double gcb_bottleneck_ratio = 0.25;  // GCNet default
    double negative_slope = 0.2;

    std::size_t bottleneck_channels() const {
        const auto b = static_cast<std::size_t>(
            std::lround(static_cast<double>(in_channels) * gcb_bottleneck_ratio));
        return b;
    }

    void validate() const {
        if (in_channels < 1 || growth_rate < 1)
            shape_error("BlockConfig: channel counts must be >= 1");
        if (gcb_bottleneck_ratio <= 0.0 || gcb_bottleneck_ratio > 1.0)
            shape_error("BlockConfig: bottleneck ratio must be in (0, 1]");
        if (bottleneck_channels() < 1)
            shape_error("BlockConfig: bottleneck collapses to zero channels");
    }
};

// Convolution layer: owns weight/bias parameters. Weights use fan-in-scaled
// uniform init with the leaky-ReLU gain (He), biases a plain 1/sqrt(fan_in).
template <typename T>
struct Conv2dLayer {
    Tensor<T> weight, bias;
    std::size_t stride = 1, padding = 0;

    Conv2dLayer() = default;
    // init_gain scales the weight bound; residual-closing convolutions use a
    // damped gain so stacked residual blocks start near the identity.
    Conv2dLayer(std::size_t in_c, std::size_t out_c, std::size_t k, std::size_t stride_,
                std::size_t padding_, Rng& rng, double init_gain = 1.0)
        : stride(stride_), padding(padding_) {
        const double fan_in = static_cast<double>(in_c * k * k);
        const T w_bound = static_cast<T>(init_gain * std::sqrt(6.0 / (1.0 + 0.2 * 0.2)) /
                                         std::sqrt(fan_in));
        weight = Tensor<T>::uniform({out_c, in_c, k, k}, -w_bound, w_bound, rng);
        weight.set_requires_grad(true);
        const T b_bound = static_cast<T>(1.0 / std::sqrt(fan_in));
        bias = Tensor<T>::uniform({out_c}, -b_bound, b_bound, rng);
        bias.set_requires_grad(true);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        return conv2d(x, weight, std::optional<Tensor<T>>(bias), stride, padding);
    }

    void register_params(const std::string& prefix, ParameterRegistry<T>& reg) {
        reg.add(prefix + ".weight", weight);
        reg.add(prefix + ".bias", bias);
    }
};

// Residual dense block: six 3x3 convolutions, each seeing the concatenation
// of the input and all previous outputs, a 1x1 fusion back to C, identity
// residual. Layer i consumes C + i * growth channels.
template <typename T>
struct Rdb {
    static constexpr std::size_t kDenseLayers = 6;
    std::vector<Conv2dLayer<T>> dense;
    Conv2dLayer<T> fuse;
    T slope = T(0.2);

    Rdb() = default;
    Rdb(const BlockConfig& cfg, Rng& rng) : slope(static_cast<T>(cfg.negative_slope)) {
        cfg.validate();
        const std::size_t c = cfg.in_channels, g = cfg.growth_rate;
        for (std::size_t i = 0; i < kDenseLayers; ++i)
            dense.emplace_back(c + i * g, g, 3, 1, 1, rng);
        fuse = Conv2dLayer<T>(c + kDenseLayers * g, c, 1, 1, 0, rng, 0.1);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.extent(1) != dense[0].weight.extent(1))
            shape_error("rdb: expected " + std::to_string(dense[0].weight.extent(1)) +
                        " channels, got " + shape_str(x.shape()));
        std::vector<Tensor<T>> feats{x};
        Tensor<T> cat = x;
        for (const auto& layer : dense) {
            feats.push_back(leaky_relu(layer.forward(cat), slope));
            cat = concat_channels(feats);
        }
        return add(fuse.forward(cat), x);
    }

    void register_params(const std::string& prefix, ParameterRegistry<T>& reg) {
        for (std::size_t i = 0; i < dense.size(); ++i)
            dense[i].register_params(prefix + ".dense" + std::to_string(i), reg);
        fuse.register_params(prefix + ".fuse", reg);
    }
};

// Global context block. Context: 1x1 conv to a single attention map,
// spatial softmax, attention-weighted sum over positions -> N x C x 1 x 1.
// Transform: 1x1 squeeze, LayerNorm over channels, ReLU, 1x1 expand.
// Fusion: broadcast add onto the input.
template <typename T>
struct Gcb {
    Conv2dLayer<T> attn, squeeze, expand;
    Tensor<T> ln_gain, ln_bias;

    Gcb() = default;
    Gcb(const BlockConfig& cfg, Rng& rng) {
        cfg.validate();
        const std::size_t c = cfg.in_channels;
        const std::size_t b = std::max<std::size_t>(2, cfg.bottleneck_channels());
        attn = Conv2dLayer<T>(c, 1, 1, 1, 0, rng);
        squeeze = Conv2dLayer<T>(c, b, 1, 1, 0, rng);
        expand = Conv2dLayer<T>(b, c, 1, 1, 0, rng, 0.1);
        ln_gain = Tensor<T>::full({b}, T(1));
        ln_gain.set_requires_grad(true);
        ln_bias = Tensor<T>::zeros({b});
        ln_bias.set_requires_grad(true);
    }

    Tensor<T> context(const Tensor<T>& x) const {
        return spatial_weighted_sum(x, softmax_spatial(attn.forward(x)));
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> t = squeeze.forward(context(x));
        t = relu(layer_norm_channels(t, ln_gain, ln_bias));
        return add(x, expand.forward(t));
    }

    void register_params(const std::string& prefix, ParameterRegistry<T>& reg) {
        attn.register_params(prefix + ".attn", reg);
        squeeze.register_params(prefix + ".squeeze", reg);
        expand.register_params(prefix + ".expand", reg);
        reg.add(prefix + ".ln.gain", ln_gain);
        reg.add(prefix + ".ln.bias", ln_bias);
    }
};

template <typename T>
struct GcRdb {
    Rdb<T> rdb;
    Gcb<T> gcb;

    GcRdb() = default;
    GcRdb(const BlockConfig& cfg, Rng& rng) : rdb(cfg, rng), gcb(cfg, rng) {}

    Tensor<T> forward(const Tensor<T>& x) const { return gcb.forward(rdb.forward(x)); }

    void register_params(const std::string& prefix, ParameterRegistry<T>& reg) {
        rdb.register_params(prefix + ".rdb", reg);
        gcb.register_params(prefix + ".gcb", reg);
    }
};

template <typename T>
struct WaveletDownResult {
    Tensor<T> features;       // N x out_c x H/2 x W/2
    SubbandSet<T> skip;       // detail bands, N x in_c x H/2 x W/2 each
};

// Down-sampling: frequency branch keeps the LL band, spatial branch is a
// stride-2 3x3 convolution of the input; both fuse through a 1x1 conv.
// The detail bands travel to the paired up block.
template <typename T>
struct WaveletDown {
    Conv2dLayer<T> spatial, fuse;

    WaveletDown() = default;
    // The LL band carries a DC gain of 4, so the fusion starts damped to keep
    // feature scales flat across stages.
    WaveletDown(std::size_t in_c, std::size_t out_c, Rng& rng)
        : spatial(in_c, out_c, 3, 2, 1, rng), fuse(in_c + out_c, out_c, 1, 1, 0, rng, 0.25) {}

    WaveletDownResult<T> forward(const Tensor<T>& x) const {
        SubbandSet<T> bands = dwt2(x);
        Tensor<T> y = fuse.forward(concat_channels<T>({bands.ll, spatial.forward(x)}));
        return {std::move(y), std::move(bands)};
    }

    void register_params(const std::string& prefix, ParameterRegistry<T>& reg) {
        spatial.register_params(prefix + ".spatial", reg);
        fuse.register_params(prefix + ".fuse", reg);
    }
};

// Up-sampling: a 1x1 conv reduces the decoder features to the skip width and
// acts as the LL band of the inverse transform with the encoder's detail
// bands; the spatial branch is conv + pixel shuffle. Fused back by 1x1 conv.
template <typename T>
struct WaveletUp {
    Conv2dLayer<T> pre, shuffle_conv, fuse;
    std::size_t skip_channels = 0;

    WaveletUp() = default;
    WaveletUp(std::size_t in_c, std::size_t skip_c, std::size_t out_c, Rng& rng)
        : pre(in_c, skip_c, 1, 1, 0, rng),
          shuffle_conv(in_c, 4 * skip_c, 3, 1, 1, rng),
          fuse(2 * skip_c, out_c, 1, 1, 0, rng, 0.7),
          skip_channels(skip_c) {}

    Tensor<T> forward(const Tensor<T>& x, const SubbandSet<T>& skip) const {
        if (skip.lh.extent(2) != x.extent(2) || skip.lh.extent(3) != x.extent(3) ||
            skip.lh.extent(1) != skip_channels)
            shape_error("wavelet_up: skip bands " + shape_str(skip.lh.shape()) +
                        " incompatible with features " + shape_str(x.shape()));
        SubbandSet<T> bands{pre.forward(x), skip.lh, skip.hl, skip.hh};
        Tensor<T> freq = idwt2(bands);
        Tensor<T> spat = pixel_shuffle(shuffle_conv.forward(x), 2);
        return fuse.forward(concat_channels<T>({freq, spat}));
    }

    // For decoder stages above the input resolution: zero detail bands.
    Tensor<T> forward_no_skip(const Tensor<T>& x) const {
        const Shape band_shape{x.extent(0), skip_channels, x.extent(2), x.extent(3)};
        SubbandSet<T> zero{Tensor<T>::zeros(band_shape), Tensor<T>::zeros(band_shape),
                           Tensor<T>::zeros(band_shape), Tensor<T>::zeros(band_shape)};
        return forward(x, zero);
    }

    void register_params(const std::string& prefix, ParameterRegistry<T>& reg) {
        pre.register_params(prefix + ".pre", reg);
        shuffle_conv.register_params(prefix + ".shuffle", reg);
        fuse.register_params(prefix + ".fuse", reg);
    }
};

// Pyramid pooling: per bin, adaptive-average-pool to bin x bin, 1x1 conv to
// C / #bins channels, nearest upsample back, concatenate with the input and
// fuse with a 3x3 conv.
template <typename T>
struct PyramidPool {
    std::vector<std::size_t> bins;
    std::vector<Conv2dLayer<T>> branch;
    Conv2dLayer<T> fuse;

    PyramidPool() = default;
    PyramidPool(std::size_t channels, std::vector<std::size_t> bins_, Rng& rng)
        : bins(std::move(bins_)) {
        if (bins.empty()) shape_error("pyramid_pool: needs at least one bin");
        const std::size_t bc = std::max<std::size_t>(1, channels / bins.size());
        for (std::size_t i = 0; i < bins.size(); ++i)
            branch.emplace_back(channels, bc, 1, 1, 0, rng);
        fuse = Conv2dLayer<T>(channels + bins.size() * bc, channels, 3, 1, 1, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        const auto d = detail::dims4(x, "pyramid_pool");
        for (std::size_t b : bins)
            if (b > d.h || b > d.w)
                shape_error("pyramid_pool: bin " + std::to_string(b) +
                            " exceeds input extent " + shape_str(x.shape()));
        std::vector<Tensor<T>> parts{x};
        for (std::size_t i = 0; i < bins.size(); ++i) {
            Tensor<T> p = adaptive_avg_pool(x, bins[i], bins[i]);
            p = branch[i].forward(p);
            parts.push_back(upsample_nearest(p, d.h, d.w));
        }
        return fuse.forward(concat_channels(parts));
    }

    void register_params(const std::string& prefix, ParameterRegistry<T>& reg) {
        for (std::size_t i = 0; i < branch.size(); ++i)
            branch[i].register_params(prefix + ".bin" + std::to_string(bins[i]), reg);
        fuse.register_params(prefix + ".fuse", reg);
    }
};

}  // namespace awnet
