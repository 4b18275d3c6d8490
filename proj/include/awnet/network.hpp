// The two encoder-decoder branches: a RAW model (4-channel packed Bayer
// input, one extra up-sampling stage, 6 output scales) and a demosaiced
// model (3-channel input, 5 scales). Both share the same skeleton: stem,
// four (gc-rdb, wavelet-down) encoder stages, gc-rdb + pyramid-pool
// bottleneck, then wavelet-up + gc-rdb decoder stages with an RGB head at
// the bottleneck and after every decoder stage, ordered small to large.
//
// Pyramid pooling sits in the bottleneck. Intermediate RGB heads are
// supervision taps only; they do not feed back into the decoder.
#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "awnet/blocks.hpp"

namespace awnet {

enum class Branch { raw, demosaiced };

inline const char* branch_name(Branch b) {
    return b == Branch::raw ? "raw" : "demosaiced";
}

struct ModelConfig {
    Branch branch = Branch::raw;
    std::size_t base_channels = 16;
    std::size_t growth_rate = 16;
    double gcb_bottleneck_ratio = 0.25;
    double negative_slope = 0.2;
    std::vector<std::size_t> pyramid_bins{1, 2, 3, 6};
    std::uint64_t seed = 0;

    std::size_t num_scales() const { return branch == Branch::raw ? 6 : 5; }
    std::size_t input_channels() const { return branch == Branch::raw ? 4 : 3; }

    void validate() const {
        if (base_channels < 4) shape_error("ModelConfig: base_channels must be >= 4");
        if (growth_rate < 1) shape_error("ModelConfig: growth_rate must be >= 1");
        if (pyramid_bins.empty()) shape_error("ModelConfig: pyramid_bins must be non-empty");
    }

    // Flat key=value blob, deterministic field order; used by checkpoints
    // and the CLI config loader.
    std::string to_kv() const {
        std::ostringstream os;
        os << "branch=" << branch_name(branch) << '\n';
        os << "base_channels=" << base_channels << '\n';
        os << "growth_rate=" << growth_rate << '\n';
        os << "gcb_bottleneck_ratio=" << format_double(gcb_bottleneck_ratio) << '\n';
        os << "negative_slope=" << format_double(negative_slope) << '\n';
        os << "pyramid_bins=";
        for (std::size_t i = 0; i < pyramid_bins.size(); ++i)
            os << (i ? "," : "") << pyramid_bins[i];
        os << '\n';
        os << "seed=" << seed << '\n';
        return os.str();
    }

    static ModelConfig from_kv(const std::string& blob) {
        ModelConfig cfg;
        std::istringstream is(blob);
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                shape_error("ModelConfig: malformed line '" + line + "'");
            const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
            if (key == "branch") {
                if (val == "raw")
                    cfg.branch = Branch::raw;
                else if (val == "demosaiced")
                    cfg.branch = Branch::demosaiced;
                else
                    shape_error("ModelConfig: unknown branch '" + val + "'");
            } else if (key == "base_channels") {
                cfg.base_channels = std::stoull(val);
            } else if (key == "growth_rate") {
                cfg.growth_rate = std::stoull(val);
            } else if (key == "gcb_bottleneck_ratio") {
                cfg.gcb_bottleneck_ratio = std::stod(val);
            } else if (key == "negative_slope") {
                cfg.negative_slope = std::stod(val);
            } else if (key == "pyramid_bins") {
                cfg.pyramid_bins.clear();
                std::istringstream bs(val);
                std::string tok;
                while (std::getline(bs, tok, ',')) cfg.pyramid_bins.push_back(std::stoull(tok));
            } else if (key == "seed") {
                cfg.seed = std::stoull(val);
            } else {
                shape_error("ModelConfig: unknown key '" + key + "'");
            }
        }
        cfg.validate();
        return cfg;
    }

    static std::string format_double(double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    }
};

template <typename T>
struct MultiScaleOutput {
    std::vector<Tensor<T>> outputs;  // small -> large; back() is full scale
};

template <typename T>
class AwNet {
  public:
    static constexpr std::size_t kEncoderStages = 4;

    AwNet() = default;

    explicit AwNet(const ModelConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        Rng rng(cfg.seed);
        BlockConfig bc;
        bc.in_channels = cfg.base_channels;
        bc.growth_rate = cfg.growth_rate;
        bc.gcb_bottleneck_ratio = cfg.gcb_bottleneck_ratio;
        bc.negative_slope = cfg.negative_slope;

        const std::size_t c = cfg.base_channels;
        stem_ = Conv2dLayer<T>(cfg.input_channels(), c, 3, 1, 1, rng);
        for (std::size_t i = 0; i < kEncoderStages; ++i) {
            enc_.emplace_back(bc, rng);
            down_.emplace_back(c, c, rng);
        }
        mid_ = GcRdb<T>(bc, rng);
        pyramid_ = PyramidPool<T>(c, cfg.pyramid_bins, rng);
        const std::size_t decoder_stages = cfg.num_scales() - 1;
        for (std::size_t j = 0; j < decoder_stages; ++j) {
            up_.emplace_back(c, c, c, rng);
            dec_.emplace_back(bc, rng);
        }
        for (std::size_t s = 0; s < cfg.num_scales(); ++s) {
            heads_.emplace_back(c, 3, 3, 1, 1, rng, 0.1);
            // predictions live in [0, 1]; start at mid-gray
            auto hb = heads_.back().bias.mutable_data();
            std::fill(hb.begin(), hb.end(), T(0.5));
        }
    }

    const ModelConfig& config() const { return cfg_; }

    // training=false additionally clamps the final scale to [0, 1].
    MultiScaleOutput<T> forward(const Tensor<T>& x, bool training) const {
        const auto d = detail::dims4(x, "forward");
        if (d.c != cfg_.input_channels())
            shape_error(std::string("forward: ") + branch_name(cfg_.branch) +
                        " branch expects " + std::to_string(cfg_.input_channels()) +
                        " channels, got " + shape_str(x.shape()));
        if (d.h % 16 != 0 || d.w % 16 != 0)
            shape_error("forward: spatial extents must be divisible by 16, got " +
                        shape_str(x.shape()));

        Tensor<T> s = stem_.forward(x);
        std::vector<SubbandSet<T>> skips;
        for (std::size_t i = 0; i < kEncoderStages; ++i) {
            s = enc_[i].forward(s);
            auto r = down_[i].forward(s);
            s = std::move(r.features);
            skips.push_back(std::move(r.skip));
        }
        s = mid_.forward(s);
        s = pyramid_.forward(s);

        MultiScaleOutput<T> out;
        out.outputs.push_back(heads_[0].forward(s));
        for (std::size_t j = 0; j < up_.size(); ++j) {
            if (j < kEncoderStages)
                s = up_[j].forward(s, skips[kEncoderStages - 1 - j]);
            else
                s = up_[j].forward_no_skip(s);
            s = dec_[j].forward(s);
            out.outputs.push_back(heads_[j + 1].forward(s));
        }
        if (!training) out.outputs.back() = clamp01(out.outputs.back());
        return out;
    }

    // Final-scale convenience used by inference and evaluation.
    Tensor<T> predict(const Tensor<T>& x) const {
        NoGradGuard guard;
        return forward(x, /*training=*/false).outputs.back();
    }

    void register_params(ParameterRegistry<T>& reg) {
        stem_.register_params("stem", reg);
        for (std::size_t i = 0; i < enc_.size(); ++i) {
            enc_[i].register_params("enc" + std::to_string(i) + ".gcrdb", reg);
            down_[i].register_params("enc" + std::to_string(i) + ".down", reg);
        }
        mid_.register_params("mid.gcrdb", reg);
        pyramid_.register_params("mid.pyramid", reg);
        for (std::size_t j = 0; j < up_.size(); ++j) {
            up_[j].register_params("dec" + std::to_string(j) + ".up", reg);
            dec_[j].register_params("dec" + std::to_string(j) + ".gcrdb", reg);
        }
        for (std::size_t s = 0; s < heads_.size(); ++s)
            heads_[s].register_params("head" + std::to_string(s), reg);
    }

    std::size_t num_parameters() {
        ParameterRegistry<T> reg;
        register_params(reg);
        std::size_t n = 0;
        for (auto& [name, t] : reg) n += t.numel();
        return n;
    }

  private:
    ModelConfig cfg_;
    Conv2dLayer<T> stem_;
    std::vector<GcRdb<T>> enc_;
    std::vector<WaveletDown<T>> down_;
    GcRdb<T> mid_;
    PyramidPool<T> pyramid_;
    std::vector<WaveletUp<T>> up_;
    std::vector<GcRdb<T>> dec_;
    std::vector<Conv2dLayer<T>> heads_;
};

template <typename T>
MultiScaleOutput<T> forward_raw(const AwNet<T>& model, const Tensor<T>& x,
                                bool training = true) {
    if (model.config().branch != Branch::raw)
        shape_error("forward_raw: model is not the raw branch");
    return model.forward(x, training);
}

template <typename T>
MultiScaleOutput<T> forward_demosaiced(const AwNet<T>& model, const Tensor<T>& x,
                                       bool training = true) {
    if (model.config().branch != Branch::demosaiced)
        shape_error("forward_demosaiced: model is not the demosaiced branch");
    return model.forward(x, training);
}

// Two-branch fusion: elementwise mean of same-shape predictions.
template <typename T>
Tensor<T> average_predictions(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        shape_error("average_predictions: shapes " + shape_str(a.shape()) + " and " +
                    shape_str(b.shape()) + " differ");
    return scalar_mul(add(a, b), T(0.5));
}

}  // namespace awnet
