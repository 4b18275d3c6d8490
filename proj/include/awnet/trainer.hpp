// Adam optimization with the halving learning-rate schedule, the training
// loop, and versioned binary checkpoints (atomic write, bit-exact resume).
//
// Checkpoint layout (little-endian):
//   "AWCK" | u32 version | model-config blob (length-prefixed string)
//   | parameter records | u64 adam step count | adam m records | adam v records
//   | u64 epoch | rng state (length-prefixed string)
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "awnet/data.hpp"
#include "awnet/loss.hpp"
#include "awnet/network.hpp"
#include "awnet/serialize.hpp"

namespace awnet {

struct Schedule {
    double initial_lr = 1e-4;
    std::size_t halve_every = 10;  // epochs
    std::size_t total_epochs = 50;

    double lr_at(std::size_t epoch) const {
        return initial_lr * std::pow(0.5, static_cast<double>(epoch / halve_every));
    }
};

// Bias-corrected Adam. Moment buffers parallel the registry order.
template <typename T>
class Adam {
  public:
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void attach(ParameterRegistry<T>& reg) {
        m_.clear();
        v_.clear();
        for (auto& [name, p] : reg) {
            m_.emplace_back(p.numel(), T(0));
            v_.emplace_back(p.numel(), T(0));
        }
    }

    std::uint64_t step_count() const { return t_; }

    // Applies one update. Gradients must be populated for every parameter.
    // clip_norm bounds the global gradient norm (infinity = off).
    void step(ParameterRegistry<T>& reg, double lr,
              double clip_norm = std::numeric_limits<double>::infinity()) {
        if (m_.size() != reg.size()) shape_error("adam: optimizer not attached to this model");
        double scale = 1.0;
        if (std::isfinite(clip_norm)) {
            double norm2 = 0.0;
            for (auto& [name, p] : reg) {
                if (!p.has_grad()) shape_error("adam: missing gradient for '" + name + "'");
                for (T g : p.grad()) norm2 += static_cast<double>(g) * static_cast<double>(g);
            }
            const double norm = std::sqrt(norm2);
            if (norm > clip_norm) scale = clip_norm / norm;
        }
        ++t_;
        const double c1 = 1.0 / (1.0 - std::pow(beta1, static_cast<double>(t_)));
        const double c2 = 1.0 / (1.0 - std::pow(beta2, static_cast<double>(t_)));
        std::size_t slot = 0;
        for (auto& [name, p] : reg) {
            if (!p.has_grad()) shape_error("adam: missing gradient for '" + name + "'");
            auto values = p.mutable_data();
            auto grads = p.grad();
            auto& m = m_[slot];
            auto& v = v_[slot];
            for (std::size_t i = 0; i < values.size(); ++i) {
                const double g = static_cast<double>(grads[i]) * scale;
                m[i] = static_cast<T>(beta1 * m[i] + (1.0 - beta1) * g);
                v[i] = static_cast<T>(beta2 * v[i] + (1.0 - beta2) * g * g);
                const double mhat = static_cast<double>(m[i]) * c1;
                const double vhat = static_cast<double>(v[i]) * c2;
                values[i] = static_cast<T>(values[i] - lr * mhat / (std::sqrt(vhat) + eps));
            }
            ++slot;
        }
    }

    void zero_grad(ParameterRegistry<T>& reg) {
        for (auto& [name, p] : reg) p.zero_grad();
    }

    std::vector<std::vector<T>>& moments_m() { return m_; }
    std::vector<std::vector<T>>& moments_v() { return v_; }
    void set_step_count(std::uint64_t t) { t_ = t; }

  private:
    std::vector<std::vector<T>> m_, v_;
    std::uint64_t t_ = 0;
};

struct TrainOptions {
    std::size_t batch_size = 2;
    Schedule schedule{};
    double clip_norm = std::numeric_limits<double>::infinity();
    MultiScaleLossConfig loss{};
    std::uint64_t shuffle_seed = 1;
    std::uint64_t extractor_seed = 0;
    std::string extractor_weights;  // optional AWFX path replacing the builtin
};

struct IterationStat {
    std::size_t epoch = 0;
    std::size_t iteration = 0;  // global, 0-based
    double lr = 0.0;
    float total_loss = 0.0f;
    float final_charbonnier = 0.0f;
};

// Stacks CHW sample tensors into one NCHW batch.
template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items) {
    if (items.empty()) shape_error("stack_batch: empty batch");
    const Shape& s = items[0].shape();
    std::vector<T> out;
    out.reserve(items.size() * items[0].numel());
    for (const auto& t : items) {
        if (t.shape() != s) shape_error("stack_batch: mixed shapes in batch");
        out.insert(out.end(), t.data().begin(), t.data().end());
    }
    return Tensor<T>::from_vector({items.size(), s[0], s[1], s[2]}, std::move(out));
}

class Trainer {
  public:
    Trainer(const ModelConfig& cfg, const TrainOptions& opt)
        : model_(cfg), options_(opt), rng_(opt.shuffle_seed) {
        model_.register_params(registry_);
        adam_.attach(registry_);
        extractor_ = opt.extractor_weights.empty()
                         ? FeatureExtractor<float>::builtin(opt.extractor_seed)
                         : FeatureExtractor<float>::from_file(opt.extractor_weights);
    }

    AwNet<float>& model() { return model_; }
    ParameterRegistry<float>& registry() { return registry_; }
    const FeatureExtractor<float>& extractor() const { return extractor_; }
    std::size_t epoch() const { return epoch_; }
    const std::vector<IterationStat>& history() const { return history_; }

    // Runs `epochs` additional epochs over the dataset. Aborts with a
    // diagnostic if the loss goes non-finite.
    void train(const std::vector<SamplePair<float>>& data, std::size_t epochs) {
        if (data.empty()) shape_error("train: dataset is empty");
        if (options_.batch_size < 1) shape_error("train: batch_size must be >= 1");
        const Branch branch = model_.config().branch;
        for (std::size_t e = 0; e < epochs; ++e) {
            const double lr = options_.schedule.lr_at(epoch_);
            std::vector<std::size_t> order(data.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::shuffle(order.begin(), order.end(), rng_);
            for (std::size_t start = 0; start < order.size();
                 start += options_.batch_size) {
                const std::size_t end = std::min(order.size(), start + options_.batch_size);
                std::vector<Tensor<float>> inputs, targets;
                for (std::size_t i = start; i < end; ++i) {
                    const auto& pair = data[order[i]];
                    inputs.push_back(branch == Branch::raw ? pair.raw4 : pair.demosaiced3);
                    targets.push_back(pair.target3);
                }
                auto batch_in = stack_batch(inputs);
                auto batch_tgt = stack_batch(targets);

                auto outs = model_.forward(batch_in, /*training=*/true);
                auto report = multi_scale_loss(outs, batch_tgt, extractor_, options_.loss);
                const float total = report.total.item();
                if (!std::isfinite(total))
                    throw std::runtime_error(
                        "train: loss diverged (non-finite) at epoch " +
                        std::to_string(epoch_) + ", iteration " + std::to_string(iteration_));
                adam_.zero_grad(registry_);
                report.total.backward();
                adam_.step(registry_, lr, options_.clip_norm);

                history_.push_back({epoch_, iteration_, lr, total,
                                    report.final_char.item()});
                ++iteration_;
            }
            ++epoch_;
        }
    }

    // ------------------------------------------------------------------
    // Checkpointing
    // ------------------------------------------------------------------

    static constexpr std::uint32_t kCheckpointVersion = 1;

    void save_checkpoint(const std::string& path) {
        namespace fs = std::filesystem;
        const std::string tmp = path + ".tmp";
        {
            std::ofstream os(tmp, std::ios::binary);
            if (!os) throw io::SerializationError("save_checkpoint: cannot open " + tmp);
            os.write("AWCK", 4);
            io::write_u32(os, kCheckpointVersion);
            io::write_string(os, model_.config().to_kv());
            std::vector<io::TensorRecord> params;
            for (auto& [name, p] : registry_) params.push_back(io::to_record(name, p));
            io::write_records(os, params);
            io::write_u64(os, adam_.step_count());
            write_moments(os, adam_.moments_m());
            write_moments(os, adam_.moments_v());
            io::write_u64(os, epoch_);
            std::ostringstream rs;
            rs << rng_;
            io::write_string(os, rs.str());
            if (!os) throw io::SerializationError("save_checkpoint: short write");
        }
        fs::rename(tmp, path);
    }

    static Trainer load_checkpoint(const std::string& path, const TrainOptions& opt) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw io::SerializationError("load_checkpoint: cannot open " + path);
        io::expect_magic(is, "AWCK", "load_checkpoint");
        const std::uint32_t version = io::read_u32(is);
        if (version != kCheckpointVersion)
            throw io::SerializationError("load_checkpoint: unsupported version " +
                                         std::to_string(version));
        ModelConfig cfg = ModelConfig::from_kv(io::read_string(is));
        Trainer tr(cfg, opt);

        auto params = io::read_records(is);
        std::size_t matched = 0;
        for (auto& [name, p] : tr.registry_) {
            const io::TensorRecord* rec = nullptr;
            for (const auto& r : params)
                if (r.name == name) {
                    rec = &r;
                    break;
                }
            if (!rec)
                throw io::SerializationError("load_checkpoint: missing parameter '" + name +
                                             "'");
            if (rec->shape != p.shape())
                throw io::SerializationError("load_checkpoint: shape mismatch for '" + name +
                                             "'");
            std::copy(rec->data.begin(), rec->data.end(), p.mutable_data().begin());
            ++matched;
        }
        if (matched != params.size())
            throw io::SerializationError("load_checkpoint: unknown extra parameters in file");

        tr.adam_.set_step_count(io::read_u64(is));
        read_moments(is, tr.adam_.moments_m());
        read_moments(is, tr.adam_.moments_v());
        tr.epoch_ = io::read_u64(is);
        std::istringstream rs(io::read_string(is));
        rs >> tr.rng_;
        if (rs.fail())
            throw io::SerializationError("load_checkpoint: bad rng state");
        return tr;
    }

  private:
    static void write_moments(std::ostream& os, std::vector<std::vector<float>>& mm) {
        io::write_u64(os, mm.size());
        for (const auto& m : mm) {
            io::write_u64(os, m.size());
            for (float v : m) io::write_f32(os, v);
        }
    }

    static void read_moments(std::istream& is, std::vector<std::vector<float>>& mm) {
        const std::uint64_t n = io::read_u64(is);
        if (n != mm.size())
            throw io::SerializationError("load_checkpoint: optimizer slot count mismatch");
        for (auto& m : mm) {
            const std::uint64_t len = io::read_u64(is);
            if (len != m.size())
                throw io::SerializationError("load_checkpoint: optimizer slot size mismatch");
            for (auto& v : m) v = io::read_f32(is);
        }
    }

    AwNet<float> model_;
    TrainOptions options_;
    ParameterRegistry<float> registry_;
    Adam<float> adam_;
    FeatureExtractor<float> extractor_;
    Rng rng_;
    std::size_t epoch_ = 0;
    std::size_t iteration_ = 0;
    std::vector<IterationStat> history_;
};

}  // namespace awnet
