// Command-line surface: dataset synthesis, training, inference, evaluation,
// and the built-in verification suites.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "awnet/data.hpp"
#include "awnet/ensemble.hpp"
#include "awnet/gradcheck.hpp"
#include "awnet/loss.hpp"
#include "awnet/network.hpp"
#include "awnet/trainer.hpp"
#include "awnet/wavelet.hpp"

namespace fs = std::filesystem;
using namespace awnet;

namespace {

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config file " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("malformed config line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

std::vector<std::size_t> parse_bins(const std::string& csv) {
    std::vector<std::size_t> bins;
    std::istringstream is(csv);
    std::string tok;
    while (std::getline(is, tok, ',')) bins.push_back(std::stoull(tok));
    return bins;
}

struct TrainCliConfig {
    ModelConfig model;
    TrainOptions options;
    std::size_t epochs = 50;
    std::size_t save_every = 0;
};

void apply_config_file(TrainCliConfig& cfg, const std::string& path) {
    for (const auto& [key, val] : parse_kv_file(path)) {
        if (key == "base_channels")
            cfg.model.base_channels = std::stoull(val);
        else if (key == "growth_rate")
            cfg.model.growth_rate = std::stoull(val);
        else if (key == "gcb_bottleneck_ratio")
            cfg.model.gcb_bottleneck_ratio = std::stod(val);
        else if (key == "negative_slope")
            cfg.model.negative_slope = std::stod(val);
        else if (key == "pyramid_bins")
            cfg.model.pyramid_bins = parse_bins(val);
        else if (key == "model_seed")
            cfg.model.seed = std::stoull(val);
        else if (key == "lr")
            cfg.options.schedule.initial_lr = std::stod(val);
        else if (key == "halve_every")
            cfg.options.schedule.halve_every = std::stoull(val);
        else if (key == "epochs")
            cfg.epochs = std::stoull(val);
        else if (key == "batch_size")
            cfg.options.batch_size = std::stoull(val);
        else if (key == "clip_norm")
            cfg.options.clip_norm = std::stod(val);
        else if (key == "charbonnier_eps")
            cfg.options.loss.charbonnier_params.epsilon = std::stod(val);
        else if (key == "perceptual_weight")
            cfg.options.loss.perceptual_weight = std::stod(val);
        else if (key == "ssim_weight")
            cfg.options.loss.ssim_weight = std::stod(val);
        else if (key == "save_every")
            cfg.save_every = std::stoull(val);
        else
            throw std::runtime_error("unknown config key '" + key + "'");
    }
}

void require_file(const std::string& path, const char* what) {
    if (!fs::exists(path))
        throw std::runtime_error(std::string(what) + " not found: " + path);
}

int run_gen_data(const std::string& out_dir, const std::string& split, std::size_t count,
                 std::uint64_t seed, std::size_t extent, const std::string& source,
                 double noise_sigma, double gamma) {
    Degradation deg;
    deg.noise_sigma = noise_sigma;
    deg.gamma = gamma;

    std::vector<Tensor<float>> sources;
    if (!source.empty()) {
        require_file(source, "source directory");
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(source))
            if (entry.is_regular_file() && entry.path().extension() == ".png")
                files.push_back(entry.path().string());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw std::runtime_error("no .png files in " + source);
        for (const auto& f : files) sources.push_back(io::read_png_rgb(f));
    }

    const fs::path base = fs::path(out_dir) / split;
    for (const char* sub : {"raw", "demosaiced", "target"})
        fs::create_directories(base / sub);

    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "pair_%04zu", i);
        Tensor<float> rgb = sources.empty() ? procedural_rgb(extent, extent, rng)
                                            : sources[i % sources.size()].detach();
        if (rgb.extent(1) % 2 != 0 || rgb.extent(2) % 2 != 0)
            throw std::runtime_error("source image extents must be even");
        auto pair = synthesize_pair(rgb, seed + 1000 + i, deg, name);
        io::write_praw((base / "raw" / (std::string(name) + ".praw")).string(),
                       to_bayer_image(unpack_mosaic(pair.raw4), 16));
        io::write_png_rgb((base / "demosaiced" / (std::string(name) + ".png")).string(),
                          pair.demosaiced3, 16);
        io::write_png_rgb((base / "target" / (std::string(name) + ".png")).string(),
                          pair.target3, 16);
    }
    std::printf("wrote %zu pairs to %s\n", count, base.string().c_str());
    return 0;
}

int run_train(const TrainCliConfig& cfg, const std::string& dataset_dir,
              const std::string& split, const std::string& out_dir,
              const std::string& resume) {
    require_file(dataset_dir, "dataset directory");
    auto data = load_dataset(dataset_dir, split);
    if (data.empty()) throw std::runtime_error("dataset split '" + split + "' is empty");
    fs::create_directories(out_dir);

    std::optional<Trainer> trainer;
    if (resume.empty()) {
        trainer.emplace(cfg.model, cfg.options);
    } else {
        require_file(resume, "checkpoint");
        trainer.emplace(Trainer::load_checkpoint(resume, cfg.options));
    }
    const std::string branch = branch_name(trainer->model().config().branch);
    const fs::path final_path = fs::path(out_dir) / (branch + std::string(".awck"));

    std::size_t done = trainer->epoch();
    while (done < cfg.epochs) {
        trainer->train(data, 1);
        done = trainer->epoch();
        const auto& h = trainer->history();
        double epoch_loss = 0.0;
        std::size_t n = 0;
        for (auto it = h.rbegin(); it != h.rend() && it->epoch == done - 1; ++it, ++n)
            epoch_loss += it->total_loss;
        std::printf("epoch %zu lr %.3g loss %.6f\n", done,
                    cfg.options.schedule.lr_at(done - 1),
                    n ? epoch_loss / static_cast<double>(n) : 0.0);
        std::fflush(stdout);
        if (cfg.save_every && done % cfg.save_every == 0) {
            const fs::path p =
                fs::path(out_dir) / (branch + std::string("_epoch") + std::to_string(done) +
                                     ".awck");
            trainer->save_checkpoint(p.string());
        }
    }
    trainer->save_checkpoint(final_path.string());
    std::printf("checkpoint %s\n", final_path.string().c_str());
    return 0;
}

std::optional<AwNet<float>> load_model(const std::string& checkpoint, Branch expect) {
    if (checkpoint.empty()) return std::nullopt;
    require_file(checkpoint, "checkpoint");
    Trainer tr = Trainer::load_checkpoint(checkpoint, TrainOptions{});
    if (tr.model().config().branch != expect)
        throw std::runtime_error("checkpoint " + checkpoint + " holds the " +
                                 std::string(branch_name(tr.model().config().branch)) +
                                 " branch");
    return tr.model();
}

int run_infer(const std::string& raw_ckpt, const std::string& dem_ckpt,
              const std::string& input_raw, const std::string& input_dem,
              const std::string& out_path, bool ensemble, bool fuse) {
    if (raw_ckpt.empty() && dem_ckpt.empty())
        throw std::runtime_error(
            "infer needs --raw-checkpoint and/or --demosaiced-checkpoint");
    if (fuse && (raw_ckpt.empty() || dem_ckpt.empty()))
        throw std::runtime_error("--fuse needs both branch checkpoints");
    auto raw_model = load_model(raw_ckpt, Branch::raw);
    auto dem_model = load_model(dem_ckpt, Branch::demosaiced);
    if (raw_model && input_raw.empty())
        throw std::runtime_error("raw branch needs --input-raw <file.praw>");
    if (dem_model && input_dem.empty())
        throw std::runtime_error("demosaiced branch needs --input-demosaiced <file.png>");

    SamplePair<float> pair;
    pair.id = "input";
    if (raw_model) {
        require_file(input_raw, "raw input");
        pair.raw4 = pack_bayer<float>(io::read_praw(input_raw));
    }
    if (dem_model) {
        require_file(input_dem, "demosaiced input");
        pair.demosaiced3 = io::read_png_rgb(input_dem);
    }
    auto prediction = fuse_models(raw_model ? &*raw_model : nullptr,
                                  dem_model ? &*dem_model : nullptr, pair, ensemble);
    io::write_png_rgb(out_path, prediction, 8);
    std::printf("wrote %s (%zux%zu)\n", out_path.c_str(), prediction.extent(2),
                prediction.extent(1));
    return 0;
}

int run_eval(const std::string& raw_ckpt, const std::string& dem_ckpt,
             const std::string& dataset_dir, const std::string& split, bool ensemble,
             const std::string& report_path) {
    if (raw_ckpt.empty() && dem_ckpt.empty())
        throw std::runtime_error(
            "eval needs --raw-checkpoint and/or --demosaiced-checkpoint");
    require_file(dataset_dir, "dataset directory");
    auto raw_model = load_model(raw_ckpt, Branch::raw);
    auto dem_model = load_model(dem_ckpt, Branch::demosaiced);
    auto data = load_dataset(dataset_dir, split);
    if (data.empty()) throw std::runtime_error("dataset split '" + split + "' is empty");
    auto report = evaluate(raw_model ? &*raw_model : nullptr,
                           dem_model ? &*dem_model : nullptr, data, ensemble);
    if (!report_path.empty()) write_eval_report(report_path, report);
    std::fputs(eval_report_csv(report).c_str(), stdout);
    return 0;
}

struct CheckPrinter {
    int failures = 0;
    void operator()(const std::string& name, bool ok) {
        std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", name.c_str());
        if (!ok) ++failures;
    }
};

int run_gradcheck(std::uint64_t seed) {
    CheckPrinter check;
    Rng rng(seed == 0 ? 424242 : seed);
    auto mask_for = [&](const Shape& s) { return Tensor<double>::uniform(s, 0.25, 1.0, rng); };
    auto masked = [](const Tensor<double>& t, const Tensor<double>& m) {
        return sum_all(mul(t, m));
    };

    {
        auto x = Tensor<double>::uniform({1, 3, 6, 6}, -1, 1, rng);
        auto w = Tensor<double>::uniform({4, 3, 3, 3}, -1, 1, rng);
        auto b = Tensor<double>::uniform({4}, -1, 1, rng);
        auto m = mask_for({1, 4, 6, 6});
        check("conv2d/input",
              check_input_gradient(
                  [&](const Tensor<double>& t) {
                      return masked(conv2d(t, w, std::optional<Tensor<double>>(b), 1, 1), m);
                  },
                  x) <= 1e-4);
        check("conv2d/weight",
              check_input_gradient(
                  [&](const Tensor<double>& t) {
                      return masked(conv2d(x, t, std::optional<Tensor<double>>(b), 1, 1), m);
                  },
                  w) <= 1e-4);
    }
    {
        auto x = Tensor<double>::uniform({1, 2, 4, 4}, -1, 1, rng);
        auto m = mask_for({1, 2, 2, 2});
        check("dwt2",
              check_input_gradient(
                  [&](const Tensor<double>& t) { return masked(dwt2(t).ll, m); }, x) <= 1e-4);
        auto mfull = mask_for({1, 2, 4, 4});
        check("idwt2(dwt2)",
              check_input_gradient(
                  [&](const Tensor<double>& t) { return masked(idwt2(dwt2(t)), mfull); }, x) <=
                  1e-4);
    }
    {
        BlockConfig bc;
        bc.in_channels = 3;
        bc.growth_rate = 2;
        bc.gcb_bottleneck_ratio = 0.5;
        Rdb<double> rdb(bc, rng);
        Gcb<double> gcb(bc, rng);
        auto x = Tensor<double>::uniform({1, 3, 4, 4}, -1, 1, rng);
        auto m = mask_for({1, 3, 4, 4});
        check("rdb", check_input_gradient(
                         [&](const Tensor<double>& t) { return masked(rdb.forward(t), m); },
                         x) <= 1e-4);
        check("gcb", check_input_gradient(
                         [&](const Tensor<double>& t) { return masked(gcb.forward(t), m); },
                         x) <= 1e-4);
        WaveletDown<double> down(3, 3, rng);
        auto md = mask_for({1, 3, 2, 2});
        check("wavelet_down",
              check_input_gradient(
                  [&](const Tensor<double>& t) {
                      return masked(down.forward(t).features, md);
                  },
                  x) <= 1e-4);
        WaveletUp<double> up(3, 3, 3, rng);
        SubbandSet<double> skip{Tensor<double>::uniform({1, 3, 4, 4}, -1, 1, rng),
                                Tensor<double>::uniform({1, 3, 4, 4}, -1, 1, rng),
                                Tensor<double>::uniform({1, 3, 4, 4}, -1, 1, rng),
                                Tensor<double>::uniform({1, 3, 4, 4}, -1, 1, rng)};
        auto mu = mask_for({1, 3, 8, 8});
        check("wavelet_up",
              check_input_gradient(
                  [&](const Tensor<double>& t) { return masked(up.forward(t, skip), mu); },
                  x) <= 1e-4);
        PyramidPool<double> pyr(3, {1, 2}, rng);
        check("pyramid_pool",
              check_input_gradient(
                  [&](const Tensor<double>& t) { return masked(pyr.forward(t), m); }, x) <=
                  1e-4);
    }
    {
        ModelConfig cfg;
        cfg.branch = Branch::raw;
        cfg.base_channels = 8;
        cfg.growth_rate = 4;
        cfg.pyramid_bins = {1, 2};
        cfg.seed = 1;
        AwNet<double> model(cfg);
        ParameterRegistry<double> reg;
        model.register_params(reg);
        std::vector<Tensor<double>> leaves;
        for (auto& [name, p] : reg) leaves.push_back(p);
        auto x = Tensor<double>::uniform({1, 4, 32, 32}, 0, 1, rng);
        std::vector<Tensor<double>> masks;
        for (std::size_t i = 0; i < 6; ++i) {
            const std::size_t e = std::size_t{2} << i;
            masks.push_back(mask_for({1, 3, e, e}));
        }
        auto full_loss = [&]() {
            auto outs = model.forward(x, true);
            Tensor<double> loss = Tensor<double>::scalar(0.0);
            for (std::size_t i = 0; i < outs.outputs.size(); ++i)
                loss = add(loss, masked(outs.outputs[i], masks[i]));
            return loss;
        };
        double worst = 0.0;
        for (int rep = 0; rep < 4; ++rep)
            worst = std::max(worst, check_directional_gradient(full_loss, leaves, rng));
        check("full raw model (directional over all parameters)", worst <= 1e-4);
    }
    std::printf("%s\n", check.failures == 0 ? "gradcheck clean" : "gradcheck FAILED");
    return check.failures == 0 ? 0 : 1;
}

int run_selftest(std::uint64_t seed) {
    CheckPrinter check;
    Rng rng(seed == 0 ? 99 : seed);

    // wavelet invariants
    {
        bool ok_f32 = true, ok_f64 = true;
        std::uniform_int_distribution<std::size_t> half(1, 12);
        for (int i = 0; i < 200; ++i) {
            const Shape s{1, 2, 2 * half(rng), 2 * half(rng)};
            auto xf = Tensor<float>::uniform(s, -1.0f, 1.0f, rng);
            auto back = idwt2(dwt2(xf));
            for (std::size_t j = 0; j < xf.numel(); ++j)
                ok_f32 = ok_f32 && std::abs(xf.data()[j] - back.data()[j]) <= 1e-6f;
            auto xd = Tensor<double>::uniform(s, -1.0, 1.0, rng);
            auto backd = idwt2(dwt2(xd));
            for (std::size_t j = 0; j < xd.numel(); ++j)
                ok_f64 = ok_f64 && std::abs(xd.data()[j] - backd.data()[j]) <= 1e-12;
        }
        check("wavelet perfect reconstruction (f32 <= 1e-6)", ok_f32);
        check("wavelet perfect reconstruction (f64 <= 1e-12)", ok_f64);

        bool ok_pool = true;
        for (int i = 0; i < 100; ++i) {
            auto x = Tensor<float>::uniform({1, 1, 16, 16}, 0.0f, 1.0f, rng);
            auto [pooled, ll4] = avg_pool_equivalence_check(x);
            for (std::size_t j = 0; j < pooled.numel(); ++j)
                ok_pool = ok_pool && std::abs(pooled.data()[j] - ll4.data()[j]) <= 1e-7f;
        }
        check("pooling identity: LL/4 == 2x2 average pool (<= 1e-7)", ok_pool);

        auto x = Tensor<double>::uniform({1, 1, 8, 8}, -1, 1, rng);
        auto y = Tensor<double>::uniform({1, 1, 8, 8}, -1, 1, rng);
        std::vector<double> comb(x.numel());
        for (std::size_t j = 0; j < comb.size(); ++j)
            comb[j] = 2.0 * x.data()[j] - 0.5 * y.data()[j];
        auto sc = dwt2(Tensor<double>::from_vector(x.shape(), comb));
        auto sx = dwt2(x);
        auto sy = dwt2(y);
        bool ok_lin = true;
        for (std::size_t j = 0; j < sc.ll.numel(); ++j)
            ok_lin = ok_lin &&
                     std::abs(sc.ll.data()[j] -
                              (2.0 * sx.ll.data()[j] - 0.5 * sy.ll.data()[j])) <= 1e-12;
        check("wavelet linearity per subband", ok_lin);
    }

    // loss invariants
    {
        auto p = Tensor<double>::full({1, 3, 4, 4}, 0.3);
        check("charbonnier floor at epsilon",
              std::abs(charbonnier(p, p).item() - 1e-3) <= 1e-12);
        auto a = Tensor<double>::uniform({1, 3, 16, 16}, 0.0, 1.0, rng);
        auto b = Tensor<double>::uniform({1, 3, 16, 16}, 0.0, 1.0, rng);
        check("ssim symmetry", std::abs(ssim(a, b).item() - ssim(b, a).item()) <= 1e-9);
        check("ssim of identical images is 1", ssim(a, a).item() == 1.0);
        auto z = Tensor<double>::zeros({1, 3, 8, 8});
        auto o = Tensor<double>::full({1, 3, 8, 8}, 0.1);
        check("psnr of uniform 0.01 MSE is 20 dB", std::abs(psnr(z, o) - 20.0) <= 1e-9);

        auto fx = FeatureExtractor<double>::builtin(0);
        MultiScaleOutput<double> outs;
        auto target = Tensor<double>::uniform({1, 3, 64, 64}, 0.0, 1.0, rng);
        for (std::size_t i = 0; i < 6; ++i) {
            const std::size_t div = std::size_t{1} << (5 - i);
            outs.outputs.push_back(div == 1 ? target.detach()
                                            : adaptive_avg_pool(target, 64 / div, 64 / div));
        }
        auto report = multi_scale_loss(outs, target, fx);
        check("multi-scale loss of a perfect prediction totals 6e-3",
              std::abs(report.total.item() - 6e-3) <= 1e-9);
        double sum = 0.0;
        for (const auto& l : report.per_scale) sum += l.item();
        check("multi-scale total equals the per-scale sum",
              std::abs(report.total.item() - sum) <= 1e-15);
    }
    std::printf("%s\n", check.failures == 0 ? "selftest clean" : "selftest FAILED");
    return check.failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-branch wavelet ISP network: data synthesis, training, inference"};
    app.require_subcommand(1);
    std::uint64_t seed = 0;
    app.add_option("--seed", seed, "global seed")->capture_default_str();

    auto* gen = app.add_subcommand("gen-data", "synthesize RAW/demosaiced/target pairs");
    std::string gen_out = "data", gen_split = "train", gen_source;
    std::size_t gen_count = 8, gen_size = 64;
    double gen_noise = 0.01, gen_gamma = 2.2;
    gen->add_option("--out", gen_out, "output dataset root")->capture_default_str();
    gen->add_option("--split", gen_split, "split name")->capture_default_str();
    gen->add_option("--count", gen_count, "number of pairs")->capture_default_str();
    gen->add_option("--size", gen_size, "procedural image extent")->capture_default_str();
    gen->add_option("--source", gen_source, "directory of source PNGs (procedural if empty)");
    gen->add_option("--noise-sigma", gen_noise, "sensor noise sigma")->capture_default_str();
    gen->add_option("--gamma", gen_gamma, "inverse gamma before mosaicing")
        ->capture_default_str();

    auto* train = app.add_subcommand("train", "train one branch");
    std::string tr_branch = "raw", tr_config, tr_dataset = "data", tr_split = "train",
                tr_out = "runs", tr_resume, tr_extractor, tr_bins;
    TrainCliConfig tcfg;
    bool tr_epochs_set = false, tr_lr_set = false, tr_batch_set = false;
    std::size_t tr_epochs = 50, tr_batch = 2, tr_base_channels = 0, tr_growth = 0;
    double tr_lr = 1e-4;
    train->add_option("--branch", tr_branch, "raw | demosaiced")->capture_default_str();
    train->add_option("--config", tr_config, "flat key=value config file");
    train->add_option("--dataset", tr_dataset, "dataset root")->capture_default_str();
    train->add_option("--split", tr_split, "dataset split")->capture_default_str();
    train->add_option("--out", tr_out, "checkpoint output directory")->capture_default_str();
    train->add_option("--resume", tr_resume, "checkpoint to resume from");
    train->add_option("--extractor", tr_extractor, "AWFX perceptual weights (optional)");
    train->add_option("--epochs", tr_epochs, "total epochs")
        ->each([&](const std::string&) { tr_epochs_set = true; });
    train->add_option("--lr", tr_lr, "initial learning rate")
        ->each([&](const std::string&) { tr_lr_set = true; });
    train->add_option("--batch-size", tr_batch, "batch size")
        ->each([&](const std::string&) { tr_batch_set = true; });
    train->add_option("--base-channels", tr_base_channels, "model width (overrides config)");
    train->add_option("--growth-rate", tr_growth, "dense growth rate (overrides config)");
    train->add_option("--pyramid-bins", tr_bins, "comma-separated pyramid bins");

    auto* infer = app.add_subcommand("infer", "run inference on one input");
    std::string in_raw_ckpt, in_dem_ckpt, in_raw, in_dem, in_out = "prediction.png";
    bool in_ensemble = false, in_fuse = false;
    infer->add_option("--raw-checkpoint", in_raw_ckpt, "raw branch checkpoint");
    infer->add_option("--demosaiced-checkpoint", in_dem_ckpt, "demosaiced branch checkpoint");
    infer->add_option("--input-raw", in_raw, "packed Bayer input (.praw)");
    infer->add_option("--input-demosaiced", in_dem, "demosaiced input (.png)");
    infer->add_option("--out", in_out, "output PNG")->capture_default_str();
    infer->add_flag("--ensemble", in_ensemble, "8-variant self-ensemble");
    infer->add_flag("--fuse", in_fuse, "average both branch predictions");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate on a dataset split");
    std::string ev_raw_ckpt, ev_dem_ckpt, ev_dataset = "data", ev_split = "val", ev_report;
    bool ev_ensemble = false;
    eval_cmd->add_option("--raw-checkpoint", ev_raw_ckpt, "raw branch checkpoint");
    eval_cmd->add_option("--demosaiced-checkpoint", ev_dem_ckpt,
                         "demosaiced branch checkpoint");
    eval_cmd->add_option("--dataset", ev_dataset, "dataset root")->capture_default_str();
    eval_cmd->add_option("--split", ev_split, "dataset split")->capture_default_str();
    eval_cmd->add_option("--report", ev_report, "CSV report path");
    eval_cmd->add_flag("--ensemble", ev_ensemble, "8-variant self-ensemble");

    auto* gradcheck_cmd =
        app.add_subcommand("gradcheck", "finite-difference gradient verification");
    auto* selftest_cmd = app.add_subcommand("selftest", "wavelet and loss invariant suite");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen)
            return run_gen_data(gen_out, gen_split, gen_count, seed, gen_size, gen_source,
                                gen_noise, gen_gamma);
        if (*train) {
            if (tr_branch == "raw")
                tcfg.model.branch = Branch::raw;
            else if (tr_branch == "demosaiced")
                tcfg.model.branch = Branch::demosaiced;
            else
                throw std::runtime_error("unknown branch '" + tr_branch + "'");
            if (!tr_config.empty()) {
                require_file(tr_config, "config file");
                apply_config_file(tcfg, tr_config);
            }
            if (tr_epochs_set) tcfg.epochs = tr_epochs;
            if (tr_lr_set) tcfg.options.schedule.initial_lr = tr_lr;
            if (tr_batch_set) tcfg.options.batch_size = tr_batch;
            if (tr_base_channels) tcfg.model.base_channels = tr_base_channels;
            if (tr_growth) tcfg.model.growth_rate = tr_growth;
            if (!tr_bins.empty()) tcfg.model.pyramid_bins = parse_bins(tr_bins);
            if (seed) {
                tcfg.model.seed = seed;
                tcfg.options.shuffle_seed = seed;
            }
            tcfg.options.extractor_weights = tr_extractor;
            return run_train(tcfg, tr_dataset, tr_split, tr_out, tr_resume);
        }
        if (*infer)
            return run_infer(in_raw_ckpt, in_dem_ckpt, in_raw, in_dem, in_out, in_ensemble,
                             in_fuse);
        if (*eval_cmd)
            return run_eval(ev_raw_ckpt, ev_dem_ckpt, ev_dataset, ev_split, ev_ensemble,
                            ev_report);
        if (*gradcheck_cmd) return run_gradcheck(seed);
        if (*selftest_cmd) return run_selftest(seed);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
