#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "awnet/gradcheck.hpp"
#include "awnet/loss.hpp"
#include "support/reference_ops.hpp"

using namespace awnet;
using Catch::Approx;

namespace {

// Smooth low-frequency image, deterministic; stands in for natural statistics.
Tensor<double> smooth_image(std::size_t h, std::size_t w) {
    std::vector<double> v(h * w);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
            v[i * w + j] = 0.5 + 0.25 * std::sin(2.0 * M_PI * i / 16.0) +
                           0.2 * std::cos(2.0 * M_PI * j / 16.0);
    return Tensor<double>::from_vector({1, 1, h, w}, std::move(v));
}

}  // namespace

TEST_CASE("charbonnier") {
    SECTION("perfect prediction floors at epsilon") {
        auto p = Tensor<double>::full({1, 3, 4, 4}, 0.25);
        CHECK(charbonnier(p, p).item() == Approx(1e-3).margin(1e-12));
    }
    SECTION("uniform difference of 3e-3") {
        auto t = Tensor<double>::zeros({2, 3, 2, 2});
        auto p = Tensor<double>::full({2, 3, 2, 2}, 3e-3);
        CHECK(charbonnier(p, t).item() == Approx(std::sqrt(1e-5)).margin(1e-12));
    }
    SECTION("epsilon -> 0 limit approaches mean absolute error") {
        Rng rng(1);
        auto p = refops::random_tensor<double>({1, 3, 8, 8}, rng);
        auto t = refops::random_tensor<double>({1, 3, 8, 8}, rng);
        double l1 = 0.0;
        for (std::size_t i = 0; i < p.numel(); ++i)
            l1 += std::abs(p.data()[i] - t.data()[i]);
        l1 /= static_cast<double>(p.numel());
        CHECK(charbonnier(p, t, {1e-12}).item() == Approx(l1).margin(1e-9));
    }
    SECTION("always at least epsilon, equality only at a perfect match") {
        Rng rng(2);
        for (int i = 0; i < 20; ++i) {
            auto p = refops::random_tensor<double>({1, 1, 4, 4}, rng);
            auto t = refops::random_tensor<double>({1, 1, 4, 4}, rng);
            CHECK(charbonnier(p, t).item() > 1e-3);
        }
    }
    SECTION("shape mismatch is rejected") {
        CHECK_THROWS_AS(
            charbonnier(Tensor<double>::zeros({1, 3, 4, 4}), Tensor<double>::zeros({1, 3, 4, 2})),
            std::invalid_argument);
    }
    SECTION("gradient check") {
        Rng rng(3);
        auto t = refops::random_tensor<double>({1, 3, 4, 4}, rng);
        auto p0 = refops::random_tensor<double>({1, 3, 4, 4}, rng);
        CHECK(check_input_gradient(
                  [&](const Tensor<double>& p) { return charbonnier(p, t); }, p0) <= 1e-4);
    }
}

TEST_CASE("perceptual loss") {
    auto fx = FeatureExtractor<double>::builtin(0);
    SECTION("zero for identical images") {
        auto img = smooth_image(16, 16);
        auto rgb = concat_channels<double>({img, img, img});
        CHECK(perceptual(rgb, rgb, fx).item() == 0.0);
    }
    SECTION("non-negative on random pairs") {
        Rng rng(4);
        for (int i = 0; i < 10; ++i) {
            auto p = refops::random_tensor<double>({1, 3, 8, 8}, rng, 0.0, 1.0);
            auto t = refops::random_tensor<double>({1, 3, 8, 8}, rng, 0.0, 1.0);
            CHECK(perceptual(p, t, fx).item() >= 0.0);
        }
    }
    SECTION("equals the hand-computed feature-space MSE") {
        Rng rng(5);
        auto p = refops::random_tensor<double>({1, 3, 16, 16}, rng, 0.0, 1.0);
        auto t = refops::random_tensor<double>({1, 3, 16, 16}, rng, 0.0, 1.0);
        auto fp = fx.features(p);
        auto ft = fx.features(t);
        double mse = 0.0;
        for (std::size_t i = 0; i < fp.numel(); ++i) {
            const double d = fp.data()[i] - ft.data()[i];
            mse += d * d;
        }
        mse /= static_cast<double>(fp.numel());
        CHECK(perceptual(p, t, fx).item() == Approx(mse).margin(1e-12));
    }
    SECTION("extractor rejects non-3-channel input") {
        CHECK_THROWS_AS(fx.features(Tensor<double>::zeros({1, 4, 8, 8})),
                        std::invalid_argument);
    }
    SECTION("feature map is strictly smaller than the input") {
        auto f = fx.features(Tensor<double>::zeros({1, 3, 16, 16}));
        CHECK(f.extent(2) < 16);
        CHECK(f.extent(3) < 16);
    }
    SECTION("gradient reaches the prediction through the frozen extractor") {
        Rng rng(6);
        auto t = refops::random_tensor<double>({1, 3, 8, 8}, rng, 0.0, 1.0);
        auto p0 = refops::random_tensor<double>({1, 3, 8, 8}, rng, 0.0, 1.0);
        CHECK(check_input_gradient(
                  [&](const Tensor<double>& p) { return perceptual(p, t, fx); }, p0) <= 1e-4);
    }
    SECTION("weight file round trip preserves f32 features bit-exactly") {
        namespace fs = std::filesystem;
        const auto path = fs::temp_directory_path() / "awnet_fx_test.awfx";
        auto fx32 = FeatureExtractor<float>::builtin(3);
        fx32.save(path.string());
        auto fx2 = FeatureExtractor<float>::from_file(path.string());
        Rng rng(15);
        auto rgb = refops::random_tensor<float>({1, 3, 16, 16}, rng, 0.0f, 1.0f);
        CHECK(refops::max_abs_diff(fx32.features(rgb), fx2.features(rgb)) == 0.0);
        CHECK(fx2.provenance().find("external-weights") == 0);
        fs::remove(path);
    }
}

TEST_CASE("ssim") {
    SECTION("identical images score exactly 1") {
        Rng rng(7);
        auto a = refops::random_tensor<double>({1, 3, 16, 16}, rng, 0.0, 1.0);
        CHECK(ssim(a, a).item() == 1.0);
        CHECK(ssim_loss(a, a).item() == 0.0);
    }
    SECTION("an inverted smooth image scores below 0.5") {
        auto a = smooth_image(32, 32);
        std::vector<double> inv(a.numel());
        for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 - a.data()[i];
        auto b = Tensor<double>::from_vector(a.shape(), std::move(inv));
        CHECK(ssim(a, b).item() < 0.5);
    }
    SECTION("matches the sliding-window reference on random 16x16 pairs") {
        Rng rng(8);
        for (int i = 0; i < 10; ++i) {
            auto a = refops::random_tensor<double>({1, 3, 16, 16}, rng, 0.0, 1.0);
            auto b = refops::random_tensor<double>({1, 3, 16, 16}, rng, 0.0, 1.0);
            CHECK(ssim(a, b).item() == Approx(refops::reference_ssim(a, b)).margin(1e-6));
        }
    }
    SECTION("symmetric to 1e-9") {
        Rng rng(9);
        auto a = refops::random_tensor<double>({1, 3, 14, 14}, rng, 0.0, 1.0);
        auto b = refops::random_tensor<double>({1, 3, 14, 14}, rng, 0.0, 1.0);
        CHECK(std::abs(ssim(a, b).item() - ssim(b, a).item()) <= 1e-9);
    }
    SECTION("images smaller than the window are rejected") {
        CHECK_THROWS_AS(ssim(Tensor<double>::zeros({1, 1, 8, 8}),
                             Tensor<double>::zeros({1, 1, 8, 8})),
                        std::invalid_argument);
    }
    SECTION("gradient check") {
        Rng rng(10);
        auto t = refops::random_tensor<double>({1, 1, 12, 12}, rng, 0.0, 1.0);
        auto p0 = refops::random_tensor<double>({1, 1, 12, 12}, rng, 0.0, 1.0);
        CHECK(check_input_gradient(
                  [&](const Tensor<double>& p) { return ssim_loss(p, t); }, p0) <= 1e-4);
    }
}

TEST_CASE("psnr") {
    SECTION("identical images hit the +infinity sentinel") {
        auto a = Tensor<double>::full({1, 3, 4, 4}, 0.7);
        CHECK(std::isinf(psnr(a, a)));
        CHECK(psnr(a, a) > 0);
    }
    SECTION("uniform MSE of 0.01 is 20 dB") {
        auto a = Tensor<double>::zeros({1, 3, 8, 8});
        auto b = Tensor<double>::full({1, 3, 8, 8}, 0.1);
        CHECK(psnr(a, b) == Approx(20.0).margin(1e-9));
    }
    SECTION("monotone in the error magnitude") {
        Rng rng(11);
        auto a = refops::random_tensor<double>({1, 3, 8, 8}, rng, 0.0, 1.0);
        double prev = -1.0;
        for (double s : {0.2, 0.1, 0.05, 0.01}) {
            std::vector<double> shifted(a.data().begin(), a.data().end());
            for (auto& v : shifted) v += s;
            const double p = psnr(a, Tensor<double>::from_vector(a.shape(), shifted));
            CHECK(p > prev);
            prev = p;
        }
    }
}

namespace {

// Builds a k-scale output whose entries are exact area-averages of target.
template <typename T>
MultiScaleOutput<T> perfect_outputs(const Tensor<T>& target, std::size_t k) {
    MultiScaleOutput<T> out;
    const std::size_t H = target.extent(2), W = target.extent(3);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t div = std::size_t{1} << (k - 1 - i);
        out.outputs.push_back(div == 1 ? target.detach()
                                       : adaptive_avg_pool(target, H / div, W / div));
    }
    return out;
}

}  // namespace

TEST_CASE("multi_scale_loss") {
    auto fx = FeatureExtractor<double>::builtin(0);
    Rng rng(12);
    auto target = refops::random_tensor<double>({1, 3, 64, 64}, rng, 0.0, 1.0);

    SECTION("perfect six-scale prediction totals exactly 6 epsilon") {
        auto outs = perfect_outputs(target, 6);
        auto report = multi_scale_loss(outs, target, fx);
        CHECK(report.total.item() == Approx(6e-3).margin(1e-9));
        CHECK(report.final_perceptual.item() == 0.0);
        CHECK(report.final_ssim.item() == 0.0);
        REQUIRE(report.per_scale.size() == 6);
        for (const auto& l : report.per_scale)
            CHECK(l.item() == Approx(1e-3).margin(1e-12));
    }
    SECTION("five-scale variant is accepted, other counts rejected") {
        auto outs5 = perfect_outputs(target, 5);
        CHECK(multi_scale_loss(outs5, target, fx).per_scale.size() == 5);
        MultiScaleOutput<double> outs4{
            {outs5.outputs.begin() + 1, outs5.outputs.end()}};
        CHECK_THROWS_AS(multi_scale_loss(outs4, target, fx), std::invalid_argument);
    }
    SECTION("total equals the sum of the per-scale losses") {
        Rng r2(13);
        MultiScaleOutput<double> outs;
        const std::size_t H = 64;
        for (std::size_t i = 0; i < 6; ++i)
            outs.outputs.push_back(
                refops::random_tensor<double>({1, 3, H >> (5 - i), H >> (5 - i)}, r2, 0.0, 1.0));
        auto report = multi_scale_loss(outs, target, fx);
        double sum = 0.0;
        for (const auto& l : report.per_scale) sum += l.item();
        CHECK(report.total.item() == Approx(sum).margin(1e-15));
    }
    SECTION("target extent mismatch at the top scale is rejected") {
        auto outs = perfect_outputs(target, 6);
        auto small = adaptive_avg_pool(target, 32, 32);
        CHECK_THROWS_AS(multi_scale_loss(outs, small, fx), std::invalid_argument);
    }
    SECTION("schedule membership: per-scale gradients match their loss recipe exactly") {
        Rng r3(14);
        MultiScaleOutput<double> outs;
        std::vector<Tensor<double>> leaves;
        const std::size_t H = 64;
        for (std::size_t i = 0; i < 6; ++i) {
            auto leaf =
                refops::random_tensor<double>({1, 3, H >> (5 - i), H >> (5 - i)}, r3, 0.0, 1.0);
            leaf.set_requires_grad(true);
            outs.outputs.push_back(leaf);
            leaves.push_back(leaf);
        }
        auto report = multi_scale_loss(outs, target, fx);
        report.total.backward();

        for (std::size_t i = 0; i < 6; ++i) {
            const std::size_t scale = i + 1;
            auto iso = outs.outputs[i].detach();
            iso.set_requires_grad(true);
            Tensor<double> tgt =
                (i == 5) ? target
                         : adaptive_avg_pool(target, iso.extent(2), iso.extent(3));
            Tensor<double> expected = charbonnier(iso, tgt);
            if (scale >= 3) expected = add(expected, scalar_mul(perceptual(iso, tgt, fx), 0.25));
            if (scale >= 5) expected = add(expected, scalar_mul(ssim_loss(iso, tgt), 0.05));
            expected.backward();
            REQUIRE(leaves[i].has_grad());
            INFO("scale " << scale);
            for (std::size_t e = 0; e < iso.numel(); ++e)
                REQUIRE(leaves[i].grad()[e] == iso.grad()[e]);
        }
    }
}
