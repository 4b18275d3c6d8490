#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "awnet/ensemble.hpp"
#include "support/reference_ops.hpp"

using namespace awnet;
using Catch::Approx;

namespace {

ModelConfig toy(Branch branch, std::uint64_t seed = 3) {
    ModelConfig cfg;
    cfg.branch = branch;
    cfg.base_channels = 4;
    cfg.growth_rate = 2;
    cfg.pyramid_bins = {1};
    cfg.seed = seed;
    return cfg;
}

// Zero every weight so the model emits per-channel constants (head biases).
template <typename T>
void make_constant_model(AwNet<T>& model) {
    ParameterRegistry<T> reg;
    model.register_params(reg);
    for (auto& [name, t] : reg) {
        const bool is_bias = name.size() >= 5 && name.substr(name.size() - 5) == ".bias";
        if (!is_bias) std::fill(t.mutable_data().begin(), t.mutable_data().end(), T(0));
    }
}

}  // namespace

TEST_CASE("dihedral transforms invert bit-exactly") {
    Rng rng(1);
    auto rgb = refops::random_tensor<float>({1, 3, 6, 10}, rng);
    auto raw = refops::random_tensor<float>({1, 4, 6, 10}, rng);
    for (const auto& variant : kDihedralVariants) {
        CHECK(refops::bit_equal(dihedral_invert(dihedral_apply(rgb, variant), variant), rgb));
        CHECK(refops::bit_equal(dihedral_invert_raw(dihedral_apply_raw(raw, variant), variant),
                                raw));
    }
}

TEST_CASE("the 8 variants are distinct group elements") {
    Rng rng(2);
    auto x = refops::random_tensor<double>({1, 1, 4, 4}, rng);
    std::set<std::vector<double>> images;
    for (const auto& variant : kDihedralVariants) {
        auto y = dihedral_apply(x, variant);
        images.insert(std::vector<double>(y.data().begin(), y.data().end()));
    }
    CHECK(images.size() == 8);
}

TEST_CASE("rot90 composes to the identity after four turns") {
    Rng rng(3);
    auto x = refops::random_tensor<float>({2, 3, 4, 6}, rng);
    auto y = x;
    for (int k = 0; k < 4; ++k) y = dihedral_apply(y, {1, false});
    CHECK(refops::bit_equal(x, y));
}

TEST_CASE("raw-plane transforms compose like the group") {
    // The green-plane relabeling parity must be a homomorphism: composing
    // variant applications matches applying the composed element directly.
    Rng rng(99);
    auto raw = refops::random_tensor<float>({1, 4, 8, 8}, rng);
    auto two_rots = dihedral_apply_raw(dihedral_apply_raw(raw, {1, false}), {1, false});
    CHECK(refops::bit_equal(two_rots, dihedral_apply_raw(raw, {2, false})));
    auto four_rots = dihedral_apply_raw(two_rots, {2, false});
    CHECK(refops::bit_equal(four_rots, raw));
    // flip-after-rotation convention: R(F(x)) equals the {3, flip} variant
    auto rf = dihedral_apply_raw(dihedral_apply_raw(raw, {0, true}), {1, false});
    CHECK(refops::bit_equal(rf, dihedral_apply_raw(raw, {3, true})));
    auto ff = dihedral_apply_raw(dihedral_apply_raw(raw, {0, true}), {0, true});
    CHECK(refops::bit_equal(ff, raw));
}

TEST_CASE("self_ensemble") {
    SECTION("collapses bit-exactly for a constant-output model") {
        AwNet<float> model(toy(Branch::demosaiced));
        make_constant_model(model);
        Rng rng(4);
        auto x = refops::random_tensor<float>({1, 3, 32, 32}, rng, 0.0f, 1.0f);
        auto single = model.predict(x);
        auto ens = self_ensemble(model, x);
        CHECK(refops::bit_equal(single, ens));
    }
    SECTION("output shape matches the single pass") {
        AwNet<float> model(toy(Branch::raw));
        Rng rng(5);
        auto x = refops::random_tensor<float>({1, 4, 16, 16}, rng, 0.0f, 1.0f);
        CHECK(self_ensemble(model, x).shape() == model.predict(x).shape());
    }
    SECTION("deterministic across invocations") {
        AwNet<float> model(toy(Branch::demosaiced));
        Rng rng(6);
        auto x = refops::random_tensor<float>({1, 3, 32, 32}, rng, 0.0f, 1.0f);
        CHECK(refops::bit_equal(self_ensemble(model, x), self_ensemble(model, x)));
    }
    SECTION("the ensembled demosaiced model is equivariant under the group action") {
        AwNet<double> model(toy(Branch::demosaiced));
        Rng rng(7);
        auto x = refops::random_tensor<double>({1, 3, 32, 32}, rng, 0.0, 1.0);
        const DihedralTransform rot{1, false};
        auto lhs = self_ensemble(model, dihedral_apply(x, rot));
        auto rhs = dihedral_apply(self_ensemble(model, x), rot);
        CHECK(refops::max_abs_diff(lhs, rhs) <= 1e-12);
    }
    SECTION("the ensembled raw model is equivariant under the raw group action") {
        AwNet<double> model(toy(Branch::raw));
        Rng rng(8);
        auto x = refops::random_tensor<double>({1, 4, 16, 16}, rng, 0.0, 1.0);
        const DihedralTransform rot{1, false};
        auto lhs = self_ensemble(model, dihedral_apply_raw(x, rot));
        auto rhs = dihedral_apply(self_ensemble(model, x), rot);
        CHECK(refops::max_abs_diff(lhs, rhs) <= 1e-12);
    }
}

TEST_CASE("fuse_models") {
    Rng rng(9);
    auto pair = synthesize_pair(procedural_rgb(32, 32, rng), 5, {}, "s");

    SECTION("identical branch outputs fuse to that output") {
        AwNet<float> raw_model(toy(Branch::raw));
        AwNet<float> dem_model(toy(Branch::demosaiced));
        make_constant_model(raw_model);
        make_constant_model(dem_model);
        ParameterRegistry<float> rr, rd;
        raw_model.register_params(rr);
        dem_model.register_params(rd);
        auto& raw_head = rr.find("head5.bias");
        auto& dem_head = rd.find("head4.bias");
        std::copy(raw_head.data().begin(), raw_head.data().end(),
                  dem_head.mutable_data().begin());
        auto fused = fuse_models(&raw_model, &dem_model, pair, false);
        auto raw_only = fuse_models<float>(&raw_model, nullptr, pair, false);
        CHECK(refops::bit_equal(fused, raw_only));
    }
    SECTION("raw branch output extent doubles to the demosaiced extent") {
        AwNet<float> raw_model(toy(Branch::raw));
        auto out = fuse_models<float>(&raw_model, nullptr, pair, false);
        CHECK(out.shape() == pair.target3.shape());
    }
    SECTION("averaging with the ground truth never hurts") {
        AwNet<float> dem_model(toy(Branch::demosaiced));
        auto pred = fuse_models<float>(nullptr, &dem_model, pair, false);
        auto pred_b = Tensor<float>::from_vector(
            {1, 3, 32, 32}, std::vector<float>(pred.data().begin(), pred.data().end()));
        auto tgt_b = Tensor<float>::from_vector(
            {1, 3, 32, 32},
            std::vector<float>(pair.target3.data().begin(), pair.target3.data().end()));
        auto fused = average_predictions(tgt_b, pred_b);
        CHECK(psnr(fused, tgt_b) >= psnr(pred_b, tgt_b));
    }
    SECTION("at least one model is required") {
        CHECK_THROWS_AS(fuse_models<float>(nullptr, nullptr, pair, false),
                        std::invalid_argument);
    }
    SECTION("fused values stay inside [0, 1]") {
        AwNet<float> raw_model(toy(Branch::raw));
        AwNet<float> dem_model(toy(Branch::demosaiced));
        auto fused = fuse_models(&raw_model, &dem_model, pair, true);
        for (float v : fused.data()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("evaluate") {
    Rng rng(10);
    std::vector<SamplePair<float>> data;
    for (int i = 0; i < 3; ++i)
        data.push_back(
            synthesize_pair(procedural_rgb(32, 32, rng), 20 + i, {}, "img" + std::to_string(i)));

    SECTION("a perfect predictor reports the infinity sentinel and SSIM 1") {
        AwNet<float> dem_model(toy(Branch::demosaiced));
        make_constant_model(dem_model);
        auto constant = fuse_models<float>(nullptr, &dem_model, data[0], false);
        std::vector<SamplePair<float>> perfect;
        for (int i = 0; i < 2; ++i) {
            SamplePair<float> p;
            p.id = "p" + std::to_string(i);
            p.raw4 = Tensor<float>::zeros({4, 16, 16});
            p.demosaiced3 = data[i].demosaiced3;
            p.target3 = constant;
            perfect.push_back(std::move(p));
        }
        auto report = evaluate<float>(nullptr, &dem_model, perfect, false);
        for (const auto& row : report.rows) {
            CHECK(std::isinf(row.psnr_db));
            CHECK(row.ssim == 1.0);
        }
        CHECK(std::isinf(report.mean_psnr));
    }
    SECTION("means are the arithmetic average and metrics match the loss module") {
        AwNet<float> dem_model(toy(Branch::demosaiced));
        auto report = evaluate<float>(nullptr, &dem_model, data, false);
        REQUIRE(report.rows.size() == 3);
        double psum = 0.0, ssum = 0.0;
        for (const auto& row : report.rows) {
            psum += row.psnr_db;
            ssum += row.ssim;
        }
        CHECK(report.mean_psnr == Approx(psum / 3.0).margin(1e-12));
        CHECK(report.mean_ssim == Approx(ssum / 3.0).margin(1e-12));

        for (std::size_t i = 0; i < data.size(); ++i) {
            auto pred = fuse_models<float>(nullptr, &dem_model, data[i], false);
            auto to_b = [](const Tensor<float>& t) {
                return Tensor<float>::from_vector(
                    {1, t.extent(0), t.extent(1), t.extent(2)},
                    std::vector<float>(t.data().begin(), t.data().end()));
            };
            const double p = psnr(to_b(pred), to_b(data[i].target3));
            const double s = ssim(to_b(pred), to_b(data[i].target3)).item();
            const auto& row = *std::find_if(report.rows.begin(), report.rows.end(),
                                            [&](const EvalRow& r) { return r.id == data[i].id; });
            CHECK(std::abs(row.psnr_db - p) <= 1e-9);
            CHECK(std::abs(row.ssim - s) <= 1e-9);
        }
    }
    SECTION("iteration order does not change the report") {
        AwNet<float> dem_model(toy(Branch::demosaiced));
        auto report_a = evaluate<float>(nullptr, &dem_model, data, false);
        std::vector<SamplePair<float>> shuffled{data[2], data[0], data[1]};
        auto report_b = evaluate<float>(nullptr, &dem_model, shuffled, false);
        REQUIRE(report_a.rows.size() == report_b.rows.size());
        for (std::size_t i = 0; i < report_a.rows.size(); ++i) {
            CHECK(report_a.rows[i].id == report_b.rows[i].id);
            CHECK(report_a.rows[i].psnr_db == report_b.rows[i].psnr_db);
            CHECK(report_a.rows[i].ssim == report_b.rows[i].ssim);
        }
        CHECK(report_a.mean_psnr == report_b.mean_psnr);
    }
    SECTION("empty dataset is rejected") {
        AwNet<float> dem_model(toy(Branch::demosaiced));
        std::vector<SamplePair<float>> empty;
        CHECK_THROWS_AS(evaluate<float>(nullptr, &dem_model, empty, false),
                        std::invalid_argument);
    }
    SECTION("CSV has a header, one row per image and a trailing mean row") {
        AwNet<float> dem_model(toy(Branch::demosaiced));
        auto report = evaluate<float>(nullptr, &dem_model, data, false);
        const std::string csv = eval_report_csv(report);
        std::istringstream is(csv);
        std::string line;
        std::getline(is, line);
        CHECK(line == "id,psnr_db,ssim");
        std::vector<std::string> rows;
        while (std::getline(is, line)) rows.push_back(line);
        REQUIRE(rows.size() == 4);
        CHECK(rows[0].substr(0, 5) == "img0,");
        CHECK(rows[3].substr(0, 5) == "mean,");
    }
}
