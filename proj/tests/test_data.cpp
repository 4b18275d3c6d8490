#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "awnet/data.hpp"
#include "support/reference_ops.hpp"

using namespace awnet;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

// Sample-level mosaic flips (the raw sensor view, pattern NOT preserved).
Tensor<float> flip_mosaic(const Tensor<float>& m, FlipOp op) {
    const std::size_t H = m.extent(0), W = m.extent(1);
    std::vector<float> out(H * W);
    for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
            const std::size_t si = (op == FlipOp::vflip) ? H - 1 - i : i;
            const std::size_t sj = (op == FlipOp::hflip) ? W - 1 - j : j;
            out[i * W + j] = m.data()[si * W + sj];
        }
    return Tensor<float>::from_vector(m.shape(), std::move(out));
}

Tensor<float> plane(const Tensor<float>& raw4, std::size_t c) {
    const std::size_t h = raw4.extent(1), w = raw4.extent(2);
    std::vector<float> v(raw4.data().begin() + c * h * w,
                         raw4.data().begin() + (c + 1) * h * w);
    return Tensor<float>::from_vector({1, h, w}, std::move(v));
}

struct TempDir {
    fs::path path;
    TempDir() : path(fs::temp_directory_path() /
                     ("awnet_test_" + std::to_string(Catch::rngSeed()) + "_" +
                      std::to_string(counter()++))) {
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

}  // namespace

TEST_CASE("pack_bayer") {
    SECTION("2x2 mosaic lands in R, G1, B, G2 channel order") {
        auto m = Tensor<float>::from_vector({2, 2}, {0.1f, 0.2f, 0.3f, 0.4f});
        auto raw = pack_mosaic(m);
        REQUIRE(raw.shape() == Shape{4, 1, 1});
        CHECK(raw.data()[0] == 0.1f);  // R
        CHECK(raw.data()[1] == 0.2f);  // G1
        CHECK(raw.data()[2] == 0.4f);  // B
        CHECK(raw.data()[3] == 0.3f);  // G2
    }
    SECTION("unpack(pack(.)) is a bit-exact identity") {
        Rng rng(1);
        auto m = refops::random_tensor<float>({6, 8}, rng, 0.0f, 1.0f);
        CHECK(refops::bit_equal(m, unpack_mosaic(pack_mosaic(m))));
        BayerImage img;
        img.height = 4;
        img.width = 4;
        img.bit_depth = 16;
        img.mosaic = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
        auto packed = pack_bayer<float>(img, /*normalize=*/false);
        auto back = unpack_mosaic(packed);
        for (std::size_t i = 0; i < 16; ++i)
            CHECK(back.data()[i] == static_cast<float>(img.mosaic[i]));
    }
    SECTION("4x4 index mosaic packs each plane row-major") {
        std::vector<float> v(16);
        for (int i = 0; i < 16; ++i) v[i] = static_cast<float>(i);
        auto raw = pack_mosaic(Tensor<float>::from_vector({4, 4}, v));
        const float expect[4][4] = {{0, 2, 8, 10},   // R
                                    {1, 3, 9, 11},   // G1
                                    {5, 7, 13, 15},  // B
                                    {4, 6, 12, 14}}; // G2
        for (std::size_t c = 0; c < 4; ++c)
            for (std::size_t k = 0; k < 4; ++k) CHECK(raw.data()[c * 4 + k] == expect[c][k]);
    }
    SECTION("odd extents are rejected") {
        CHECK_THROWS_AS(pack_mosaic(Tensor<float>::zeros({3, 4})), std::invalid_argument);
    }
}

TEST_CASE("demosaic_bilinear") {
    SECTION("constant mosaic gives a constant image") {
        auto out = demosaic_bilinear(Tensor<float>::full({6, 6}, 0.42f));
        REQUIRE(out.shape() == Shape{3, 6, 6});
        for (float v : out.data()) CHECK(v == Approx(0.42f).margin(1e-7));
    }
    SECTION("sampled sites pass through unchanged") {
        Rng rng(2);
        auto m = refops::random_tensor<float>({8, 8}, rng, 0.0f, 1.0f);
        auto out = demosaic_bilinear(m);
        for (std::size_t i = 0; i < 8; ++i)
            for (std::size_t j = 0; j < 8; ++j) {
                const int site = (i % 2 == 0) ? (j % 2 == 0 ? 0 : 1) : (j % 2 == 0 ? 3 : 2);
                const int channel = site == 0 ? 0 : (site == 2 ? 2 : 1);
                CHECK(out.at({static_cast<std::size_t>(channel), i, j}) ==
                      Approx(m.at({i, j})).margin(1e-7));
            }
    }
    SECTION("a horizontal ramp is recovered exactly in the interior") {
        const std::size_t H = 8, W = 12;
        std::vector<float> v(H * W);
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j)
                v[i * W + j] = static_cast<float>(j) / static_cast<float>(W - 1);
        auto out = demosaic_bilinear(Tensor<float>::from_vector({H, W}, v));
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 1; i + 1 < H; ++i)
                for (std::size_t j = 1; j + 1 < W; ++j)
                    CHECK(out.at({c, i, j}) ==
                          Approx(static_cast<float>(j) / (W - 1)).margin(1e-6));
    }
}

TEST_CASE("synthesize_pair") {
    SECTION("degenerate degradation of a constant image keeps the constant") {
        Degradation deg;
        deg.gamma = 1.0;
        deg.color_matrix = {1, 0, 0, 0, 1, 0, 0, 0, 1};
        deg.noise_sigma = 0.0;
        auto rgb = Tensor<float>::full({3, 8, 8}, 0.5f);
        auto pair = synthesize_pair(rgb, 0, deg, "c");
        for (float v : pair.raw4.data()) CHECK(v == Approx(0.5f).margin(1e-7));
        for (float v : pair.demosaiced3.data()) CHECK(v == Approx(0.5f).margin(1e-6));
        CHECK(refops::bit_equal(pair.target3, rgb));
    }
    SECTION("same seed gives a bit-identical pair") {
        Rng rng(3);
        auto rgb = procedural_rgb(16, 16, rng);
        auto a = synthesize_pair(rgb, 42, {}, "a");
        auto b = synthesize_pair(rgb, 42, {}, "a");
        CHECK(refops::bit_equal(a.raw4, b.raw4));
        CHECK(refops::bit_equal(a.demosaiced3, b.demosaiced3));
        auto c = synthesize_pair(rgb, 43, {}, "a");
        CHECK_FALSE(refops::bit_equal(a.raw4, c.raw4));
    }
    SECTION("empirical noise level tracks sigma within 10%") {
        Degradation clean;
        clean.noise_sigma = 0.0;
        Degradation noisy;
        noisy.noise_sigma = 0.05;
        auto rgb = Tensor<float>::full({3, 256, 256}, 0.5f);
        auto p0 = synthesize_pair(rgb, 7, clean, "x");
        auto p1 = synthesize_pair(rgb, 7, noisy, "x");
        double var = 0.0;
        const std::size_t n = p0.raw4.numel();
        for (std::size_t i = 0; i < n; ++i) {
            const double d = p1.raw4.data()[i] - p0.raw4.data()[i];
            var += d * d;
        }
        const double stddev = std::sqrt(var / n);
        CHECK(stddev == Approx(0.05).epsilon(0.10));
    }
    SECTION("optional misalignment shifts the sensor view against the target") {
        Degradation deg;
        deg.noise_sigma = 0.0;
        deg.max_shift = 2;
        Rng rng2(8);
        auto rgb = procedural_rgb(16, 16, rng2);
        auto shifted = synthesize_pair(rgb, 3, deg, "m");
        deg.max_shift = 0;
        auto aligned = synthesize_pair(rgb, 3, deg, "m");
        CHECK(refops::bit_equal(shifted.target3, aligned.target3));
        CHECK_FALSE(refops::bit_equal(shifted.raw4, aligned.raw4));
        // deterministic given the seed
        deg.max_shift = 2;
        auto again = synthesize_pair(rgb, 3, deg, "m");
        CHECK(refops::bit_equal(shifted.raw4, again.raw4));
    }
    SECTION("a singular color matrix is rejected") {
        Degradation deg;
        deg.color_matrix = {1, 0, 0, 1, 0, 0, 0, 0, 1};
        CHECK_THROWS_AS(synthesize_pair(Tensor<float>::zeros({3, 4, 4}), 0, deg),
                        std::invalid_argument);
    }
}

TEST_CASE("augment") {
    Rng rng(4);
    auto rgb = procedural_rgb(12, 16, rng);
    auto pair = synthesize_pair(rgb, 9, {}, "p");

    SECTION("none is an identity") {
        auto out = augment(pair, FlipOp::none);
        CHECK(refops::bit_equal(out.raw4, pair.raw4));
        CHECK(refops::bit_equal(out.target3, pair.target3));
    }
    SECTION("flips are involutions") {
        for (FlipOp op : {FlipOp::hflip, FlipOp::vflip}) {
            auto twice = augment(augment(pair, op), op);
            CHECK(refops::bit_equal(twice.raw4, pair.raw4));
            CHECK(refops::bit_equal(twice.demosaiced3, pair.demosaiced3));
            CHECK(refops::bit_equal(twice.target3, pair.target3));
        }
    }
    SECTION("hflip reverses target columns") {
        auto out = augment(pair, FlipOp::hflip);
        const std::size_t W = pair.target3.extent(2);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < pair.target3.extent(1); ++i)
                for (std::size_t j = 0; j < W; ++j)
                    CHECK(out.target3.at({c, i, j}) == pair.target3.at({c, i, W - 1 - j}));
    }
    SECTION("flips commute and compose into the 4-element group") {
        auto hv = augment(augment(pair, FlipOp::hflip), FlipOp::vflip);
        auto vh = augment(augment(pair, FlipOp::vflip), FlipOp::hflip);
        CHECK(refops::bit_equal(hv.raw4, vh.raw4));
        CHECK(refops::bit_equal(hv.target3, vh.target3));
        auto id = augment(augment(hv, FlipOp::vflip), FlipOp::hflip);
        CHECK(refops::bit_equal(id.raw4, pair.raw4));
    }
    SECTION("plane flips with the G1/G2 swap track the mosaic geometry") {
        auto m = refops::random_tensor<float>({8, 10}, rng, 0.0f, 1.0f);
        SamplePair<float> p;
        p.raw4 = pack_mosaic(m);
        p.demosaiced3 = Tensor<float>::zeros({3, 8, 10});
        p.target3 = Tensor<float>::zeros({3, 8, 10});

        // Augmented planes are flips of the original planes with greens
        // swapped: (R, G1, B, G2) -> (R_f, G2_f, B_f, G1_f).
        auto aug = augment(p, FlipOp::hflip);
        auto orig = p.raw4;
        auto flip_plane = [&](std::size_t c) {
            return detail_bayer::flip_planes(plane(orig, c), FlipOp::hflip);
        };
        CHECK(refops::bit_equal(plane(aug.raw4, 0), flip_plane(0)));
        CHECK(refops::bit_equal(plane(aug.raw4, 1), flip_plane(3)));
        CHECK(refops::bit_equal(plane(aug.raw4, 2), flip_plane(2)));
        CHECK(refops::bit_equal(plane(aug.raw4, 3), flip_plane(1)));

        // A sample-level mosaic hflip instead relabels (R,G1,B,G2) as
        // (G1_f, R_f, G2_f, B_f): the flipped pattern is GRBG, not RGGB.
        auto repacked = pack_mosaic(flip_mosaic(m, FlipOp::hflip));
        CHECK(refops::bit_equal(plane(repacked, 0), flip_plane(1)));
        CHECK(refops::bit_equal(plane(repacked, 1), flip_plane(0)));
        CHECK(refops::bit_equal(plane(repacked, 2), flip_plane(3)));
        CHECK(refops::bit_equal(plane(repacked, 3), flip_plane(2)));

        // And vertically: (R,G1,B,G2) -> (G2_f, B_f, G1_f, R_f).
        auto vpacked = pack_mosaic(flip_mosaic(m, FlipOp::vflip));
        auto vflip_plane = [&](std::size_t c) {
            return detail_bayer::flip_planes(plane(orig, c), FlipOp::vflip);
        };
        CHECK(refops::bit_equal(plane(vpacked, 0), vflip_plane(3)));
        CHECK(refops::bit_equal(plane(vpacked, 1), vflip_plane(2)));
        CHECK(refops::bit_equal(plane(vpacked, 2), vflip_plane(1)));
        CHECK(refops::bit_equal(plane(vpacked, 3), vflip_plane(0)));
    }
}

TEST_CASE("praw containers") {
    TempDir tmp;
    const std::string path = (tmp.path / "img.praw").string();
    SECTION("write, read, write is byte-identical for both depths") {
        for (unsigned depth : {8u, 16u}) {
            BayerImage img;
            img.height = 4;
            img.width = 6;
            img.bit_depth = depth;
            Rng rng(depth);
            std::uniform_int_distribution<int> d(0, img.max_value());
            img.mosaic.resize(24);
            for (auto& v : img.mosaic) v = static_cast<std::uint16_t>(d(rng));
            io::write_praw(path, img);
            auto back = io::read_praw(path);
            CHECK(back.bit_depth == depth);
            CHECK(back.mosaic == img.mosaic);
            const std::string path2 = (tmp.path / "img2.praw").string();
            io::write_praw(path2, back);
            std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
            std::string sa((std::istreambuf_iterator<char>(a)), {});
            std::string sb((std::istreambuf_iterator<char>(b)), {});
            CHECK(sa == sb);
        }
    }
    SECTION("corrupted magic is a format error") {
        BayerImage img;
        img.height = 2;
        img.width = 2;
        img.mosaic = {1, 2, 3, 4};
        io::write_praw(path, img);
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.put('X');
        f.close();
        CHECK_THROWS_AS(io::read_praw(path), io::SerializationError);
    }
    SECTION("truncated payloads are rejected") {
        BayerImage img;
        img.height = 4;
        img.width = 4;
        img.mosaic.assign(16, 9);
        io::write_praw(path, img);
        fs::resize_file(path, 20);
        CHECK_THROWS_AS(io::read_praw(path), io::SerializationError);
    }
}

TEST_CASE("png round trips") {
    TempDir tmp;
    Rng rng(5);
    for (unsigned depth : {8u, 16u}) {
        const float scale = 1.0f / static_cast<float>((1u << depth) - 1);
        std::uniform_int_distribution<int> d(0, (1 << depth) - 1);
        std::vector<float> v(3 * 6 * 7);
        for (auto& x : v) x = static_cast<float>(d(rng)) * scale;
        auto img = Tensor<float>::from_vector({3, 6, 7}, v);
        const std::string path = (tmp.path / ("t" + std::to_string(depth) + ".png")).string();
        io::write_png_rgb(path, img, depth);
        unsigned got_depth = 0;
        auto back = io::read_png_rgb(path, &got_depth);
        CHECK(got_depth == depth);
        CHECK(refops::bit_equal(back, img));
    }
}

TEST_CASE("load_dataset") {
    TempDir tmp;
    const std::string root = tmp.path.string();
    for (const char* sub : {"train/raw", "train/demosaiced", "train/target"})
        fs::create_directories(tmp.path / "train" / fs::path(sub).filename());

    SECTION("empty directory yields an empty stream") {
        CHECK(load_dataset(root, "train").empty());
    }
    SECTION("well-formed ids load in sorted order") {
        Rng rng(6);
        for (const char* id : {"b", "a", "c"}) {
            auto pair = synthesize_pair(procedural_rgb(8, 8, rng), 1, {}, id);
            io::write_praw((tmp.path / "train/raw" / (std::string(id) + ".praw")).string(),
                           to_bayer_image(unpack_mosaic(pair.raw4), 16));
            io::write_png_rgb(
                (tmp.path / "train/demosaiced" / (std::string(id) + ".png")).string(),
                pair.demosaiced3, 16);
            io::write_png_rgb((tmp.path / "train/target" / (std::string(id) + ".png")).string(),
                              pair.target3, 16);
        }
        auto pairs = load_dataset(root, "train");
        REQUIRE(pairs.size() == 3);
        CHECK(pairs[0].id == "a");
        CHECK(pairs[1].id == "b");
        CHECK(pairs[2].id == "c");
        CHECK(pairs[0].raw4.shape() == Shape{4, 4, 4});
        CHECK(pairs[0].target3.shape() == Shape{3, 8, 8});
    }
    SECTION("a target without a raw names the orphan") {
        Rng rng(7);
        auto pair = synthesize_pair(procedural_rgb(8, 8, rng), 1, {}, "lonely");
        io::write_png_rgb((tmp.path / "train/target/lonely.png").string(), pair.target3);
        try {
            load_dataset(root, "train");
            FAIL("expected an orphan error");
        } catch (const std::invalid_argument& e) {
            CHECK(std::string(e.what()).find("lonely") != std::string::npos);
        }
    }
}
