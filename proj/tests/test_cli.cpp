#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#ifndef AWNET_CLI_PATH
#error "AWNET_CLI_PATH must point at the CLI binary"
#endif

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = 0;
    std::string out, err;
};

RunResult run_cli(const std::string& args, const fs::path& workdir) {
    const fs::path out = workdir / "stdout.txt";
    const fs::path err = workdir / "stderr.txt";
    const std::string cmd = std::string(AWNET_CLI_PATH) + " " + args + " > " +
                            out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    auto slurp = [](const fs::path& p) {
        std::ifstream is(p);
        return std::string((std::istreambuf_iterator<char>(is)), {});
    };
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

std::string tree_digest(const fs::path& root) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::string digest;
    for (const auto& f : files) {
        std::ifstream is(f, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(is)), {});
        digest += fs::relative(f, root).string() + ":" + std::to_string(bytes.size()) + ":";
        std::size_t h = 1469598103934665603ull;
        for (unsigned char c : bytes) {
            h ^= c;
            h *= 1099511628211ull;
        }
        digest += std::to_string(h) + "\n";
    }
    return digest;
}

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / ("awnet_cli_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("selftest exits 0 and prints per-invariant pass lines") {
    TempDir tmp;
    auto r = run_cli("selftest", tmp.path);
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("[PASS]") != std::string::npos);
    CHECK(r.out.find("selftest clean") != std::string::npos);
    CHECK(r.out.find("[FAIL]") == std::string::npos);
}

TEST_CASE("unknown flags produce usage text and a nonzero exit") {
    TempDir tmp;
    auto r = run_cli("selftest --no-such-flag", tmp.path);
    CHECK(r.exit_code != 0);
    CHECK((r.err.find("--no-such-flag") != std::string::npos ||
           r.out.find("--no-such-flag") != std::string::npos));
}

TEST_CASE("infer without a usable checkpoint fails and names the path") {
    TempDir tmp;
    SECTION("no checkpoint at all") {
        auto r = run_cli("infer --input-raw x.praw", tmp.path);
        CHECK(r.exit_code != 0);
        CHECK(r.err.find("error:") != std::string::npos);
    }
    SECTION("missing checkpoint file") {
        const std::string missing = (tmp.path / "nope.awck").string();
        auto r = run_cli("infer --raw-checkpoint " + missing + " --input-raw x.praw",
                         tmp.path);
        CHECK(r.exit_code != 0);
        CHECK(r.err.find(missing) != std::string::npos);
    }
}

TEST_CASE("gen-data is deterministic over file bytes") {
    TempDir tmp;
    const std::string a = (tmp.path / "a").string();
    const std::string b = (tmp.path / "b").string();
    auto ra = run_cli("--seed 7 gen-data --count 8 --size 32 --out " + a, tmp.path);
    auto rb = run_cli("--seed 7 gen-data --count 8 --size 32 --out " + b, tmp.path);
    REQUIRE(ra.exit_code == 0);
    REQUIRE(rb.exit_code == 0);
    CHECK(tree_digest(a) == tree_digest(b));
    auto rc = run_cli("--seed 8 gen-data --count 8 --size 32 --out " + a, tmp.path);
    REQUIRE(rc.exit_code == 0);
    CHECK(tree_digest(a) != tree_digest(b));
}

TEST_CASE("gen-data, train, eval and infer round trip") {
    TempDir tmp;
    const std::string data = (tmp.path / "data").string();
    REQUIRE(run_cli("--seed 3 gen-data --count 4 --size 32 --out " + data, tmp.path)
                .exit_code == 0);
    REQUIRE(run_cli("--seed 4 gen-data --count 2 --size 32 --split val --out " + data,
                    tmp.path)
                .exit_code == 0);

    const std::string runs = (tmp.path / "runs").string();
    auto train = run_cli(
        "train --branch demosaiced --dataset " + data +
            " --out " + runs +
            " --epochs 2 --batch-size 2 --base-channels 4 --growth-rate 2 --pyramid-bins 1",
        tmp.path);
    REQUIRE(train.exit_code == 0);
    CHECK(train.out.find("epoch 1") != std::string::npos);
    const std::string ckpt = runs + "/demosaiced.awck";
    REQUIRE(fs::exists(ckpt));

    const std::string report = (tmp.path / "report.csv").string();
    auto eval = run_cli("eval --demosaiced-checkpoint " + ckpt + " --dataset " + data +
                            " --split val --report " + report,
                        tmp.path);
    REQUIRE(eval.exit_code == 0);
    CHECK(eval.out.find("id,psnr_db,ssim") != std::string::npos);
    CHECK(eval.out.find("mean,") != std::string::npos);
    REQUIRE(fs::exists(report));

    const std::string pred = (tmp.path / "pred.png").string();
    auto infer = run_cli("infer --demosaiced-checkpoint " + ckpt + " --input-demosaiced " +
                             data + "/val/demosaiced/pair_0000.png --out " + pred,
                         tmp.path);
    REQUIRE(infer.exit_code == 0);
    CHECK(fs::exists(pred));

    // resume training for one more epoch from the written checkpoint
    auto resume = run_cli(
        "train --branch demosaiced --dataset " + data + " --out " + runs +
            " --epochs 3 --batch-size 2 --base-channels 4 --growth-rate 2 "
            "--pyramid-bins 1 --resume " + ckpt,
        tmp.path);
    REQUIRE(resume.exit_code == 0);
    CHECK(resume.out.find("epoch 3") != std::string::npos);
}

TEST_CASE("gradcheck subcommand runs clean") {
    TempDir tmp;
    auto r = run_cli("gradcheck", tmp.path);
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("gradcheck clean") != std::string::npos);
}
