#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

using namespace std;
namespace fs = std::filesystem;

namespace {

// Every test shares one scratch directory, removed when the process exits.
const fs::path& scratch() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / ("emae-cli-test-" + std::to_string(::getpid()));
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is.good()) return "";
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

struct RunResult {
    int code = -1;
    std::string out;
};

RunResult run_cli(const std::string& args) {
    static int counter = 0;
    const std::string capture = (scratch() / ("out-" + std::to_string(counter++))).string();
    const std::string cmd = std::string(EMAE_BIN) + " " + args + " > " + capture + " 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(capture);
    return r;
}

// One tiny dataset and config shared by the training-path tests.
struct Fixture {
    std::string dataset;
    std::string config;
    std::string out_dir;
};

const Fixture& fixture() {
    static const Fixture fx = [] {
        Fixture f;
        f.dataset = (scratch() / "train.emaeds").string();
        f.out_dir = (scratch() / "runs").string();
        RunResult gen = run_cli("gen-data --out " + f.dataset + " --n 16");
        REQUIRE(gen.code == 0);

        f.config = (scratch() / "tiny.cfg").string();
        std::ofstream os(f.config);
        os << "dataset = " << f.dataset << "\n"
           << "out_dir = " << f.out_dir << "\n"
           << "d_enc = 8\nenc_blocks = 1\nenc_heads = 2\n"
           << "d_dec = 4\ndec_blocks = 1\ndec_heads = 1\n"
           << "epochs = 2\nwarmup_epochs = 1\nbatch_size = 16\n"
           << "checkpoint_interval = 1\n";
        return f;
    }();
    return fx;
}

std::string only_run_dir(const std::string& out_dir) {
    std::vector<std::string> entries;
    for (const auto& e : fs::directory_iterator(out_dir)) entries.push_back(e.path().string());
    REQUIRE(entries.size() == 1u);
    return entries[0];
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
    CHECK(run_cli("").code == 2);
    CHECK(run_cli("no-such-command").code == 2);
    CHECK(run_cli("mask-demo --frobnicate 1").code == 2);
    CHECK(run_cli("pretrain --config /nonexistent.cfg").code == 4);  // unreadable file
    CHECK(run_cli("grad-check --scope op --tol 0").code == 2);
    CHECK(run_cli("grad-check --scope nonsense --tol 1e-5").code == 2);
}

TEST_CASE("help is available everywhere and exits cleanly") {
    RunResult top = run_cli("--help");
    CHECK(top.code == 0);
    for (const char* sub : {"gen-data", "pretrain", "probe", "eval-consistency", "reconstruct",
                            "mask-demo", "grad-check"}) {
        CHECK(top.out.find(sub) != std::string::npos);
        CHECK(run_cli(std::string(sub) + " --help").code == 0);
    }
}

TEST_CASE("gen-data writes the declared number of bytes") {
    const std::string path = (scratch() / "gen.emaeds").string();
    RunResult r = run_cli("gen-data --out " + path + " --n 8");
    CHECK(r.code == 0);
    CHECK(fs::file_size(path) == 28u + 8u * 32 * 32 * 3 + 4u * 8);
}

TEST_CASE("mask-demo reports the paper quantities") {
    RunResult r = run_cli("mask-demo --n-patches 196 --k 4 --seed 0");
    CHECK(r.code == 0);
    CHECK(r.out.find("0.75") != std::string::npos);   // per-part mask ratio
    CHECK(r.out.find("98") != std::string::npos);     // pairwise overlap count

    CHECK(run_cli("mask-demo --n-patches 8 --k 3").code == 2);  // indivisible

    RunResult cov = run_cli("mask-demo --n-patches 16 --strategy pure-random --times 4 "
                            "--ratio 0.75 --seed 1");
    CHECK(cov.code == 0);
    CHECK(cov.out.find("coverage") != std::string::npos);
}

TEST_CASE("pretrain produces a loadable run and downstream commands work") {
    const Fixture& fx = fixture();
    RunResult train1 = run_cli("pretrain --config " + fx.config);
    CHECK(train1.code == 0);

    const std::string run_dir = only_run_dir(fx.out_dir);
    const std::string ckpt = run_dir + "/checkpoint.emae";
    const std::string metrics = run_dir + "/metrics.jsonl";
    CHECK(fs::exists(ckpt));
    CHECK(fs::exists(metrics));
    const std::string metrics_bytes = slurp(metrics);

    // byte-identical on repeat (deterministic mode is the default)
    RunResult train2 = run_cli("pretrain --config " + fx.config);
    CHECK(train2.code == 0);
    CHECK(slurp(metrics) == metrics_bytes);

    RunResult probe = run_cli("probe --checkpoint " + ckpt + " --train-set " + fx.dataset +
                              " --test-set " + fx.dataset + " --epochs 5");
    CHECK(probe.code == 0);
    CHECK(probe.out.find("accuracy") != std::string::npos);

    RunResult cons = run_cli("eval-consistency --checkpoint " + ckpt + " --dataset " +
                             fx.dataset + " --n-images 2");
    CHECK(cons.code == 0);
    CHECK(cons.out.find("mean_pairwise_l1") != std::string::npos);

    const std::string rec_dir = (scratch() / "recon").string();
    RunResult rec = run_cli("reconstruct --checkpoint " + ckpt + " --dataset " + fx.dataset +
                            " --out-dir " + rec_dir + " --index 0");
    CHECK(rec.code == 0);
    CHECK(fs::exists(rec_dir + "/part0_composite.ppm"));
    CHECK(fs::exists(rec_dir + "/part3_prediction.ppm"));

    CHECK(run_cli("eval-consistency --checkpoint " + ckpt + " --dataset " + fx.dataset +
                  " --k 2")
              .code == 2);
}

TEST_CASE("training failures map to the documented exit codes") {
    const Fixture& fx = fixture();

    // unreadable dataset: I/O error
    RunResult io = run_cli("pretrain --config " + fx.config + " --set dataset=/nonexistent");
    CHECK(io.code == 4);

    // unknown override key: usage error
    RunResult key = run_cli("pretrain --config " + fx.config + " --set no_such_key=1");
    CHECK(key.code == 2);

    // loss explosion: numeric abort
    RunResult nan = run_cli("pretrain --config " + fx.config +
                            " --set base_lr=1e300 --set epochs=4 --set seed=99");
    CHECK(nan.code == 3);

    // missing checkpoint for evaluation: I/O error
    RunResult probe = run_cli("probe --checkpoint /nonexistent.emae --train-set " + fx.dataset +
                              " --test-set " + fx.dataset);
    CHECK(probe.code == 4);
}

TEST_CASE("operator-scope gradient check passes on a fresh build") {
    RunResult r = run_cli("grad-check --scope op --tol 1e-5");
    CHECK(r.code == 0);
    CHECK(r.out.find("pass") != std::string::npos);
    CHECK(r.out.find("FAIL") == std::string::npos);
}
