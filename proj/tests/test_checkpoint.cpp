#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "emae/checkpoint.hpp"
#include "emae/errors.hpp"
#include "emae/model.hpp"
#include "emae/optim.hpp"

using namespace emae;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.img_h = 16;
    cfg.img_w = 16;
    cfg.channels = 1;
    cfg.patch = 8;
    cfg.d_enc = 4;
    cfg.enc_blocks = 1;
    cfg.enc_heads = 1;
    cfg.d_dec = 4;
    cfg.dec_blocks = 1;
    cfg.dec_heads = 1;
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    REQUIRE(os.good());
}

struct TempDir {
    fs::path dir;
    TempDir() {
        dir = fs::temp_directory_path() / ("emae-ckpt-test-" + std::to_string(::getpid()));
        fs::create_directories(dir);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(dir, ec);
    }
    std::string path(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("save, load, save round-trips byte-identically") {
    TempDir tmp;
    ModelConfig cfg = tiny_config();
    Model model(cfg);
    model.init_params(7);
    AdamW optim(model, {});
    // mutate moments so their round-trip is observable
    optim.first_moments()[0][0] = 0.125;
    optim.second_moments()[2][1] = 2.5;
    optim.set_step_count(42);

    const std::string a = tmp.path("a.emae");
    save_checkpoint(a, model, optim, 42, 0xDEADBEEFu);

    Model restored(cfg);
    AdamW optim2(restored, {});
    LoadedCheckpoint info = load_checkpoint(a, restored, optim2);
    CHECK(info.step == 42);
    CHECK(info.config_hash == 0xDEADBEEFu);
    CHECK(info.config == cfg);
    CHECK(optim2.first_moments()[0][0] == 0.125);
    CHECK(optim2.second_moments()[2][1] == 2.5);
    for (size_t i = 0; i < model.params().size(); ++i) {
        CHECK(*restored.params()[i].data == *model.params()[i].data);
    }

    const std::string b = tmp.path("b.emae");
    save_checkpoint(b, restored, optim2, info.step, info.config_hash);
    CHECK(slurp(a) == slurp(b));
}

TEST_CASE("peek returns the stored architecture without a model") {
    TempDir tmp;
    ModelConfig cfg = tiny_config();
    cfg.enc_blocks = 2;
    Model model(cfg);
    model.init_params(9);
    AdamW optim(model, {});
    const std::string path = tmp.path("peek.emae");
    save_checkpoint(path, model, optim, 5, 77);

    CHECK(peek_checkpoint_config(path) == cfg);
}

TEST_CASE("mismatched architecture is rejected") {
    TempDir tmp;
    Model model(tiny_config());
    model.init_params(11);
    AdamW optim(model, {});
    const std::string path = tmp.path("m.emae");
    save_checkpoint(path, model, optim, 1, 1);

    ModelConfig other = tiny_config();
    other.d_enc = 8;
    other.enc_heads = 2;
    Model wrong(other);
    AdamW wrong_optim(wrong, {});
    CHECK_THROWS_AS(load_checkpoint(path, wrong, wrong_optim), IncompatibleCheckpoint);
}

TEST_CASE("bad magic and truncation fail with an offset") {
    TempDir tmp;
    Model model(tiny_config());
    model.init_params(13);
    AdamW optim(model, {});
    const std::string good = tmp.path("good.emae");
    save_checkpoint(good, model, optim, 3, 3);
    const std::string bytes = slurp(good);

    const std::string bad_magic = tmp.path("magic.emae");
    std::string corrupted = bytes;
    corrupted[0] = 'X';
    spit(bad_magic, corrupted);
    Model m2(tiny_config());
    AdamW o2(m2, {});
    CHECK_THROWS_AS(load_checkpoint(bad_magic, m2, o2), FormatError);

    const std::string cut = tmp.path("cut.emae");
    spit(cut, bytes.substr(0, bytes.size() / 2));
    try {
        load_checkpoint(cut, m2, o2);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }

    CHECK_THROWS_AS(load_checkpoint(tmp.path("missing.emae"), m2, o2), IoError);
}
