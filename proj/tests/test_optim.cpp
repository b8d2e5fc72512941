#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "emae/errors.hpp"
#include "emae/model.hpp"
#include "emae/optim.hpp"

using namespace emae;

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

// All-zero gradient arrays shaped like the model, with one writable slot.
std::vector<Values> zero_grads(const Model& model) {
    std::vector<Values> gs;
    for (const NamedParam& prm : model.params()) gs.emplace_back(prm.data->size(), 0.0);
    return gs;
}

std::vector<const Values*> grad_ptrs(const std::vector<Values>& gs) {
    std::vector<const Values*> ptrs;
    for (const Values& g : gs) ptrs.push_back(&g);
    return ptrs;
}

}  // namespace

TEST_CASE("schedule endpoints and warmup boundary") {
    ScheduleConfig cfg{1.5e-3, 2, 30};
    const int64_t spe = 7;
    CHECK(lr_at(0, cfg, spe) == 0.0);
    CHECK(lr_at(2 * spe, cfg, spe) == doctest::Approx(cfg.base_lr).epsilon(1e-15));
    // continuity: one step before the boundary is within one ramp increment
    double before = lr_at(2 * spe - 1, cfg, spe);
    CHECK(cfg.base_lr - before < cfg.base_lr / (2 * spe) + 1e-15);
    CHECK(before < cfg.base_lr);
    // final step decays to ~0
    CHECK(lr_at(30 * spe, cfg, spe) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
}

TEST_CASE("cosine midpoint hits half the base rate") {
    ScheduleConfig cfg{2e-3, 2, 10};
    const int64_t spe = 5;
    const int64_t warm = 2 * spe;
    const int64_t total = 10 * spe;
    const int64_t mid = warm + (total - warm) / 2;
    CHECK(lr_at(mid, cfg, spe) == doctest::Approx(1e-3).epsilon(1e-12));
}

TEST_CASE("full schedule matches the closed form pointwise") {
    ScheduleConfig cfg{1.0, 2, 10};
    const int64_t spe = 5;
    const int64_t warm = 2 * spe;
    const int64_t total = 10 * spe;
    for (int64_t s = 0; s <= total; ++s) {
        double want;
        if (s < warm) {
            want = static_cast<double>(s) / static_cast<double>(warm);
        } else {
            double prog = static_cast<double>(s - warm) / static_cast<double>(total - warm);
            want = 0.5 * (1.0 + std::cos(M_PI * prog));
        }
        CHECK(lr_at(s, cfg, spe) == doctest::Approx(want).epsilon(1e-14));
    }
}

TEST_CASE("first step with unit gradient moves by about minus lr") {
    Model model(tiny_config());
    model.init_params(1);
    OptimConfig oc;
    oc.weight_decay = 0.0;
    AdamW optim(model, oc);

    const Values before = *model.params()[0].data;
    std::vector<Values> gs = zero_grads(model);
    gs[0][0] = 1.0;
    optim.step(model, grad_ptrs(gs), 0.1);

    const Values& after = *model.params()[0].data;
    // m-hat = g, v-hat = g^2 after bias correction, so the step is
    // -lr * g / (|g| + eps) = -0.1 up to eps
    CHECK(after[0] - before[0] == doctest::Approx(-0.1).epsilon(1e-6));
    for (size_t e = 1; e < before.size(); ++e) CHECK(after[e] == before[e]);
    CHECK(optim.step_count() == 1);
}

TEST_CASE("zero gradient without decay leaves parameters untouched") {
    Model model(tiny_config());
    model.init_params(2);
    OptimConfig oc;
    oc.weight_decay = 0.0;
    AdamW optim(model, oc);

    std::vector<Values> snapshot;
    for (const NamedParam& prm : model.params()) snapshot.push_back(*prm.data);

    std::vector<Values> gs = zero_grads(model);
    optim.step(model, grad_ptrs(gs), 0.05);
    // absent gradients mean the same thing as zeros
    std::vector<const Values*> absent(model.params().size(), nullptr);
    optim.step(model, absent, 0.05);

    for (size_t i = 0; i < snapshot.size(); ++i) CHECK(*model.params()[i].data == snapshot[i]);
}

TEST_CASE("decoupled decay scales by exactly 1 - lr*wd") {
    Model model(tiny_config());
    model.init_params(3);
    Values& w = *model.param("patch_embed.w").data;
    w[0] = 3.0;
    OptimConfig oc;
    oc.weight_decay = 0.05;
    AdamW optim(model, oc);

    std::vector<Values> gs = zero_grads(model);
    optim.step(model, grad_ptrs(gs), 0.1);
    CHECK(w[0] == 3.0 * 0.995);
}

TEST_CASE("non-finite gradients abort with the parameter name") {
    Model model(tiny_config());
    model.init_params(4);
    AdamW optim(model, {});

    std::vector<Values> gs = zero_grads(model);
    gs[1][0] = std::numeric_limits<double>::quiet_NaN();
    const std::string victim = model.params()[1].name;
    try {
        optim.step(model, grad_ptrs(gs), 1e-3);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(e.where == victim);
    }

    gs[1][0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(optim.step(model, grad_ptrs(gs), 1e-3), NumericError);
}

TEST_CASE("global clipping rescales large gradients") {
    ModelConfig mc = tiny_config();
    Model a(mc), b(mc);
    a.init_params(5);
    b.init_params(5);

    OptimConfig clip_cfg;
    clip_cfg.weight_decay = 0.0;
    clip_cfg.grad_clip = 1.0;
    OptimConfig plain_cfg;
    plain_cfg.weight_decay = 0.0;
    AdamW clipped(a, clip_cfg), plain(b, plain_cfg);

    // gradient of global L2 norm 2: clipping at 1 should halve it
    std::vector<Values> big = zero_grads(a);
    big[0][0] = 2.0;
    std::vector<Values> halved = zero_grads(b);
    halved[0][0] = 1.0;

    clipped.step(a, grad_ptrs(big), 0.01);
    plain.step(b, grad_ptrs(halved), 0.01);
    for (size_t i = 0; i < a.params().size(); ++i) {
        const Values& pa = *a.params()[i].data;
        const Values& pb = *b.params()[i].data;
        for (size_t e = 0; e < pa.size(); ++e) {
            CHECK(pa[e] == doctest::Approx(pb[e]).epsilon(1e-12));
        }
    }
}

TEST_CASE("two steps follow the reference recursion") {
    Model model(tiny_config());
    model.init_params(6);
    Values& w = *model.param("patch_embed.w").data;
    const double w0 = w[0];
    OptimConfig oc;
    oc.weight_decay = 0.0;
    AdamW optim(model, oc);

    std::vector<Values> gs = zero_grads(model);
    const double g1 = 0.7, g2 = -0.3, lr = 0.02;
    gs[0][0] = g1;
    optim.step(model, grad_ptrs(gs), lr);
    gs[0][0] = g2;
    optim.step(model, grad_ptrs(gs), lr);

    // hand recursion with betas (0.9, 0.95) and eps 1e-8
    double m = 0, v = 0, x = w0;
    for (int t = 1; t <= 2; ++t) {
        double g = t == 1 ? g1 : g2;
        m = 0.9 * m + 0.1 * g;
        v = 0.95 * v + 0.05 * g * g;
        double mh = m / (1 - std::pow(0.9, t));
        double vh = v / (1 - std::pow(0.95, t));
        x -= lr * mh / (std::sqrt(vh) + 1e-8);
    }
    CHECK(w[0] == doctest::Approx(x).epsilon(1e-14));
}
