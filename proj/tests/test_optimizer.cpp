#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "featmap/optim.hpp"

using namespace featmap;

namespace {

// independently coded schedule oracle (kept deliberately literal)
double schedule_oracle(int e, double gamma) {
    if (e == 0 || e == 1) return 0.33 * 0.33;
    if (e == 2 || e == 3) return 0.33;
    return std::exp(-gamma * double(e));
}

struct OneParam {
    ParamStore<float> store;
    int idx;
    explicit OneParam(std::vector<float> init) {
        idx = store.add_param(NetId::F, "w", {int(init.size())}, std::move(init));
    }
};

}  // namespace

TEST_CASE("lr_at matches the independent oracle exactly for epochs 0..50") {
    OptimConfig cfg;
    for (int e = 0; e <= 50; ++e) {
        CHECK(lr_scale(e, cfg.decay_gamma) == schedule_oracle(e, cfg.decay_gamma));
        CHECK(lr_at(e, cfg) == cfg.alpha0 * schedule_oracle(e, cfg.decay_gamma));
    }
}

TEST_CASE("schedule values: warm-up start, tripling, decay, discontinuity") {
    OptimConfig cfg;
    CHECK(lr_scale(0) == doctest::Approx(0.1089));
    CHECK(lr_at(0, cfg) == doctest::Approx(3.59370e-5).epsilon(1e-4));
    CHECK(lr_scale(2) == doctest::Approx(0.33));
    CHECK(lr_scale(10) == doctest::Approx(std::exp(-0.4)));
    // the e = 3 -> 4 jump is part of the formula, not a bug
    CHECK(lr_scale(3) == doctest::Approx(0.33));
    CHECK(lr_scale(4) == doctest::Approx(std::exp(-0.16)));
    CHECK(lr_scale(4) > lr_scale(3));
    CHECK_THROWS_AS((void)lr_scale(-1), ConfigError);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged while moments decay") {
    OneParam mp({1.5f, -2.5f});
    OptimConfig cfg;
    Adam<float> adam(cfg, {NetId::F});

    auto& e = mp.store.entry(mp.idx);
    e.adam_m = {0.5f, -0.25f};
    e.adam_v = {0.1f, 0.2f};
    Tape<float> t;
    mp.store.bind(t, {NetId::F});
    t.backward(sum(scalar_mul(mp.store.var(t, mp.idx), 0.0f)));  // zero grads

    adam.step(mp.store, t, lr_at(0, cfg));
    CHECK(e.value == std::vector<float>{1.5f, -2.5f});
    CHECK(e.adam_m[0] == doctest::Approx(0.45f));
    CHECK(e.adam_v[0] == doctest::Approx(0.0999f));
}

TEST_CASE("adam: first step with unit gradient moves by about the learning rate") {
    OneParam mp({0.0f});
    OptimConfig cfg;
    Adam<float> adam(cfg, {NetId::F});
    Tape<float> t;
    mp.store.bind(t, {NetId::F});
    t.backward(sum(mp.store.var(t, mp.idx)));  // gradient exactly 1

    const double lr = 1e-3;
    adam.step(mp.store, t, lr);
    // bias-corrected mhat = vhat = 1 at t=1
    CHECK(mp.store.entry(mp.idx).value[0] == doctest::Approx(-lr).epsilon(1e-6));
    CHECK(adam.t() == 1);
}

TEST_CASE("adam: identical runs are bit identical after 100 steps") {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        OneParam mp(std::vector<float>(16, 0.1f));
        OptimConfig cfg;
        Adam<float> adam(cfg, {NetId::F});
        for (int step = 0; step < 100; ++step) {
            Tape<float> t;
            mp.store.bind(t, {NetId::F});
            std::vector<float> g(16);
            for (auto& v : g) v = float(rng.uniform(-1, 1));
            t.backward(sum(mul(mp.store.var(t, mp.idx), t.constant({16}, g))));
            adam.step(mp.store, t, lr_at(step / 10, cfg));
        }
        return mp.store.entry(mp.idx).value;
    };
    CHECK(run(9) == run(9));
    CHECK(run(9) != run(10));
}

TEST_CASE("adam: non-finite gradient aborts naming the parameter, values intact") {
    OneParam mp({1.0f});
    OptimConfig cfg;
    Adam<float> adam(cfg, {NetId::F});
    Tape<float> t;
    mp.store.bind(t, {NetId::F});
    const float inf = std::numeric_limits<float>::infinity();
    t.backward(sum(mul(mp.store.var(t, mp.idx), t.constant({1}, {inf}))));
    try {
        adam.step(mp.store, t, 1e-3);
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& err) {
        CHECK(std::string(err.what()).find("'w'") != std::string::npos);
    }
    CHECK(mp.store.entry(mp.idx).value[0] == 1.0f);
    CHECK(adam.t() == 0);
}

TEST_CASE("optimizer config validation") {
    OptimConfig cfg;
    cfg.beta1 = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = OptimConfig{};
    cfg.alpha0 = -1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
