#include "test_util.hpp"

#include <doctest.h>

#include <set>

using namespace devignet;
using testutil::max_abs_diff;

TEST_CASE("layer_norm zeroes constant-channel inputs") {
    ParamStore<float> ps;
    nn::LayerNorm<float> ln(ps, "ln", 4);
    Tensor<float> x({1, 4, 2, 2});
    for (int64_t c = 0; c < 4; ++c)
        for (int64_t p = 0; p < 4; ++p) x.data[c * 4 + p] = 0.8f; // same value in every channel
    auto y = ln.channels(make_leaf(x));
    for (float v : y->value.data) CHECK(v == 0.0f); // zero-mean numerator is exact
}

TEST_CASE("layer_norm maps a (1,3) channel pair to (-1,1) before affine") {
    ParamStore<float> ps;
    nn::LayerNorm<float> ln(ps, "ln", 2);
    Tensor<float> x({1, 2, 1, 1});
    x.data[0] = 1.0f;
    x.data[1] = 3.0f;
    auto y = ln.channels(make_leaf(x));
    CHECK(y->value.data[0] == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(y->value.data[1] == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(y->value.shape == x.shape);
}

TEST_CASE("simple_gate equals the split-and-multiply oracle bit for bit") {
    SUBCASE("constant halves") {
        Tensor<float> x({1, 4, 2, 2});
        for (int64_t i = 0; i < 8; ++i) x.data[i] = 2.0f;      // X half
        for (int64_t i = 8; i < 16; ++i) x.data[i] = 3.0f;     // Y half
        auto y = acem::simple_gate(make_leaf(x));
        for (float v : y->value.data) CHECK(v == 6.0f);
    }
    SUBCASE("multiplicative identity") {
        Rng rng(21);
        Tensor<float> x = testutil::rand_tensor<float>(rng, {1, 6, 3, 3});
        for (int64_t i = 27; i < 54; ++i) x.data[i] = 1.0f; // Y half all ones
        auto y = acem::simple_gate(make_leaf(x));
        for (int64_t i = 0; i < 27; ++i) CHECK(y->value.data[i] == x.data[i]);
    }
    SUBCASE("random input, exact equality") {
        Rng rng(22);
        Tensor<float> x = testutil::rand_tensor<float>(rng, {1, 8, 4, 4}, -1.0, 1.0);
        auto y = acem::simple_gate(make_leaf(x));
        const int64_t half = 4 * 16;
        for (int64_t i = 0; i < half; ++i) CHECK(y->value.data[i] == x.data[i] * x.data[half + i]);
    }
    SUBCASE("odd channel count rejected") {
        auto odd = make_leaf(Tensor<float>::zeros({1, 5, 2, 2}));
        CHECK_THROWS_AS((void)acem::simple_gate(odd), StructuralError);
    }
}

TEST_CASE("sca matches the pool/matmul/broadcast oracle") {
    SUBCASE("identity map squares constants") {
        Tensor<float> x({1, 3, 2, 2});
        const float cv[3] = {0.5f, 0.8f, 1.2f};
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t p = 0; p < 4; ++p) x.data[c * 4 + p] = cv[c];
        Tensor<float> eye({3, 3});
        for (int i = 0; i < 3; ++i) eye.data[i * 3 + i] = 1.0f;
        auto y = acem::sca(make_leaf(x), make_leaf(eye));
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t p = 0; p < 4; ++p)
                CHECK(y->value.data[c * 4 + p] == doctest::Approx(cv[c] * cv[c]).epsilon(1e-6));
    }
    SUBCASE("zero map annihilates") {
        Rng rng(23);
        auto x = testutil::rand_var<float>(rng, {2, 4, 3, 3});
        auto y = acem::sca(x, make_leaf(Tensor<float>::zeros({4, 4})));
        for (float v : y->value.data) CHECK(v == 0.0f);
    }
    SUBCASE("random input matches direct formula") {
        Rng rng(24);
        Tensor<double> x = testutil::rand_tensor<double>(rng, {1, 4, 2, 2}, -1.0, 1.0);
        Tensor<double> w = testutil::rand_tensor<double>(rng, {4, 4}, -1.0, 1.0);
        auto y = acem::sca(make_leaf(x), make_leaf(w));
        // oracle: pool -> matmul -> broadcast multiply
        for (int64_t c = 0; c < 4; ++c) {
            double mapped = 0.0;
            for (int64_t i = 0; i < 4; ++i) {
                double pool = 0.0;
                for (int64_t p = 0; p < 4; ++p) pool += x.data[i * 4 + p];
                pool /= 4.0;
                mapped += pool * w.data[i * 4 + c];
            }
            for (int64_t p = 0; p < 4; ++p)
                CHECK(y->value.data[c * 4 + p] == doctest::Approx(x.data[c * 4 + p] * mapped).epsilon(1e-6));
        }
    }
}

TEST_CASE("acem_block identity and gradient") {
    AcemConfig cfg;
    cfg.channels = 8;
    ParamStore<float> ps;
    Rng rng(25);
    AcemBlock<float> block(ps, rng, "blk", cfg);

    auto x = testutil::rand_var<float>(rng, {1, 8, 6, 6});

    SUBCASE("zeroing the final projection makes the block the identity") {
        std::fill(block.project.w->value.data.begin(), block.project.w->value.data.end(), 0.0f);
        std::fill(block.project.b->value.data.begin(), block.project.b->value.data.end(), 0.0f);
        auto y = block(x);
        CHECK(max_abs_diff(y->value, x->value) == 0.0);
    }
    SUBCASE("shape preserved") {
        CHECK(block(x)->value.shape == x->value.shape);
    }
    SUBCASE("input receives nonzero gradient") {
        ParamStore<double> psd;
        Rng rngd(26);
        AcemConfig dcfg = cfg;
        AcemBlock<double> dblock(psd, rngd, "blk", dcfg);
        auto xd = testutil::rand_var<double>(rngd, {1, 8, 5, 5}, 0.0, 1.0, true);
        auto loss = ops::mean_all(dblock(xd));
        backward(loss);
        CHECK(testutil::max_abs(xd->grad) > 0.0);
    }
}

TEST_CASE("acem_block graph contains no nonlinearity besides the gate") {
    AcemConfig cfg;
    cfg.channels = 8;
    ParamStore<float> ps;
    Rng rng(27);
    AcemBlock<float> block(ps, rng, "blk", cfg);
    auto x = testutil::rand_var<float>(rng, {1, 8, 4, 4}, 0.0, 1.0, true);
    auto y = block(x);

    const std::set<std::string> allowed = {"param",      "leaf",         "add",    "conv1x1",
                                           "dwconv3x3",  "layernorm_c",  "simple_gate", "gap",
                                           "linear",     "channel_scale"};
    std::set<std::string> seen;
    std::vector<Node<float>*> stack = {y.get()};
    std::set<Node<float>*> visited;
    while (!stack.empty()) {
        Node<float>* n = stack.back();
        stack.pop_back();
        if (!visited.insert(n).second) continue;
        seen.insert(n->op);
        for (const auto& p : n->parents) stack.push_back(p.get());
    }
    for (const auto& op : seen) {
        CAPTURE(op);
        CHECK(allowed.count(op) == 1);
    }
    CHECK(seen.count("simple_gate") == 1);
}

TEST_CASE("refine_highfreq identity, bypass and errors") {
    AcemConfig cfg;
    cfg.channels = 8;
    ParamStore<float> ps;
    Rng rng(28);
    HighFreqRefiner<float> refiner(ps, rng, "lvl", cfg);

    auto high = testutil::rand_var<float>(rng, {1, 3, 16, 16}, -0.3, 0.3);
    auto ctx = testutil::rand_var<float>(rng, {1, 3, 16, 16});

    SUBCASE("default zero head leaves the level untouched") {
        auto y = refiner(high, ctx);
        CHECK(max_abs_diff(y->value, high->value) == 0.0);
        CHECK(y->value.shape == high->value.shape);
    }
    SUBCASE("disabled module passes levels through") {
        AcemConfig off = cfg;
        off.enabled = false;
        ParamStore<float> ps2;
        Rng rng2(29);
        HighFreqRefiner<float> bypass(ps2, rng2, "lvl", off);
        CHECK(ps2.size() == 0);
        auto y = bypass(high, ctx);
        CHECK(y.get() == high.get());
    }
    SUBCASE("resolution mismatch is a structural error") {
        auto small = testutil::rand_var<float>(rng, {1, 3, 8, 8});
        CHECK_THROWS_AS((void)refiner(high, small), StructuralError);
    }
    SUBCASE("after perturbing the head, the refinement changes the level") {
        refiner.head.w->value.data[0] = 0.05f;
        auto y = refiner(high, ctx);
        CHECK(max_abs_diff(y->value, high->value) > 0.0);
    }
}

TEST_CASE("acem config invariant: expansion * channels must be even") {
    AcemConfig bad;
    bad.channels = 5;
    bad.expansion = 1.0;
    CHECK_THROWS_AS(bad.validate(), StructuralError);
}
