#include "test_util.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace devignet;
using testutil::max_abs_diff;

namespace {

ModelConfig tiny_cfg(uint64_t seed = 1) {
    ModelConfig cfg;
    cfg.pyramid_depth = 2;
    cfg.daft.channels = 8;
    cfg.daft.heads = 2;
    cfg.daft.pos_grid = 4;
    cfg.acem.channels = 8;
    cfg.seed = seed;
    return cfg;
}

} // namespace

TEST_CASE("fresh model is the identity on any valid input") {
    DeVigNet<float> model(tiny_cfg());
    Rng rng(61);
    for (auto [h, w] : {std::pair<int64_t, int64_t>{64, 64}, {48, 40}, {50, 30}, {33, 47}}) {
        auto x = testutil::rand_var<float>(rng, {1, 3, h, w});
        NoGradGuard ng;
        auto y = model.forward_train(x);
        CHECK(y->value.shape == x->value.shape);
        CHECK(max_abs_diff(y->value, x->value) < 1e-6);
    }
}

TEST_CASE("image forward clamps and preserves size") {
    DeVigNet<float> model(tiny_cfg());
    Rng rng(62);
    Image img = testutil::rand_image(rng, 40, 56);
    Image out = model.forward(img);
    CHECK(out.h == img.h);
    CHECK(out.w == img.w);
    for (size_t i = 0; i < out.data.size(); ++i) {
        CHECK(out.data[i] >= 0.0f);
        CHECK(out.data[i] <= 1.0f);
        CHECK(std::abs(out.data[i] - img.data[i]) < 1e-6);
    }
}

TEST_CASE("undersized inputs produce a sizing error naming the minimum") {
    ModelConfig cfg = tiny_cfg();
    cfg.pyramid_depth = 3; // geometry multiple 32, minimum side 16
    DeVigNet<float> model(cfg);
    Rng rng(63);
    auto x = testutil::rand_var<float>(rng, {1, 3, 10, 10});
    CHECK_THROWS_WITH_AS((void)model.forward_train(x), doctest::Contains("minimum is 16x16"),
                         StructuralError);
}

TEST_CASE("fixed seed yields identical models; different seeds differ") {
    DeVigNet<float> a(tiny_cfg(5)), b(tiny_cfg(5)), c(tiny_cfg(6));
    REQUIRE(a.params().size() == b.params().size());
    bool all_equal = true, any_diff = false;
    for (size_t i = 0; i < a.params().size(); ++i) {
        if (a.params().items()[i]->value.data != b.params().items()[i]->value.data) all_equal = false;
        if (a.params().items()[i]->value.data != c.params().items()[i]->value.data) any_diff = true;
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("resolution transfer with one weight set") {
    DeVigNet<float> model(tiny_cfg());
    Rng rng(64);
    std::vector<int64_t> sizes = {128, 512};
    if (std::getenv("DEVIGNET_SLOW_TESTS")) sizes = {128, 512, 1024, 2048};
    for (int64_t size : sizes) {
        Image img = testutil::rand_image(rng, size, size);
        Image out = model.forward(img);
        CHECK(out.h == size);
        CHECK(out.w == size);
    }
}

TEST_CASE("checkpoint roundtrip preserves forward bit for bit") {
    namespace fs = std::filesystem;
    const std::string dir = fs::temp_directory_path() / "devignet_test_ckpt";
    fs::remove_all(dir);

    ModelConfig cfg = tiny_cfg(9);
    DeVigNet<float> model(cfg);
    // move off the all-identity init so the roundtrip is meaningful
    Rng prng(65);
    for (const auto& p : model.params().items())
        for (auto& v : p->value.data) v += static_cast<float>(prng.uniform(-0.02, 0.02));

    Rng rng(66);
    Image img = testutil::rand_image(rng, 32, 32);
    Image before = model.forward(img);

    save_checkpoint(dir, model, 123);
    LoadedCheckpoint loaded = load_checkpoint(dir);
    CHECK(loaded.meta.step == 123);
    CHECK(loaded.meta.library_version == kLibraryVersion);

    Image after = loaded.model->forward(img);
    REQUIRE(before.data.size() == after.data.size());
    for (size_t i = 0; i < before.data.size(); ++i) CHECK(before.data[i] == after.data[i]);

    SUBCASE("tampered config is rejected via the hash") {
        nlohmann::json j;
        {
            std::ifstream is(dir + "/config.json");
            is >> j;
        }
        j["pyramid_depth"] = 3;
        {
            std::ofstream os(dir + "/config.json");
            os << j.dump(2);
        }
        CHECK_THROWS_AS((void)load_checkpoint(dir), DataError);
    }
    SUBCASE("corrupt weights file is rejected") {
        std::ofstream os(dir + "/weights.bin", std::ios::binary | std::ios::trunc);
        os << "garbage";
        os.close();
        CHECK_THROWS_AS((void)load_checkpoint(dir), DataError);
    }
    SUBCASE("missing files are rejected") {
        fs::remove(dir + "/meta.json");
        CHECK_THROWS_AS((void)load_checkpoint(dir), DataError);
    }
    fs::remove_all(dir);
}

TEST_CASE("model config json roundtrip keeps every field") {
    ModelConfig cfg = tiny_cfg(31);
    cfg.daft.enabled = false;
    cfg.acem.blocks_per_level = 3;
    cfg.hcam_alpha_init = 0.7;
    nlohmann::json j = cfg;
    ModelConfig back = j.get<ModelConfig>();
    CHECK(config_hash(back) == config_hash(cfg));
    CHECK(back.daft.enabled == false);
    CHECK(back.acem.blocks_per_level == 3);
    CHECK(back.hcam_alpha_init == doctest::Approx(0.7));
    CHECK(back.seed == 31);
}

TEST_CASE("ablation switches change the parameter census structurally") {
    ModelConfig full = tiny_cfg();
    ModelConfig no_daft = tiny_cfg();
    no_daft.daft.enabled = false;
    ModelConfig no_acem = tiny_cfg();
    no_acem.acem.enabled = false;
    ModelConfig deep = tiny_cfg();
    deep.pyramid_depth = 3;

    DeVigNet<float> m_full(full), m_nd(no_daft), m_na(no_acem), m_deep(deep);
    CHECK(m_nd.params().parameter_count() < m_full.params().parameter_count());
    CHECK(m_na.params().parameter_count() < m_full.params().parameter_count());
    CHECK(m_deep.params().parameter_count() > m_full.params().parameter_count());

    // disabled branches really are bypassed
    Rng rng(67);
    auto x = testutil::rand_var<float>(rng, {1, 3, 32, 32});
    NoGradGuard ng;
    CHECK(max_abs_diff(m_nd.forward_train(x)->value, x->value) < 1e-6);
    CHECK(max_abs_diff(m_na.forward_train(x)->value, x->value) < 1e-6);
}

TEST_CASE("gradients reach the input through the whole network") {
    ModelConfig cfg = tiny_cfg(8);
    DeVigNet<double> model(cfg);
    Rng prng(68);
    for (const auto& p : model.params().items())
        for (auto& v : p->value.data) v += prng.uniform(-0.05, 0.05);

    Rng rng(69);
    auto x = testutil::rand_var<double>(rng, {1, 3, 32, 32}, 0.0, 1.0, true);
    auto gt = testutil::rand_var<double>(rng, {1, 3, 32, 32});
    auto loss = loss_total(model.forward_train(x), gt);
    backward(loss);
    REQUIRE(x->has_grad());
    CHECK(testutil::max_abs(x->grad) > 0.0);
}
