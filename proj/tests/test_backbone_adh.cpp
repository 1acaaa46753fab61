#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>

#include "attreid/adh.hpp"
#include "attreid/backbone.hpp"

using namespace attreid;

namespace {

Tensor random_image(std::mt19937_64& rng, std::size_t h = 64, std::size_t w = 32) {
    Tensor t({3, h, w});
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
    return t;
}

BackboneConfig small_config(std::uint64_t seed = 42) {
    BackboneConfig cfg;
    cfg.stages = {{8, 2}, {16, 2}, {16, 2}};
    cfg.id_count = 4;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("backbone output shape follows the stage strides") {
    BackboneConfig cfg;  // 64x32 input, three stride-2 stages, 64 channels
    Backbone net(cfg);
    auto [h, w] = cfg.output_spatial();
    CHECK(h == 8);
    CHECK(w == 4);

    std::mt19937_64 rng(1);
    auto fm = net.forward_reid(random_image(rng), "img0");
    CHECK(fm.values.shape() == std::vector<std::size_t>{64, 8, 4});
    CHECK(fm.source_image_id == "img0");
    CHECK(fm.values.all_finite());
}

TEST_CASE("backbone forward is deterministic for a fixed seed") {
    std::mt19937_64 rng(2);
    Tensor img = random_image(rng);
    Backbone a(small_config(7)), b(small_config(7)), c(small_config(8));
    auto fa = a.forward_reid(img).values;
    auto fb = b.forward_reid(img).values;
    auto fc = c.forward_reid(img).values;
    CHECK(fa == fb);
    CHECK(!(fa == fc));
}

TEST_CASE("config validation rejects bad stage setups") {
    BackboneConfig cfg = small_config();
    cfg.shared_stage_count = 3;  // must be < stage count
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.stages.back().out_channels = 12;  // not divisible by 8
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.shared_stage_count = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("shared stages are single-copy between the streams") {
    Backbone base(small_config(3));
    ExplainableNet net(base, 10, 99);

    auto shared = base.shared_stage_parameters();
    REQUIRE(!shared.empty());

    // Perturb a shared stream-1 weight; stream 2 must see the change.
    std::mt19937_64 rng(4);
    Tensor img = random_image(rng);
    Tensor before = net.forward_trunk(img).values;
    shared[0].second.mutable_value()[0] += 0.5;
    Tensor after = net.forward_trunk(img).values;
    CHECK(!(before == after));
}

TEST_CASE("stream-2 trunk matches stream 1 when its own stages are copied") {
    Backbone base(small_config(5));
    ExplainableNet net(base, 6, 11);

    // Overwrite the unshared stream-2 stages with the stream-1 tensors.
    auto base_params = base.named_parameters();
    auto net_params = net.named_parameters();
    for (auto& [name, var] : net_params) {
        if (name.rfind("stream2.stage", 0) != 0) continue;
        std::string suffix = name.substr(std::string("stream2.").size());
        for (auto& [bname, bvar] : base_params)
            if (bname == suffix) var.mutable_value() = bvar.value();
    }

    std::mt19937_64 rng(6);
    Tensor img = random_image(rng);
    CHECK(net.forward_trunk(img).values == base.forward_reid(img).values);
}

TEST_CASE("fresh stream-2 stages differ from stream 1") {
    Backbone base(small_config(5));
    ExplainableNet net(base, 6, 11);
    std::mt19937_64 rng(6);
    Tensor img = random_image(rng);
    CHECK(!(net.forward_trunk(img).values == base.forward_reid(img).values));
}

TEST_CASE("adh emits one strictly positive map per attribute dim") {
    Backbone base(small_config(9));
    ExplainableNet net(base, 88, 13);
    std::mt19937_64 rng(10);
    Tensor img = random_image(rng);
    ActivationParams act(0.5, 1.0);
    Tensor maps = net.forward_attention(img, act);
    auto [h, w] = base.config().output_spatial();
    REQUIRE(maps.shape() == std::vector<std::size_t>{88, h, w});
    for (std::size_t i = 0; i < maps.size(); ++i) CHECK(maps[i] > 0.0);
}

TEST_CASE("adh on a zero pre-activation yields the constant K") {
    std::mt19937_64 rng(14);
    ADHParams params = ADHParams::init(16, 5, rng);
    // Zero the second conv so every pre-activation is exactly 0.
    for (std::size_t i = 0; i < params.conv2_weight.value().size(); ++i)
        params.conv2_weight.mutable_value()[i] = 0.0;
    for (std::size_t i = 0; i < params.conv2_bias.value().size(); ++i)
        params.conv2_bias.mutable_value()[i] = 0.0;

    Tensor fm({16, 4, 3});
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (std::size_t i = 0; i < fm.size(); ++i) fm[i] = dist(rng);

    ActivationParams act(0.37, 2.0);
    Tensor maps = adh_forward(fm, params, act);
    REQUIRE(maps.shape() == std::vector<std::size_t>{5, 4, 3});
    for (std::size_t i = 0; i < maps.size(); ++i)
        CHECK(maps[i] == doctest::Approx(0.37).epsilon(1e-12));
}

TEST_CASE("attribute feature maps are the channelwise product with each map") {
    std::mt19937_64 rng(15);
    Tensor fm({4, 2, 3});
    Tensor maps({3, 2, 3});
    std::uniform_real_distribution<double> dist(0.1, 1.0);
    for (std::size_t i = 0; i < fm.size(); ++i) fm[i] = dist(rng);
    for (std::size_t i = 0; i < maps.size(); ++i) maps[i] = dist(rng);

    auto guided = attribute_feature_maps(fm, maps);
    REQUIRE(guided.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
        REQUIRE(guided[k].shape() == fm.shape());
        for (std::size_t c = 0; c < 4; ++c)
            for (std::size_t y = 0; y < 2; ++y)
                for (std::size_t x = 0; x < 3; ++x)
                    CHECK(guided[k].at(c, y, x) ==
                          doctest::Approx(fm.at(c, y, x) * maps.at(k, y, x)).epsilon(1e-15));
    }
}

TEST_CASE("attribute feature maps scale linearly in the base features") {
    std::mt19937_64 rng(16);
    Tensor fm({4, 3, 3});
    Tensor maps({2, 3, 3});
    std::uniform_real_distribution<double> dist(0.1, 1.0);
    for (std::size_t i = 0; i < fm.size(); ++i) fm[i] = dist(rng);
    for (std::size_t i = 0; i < maps.size(); ++i) maps[i] = dist(rng);

    Tensor doubled = fm;
    for (std::size_t i = 0; i < doubled.size(); ++i) doubled[i] *= 2.0;

    auto g1 = attribute_feature_maps(fm, maps);
    auto g2 = attribute_feature_maps(doubled, maps);
    for (std::size_t k = 0; k < g1.size(); ++k)
        for (std::size_t i = 0; i < g1[k].size(); ++i)
            CHECK(g2[k][i] == doctest::Approx(2.0 * g1[k][i]).epsilon(1e-12));
}

TEST_CASE("stronger attention yields larger pooled attribute vectors") {
    std::mt19937_64 rng(17);
    Tensor fm({4, 3, 3});
    std::uniform_real_distribution<double> dist(0.2, 1.0);
    for (std::size_t i = 0; i < fm.size(); ++i) fm[i] = dist(rng);

    Tensor maps({2, 3, 3});
    for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t x = 0; x < 3; ++x) {
            maps.at(0, y, x) = 0.3;
            maps.at(1, y, x) = 0.9;
        }

    auto vecs = attribute_feature_vectors(Var::constant(fm), Var::constant(maps), 3.0);
    REQUIRE(vecs.size() == 2);
    for (std::size_t c = 0; c < 4; ++c)
        CHECK(vecs[1].value()[c] > vecs[0].value()[c]);
}

TEST_CASE("checkpoint round-trip restores every parameter bitwise") {
    Backbone net(small_config(21));
    auto dir = std::filesystem::temp_directory_path() / "attreid_ckpt_test";
    std::filesystem::remove_all(dir);

    auto params = net.named_parameters();
    save_checkpoint(dir.string(), params, {"note 1"});

    Backbone other(small_config(22));
    auto other_params = other.named_parameters();
    load_checkpoint(dir.string(), other_params);
    for (std::size_t i = 0; i < params.size(); ++i)
        CHECK(other_params[i].second.value() == params[i].second.value());

    auto extras = read_checkpoint_extras(dir.string());
    REQUIRE(extras.size() == 1);
    CHECK(extras[0] == "note 1");
    std::filesystem::remove_all(dir);
}

TEST_CASE("loading a checkpoint with missing parameters fails") {
    Backbone net(small_config(23));
    auto dir = std::filesystem::temp_directory_path() / "attreid_ckpt_missing";
    std::filesystem::remove_all(dir);
    auto params = net.named_parameters();
    save_checkpoint(dir.string(), params);

    BackboneConfig bigger = small_config(23);
    bigger.stages.push_back({32, 1});
    Backbone other(bigger);
    auto other_params = other.named_parameters();
    CHECK_THROWS_AS(load_checkpoint(dir.string(), other_params), Error);
    std::filesystem::remove_all(dir);
}
