#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "ssdkv/model.hpp"

using namespace ssdkv;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_model = 16;
    c.vocab_size = 32;
    c.grid_h = 4;
    c.grid_w = 4;
    c.weight_seed = 21;
    return c;
}

} // namespace

TEST_CASE("model init is deterministic and in the fan-in bound") {
    const ModelConfig cfg = tiny();
    const ModelWeights a = init_model(cfg);
    const ModelWeights b = init_model(cfg);
    CHECK(a.embedding.data == b.embedding.data);
    CHECK(a.output_head.data == b.output_head.data);
    for (std::size_t l = 0; l < cfg.n_layers; ++l)
        CHECK(a.layers[l].w_q.data == b.layers[l].w_q.data);

    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    for (double v : a.layers[0].w_k.data) {
        REQUIRE(v >= -bound);
        REQUIRE(v < bound);
    }
    ModelConfig other = cfg;
    other.weight_seed = 22;
    CHECK(init_model(other).embedding.data != a.embedding.data);
}

TEST_CASE("incremental decoding matches the non-incremental oracle") {
    for (auto scheme : {PositionalScheme::rotary, PositionalScheme::none}) {
        ModelConfig cfg = tiny();
        cfg.positional_scheme = scheme;
        const ModelWeights w = init_model(cfg);
        const std::vector<std::size_t> tokens{3, 17, 5, 5, 29, 0, 11, 8};

        const auto expect = oracle::forward_all(w, cfg, tokens);

        CachePolicyConfig policy; // full cache: no information loss
        CacheHandle cache(cfg.n_layers, cfg.n_heads, cfg.d_head(), policy);
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            const StepOutput out = decode_step(w, cfg, tokens[t],
                                               static_cast<std::int64_t>(t), cache, false);
            REQUIRE(out.logits.size() == cfg.vocab_size);
            for (std::size_t i = 0; i < cfg.vocab_size; ++i)
                REQUIRE(out.logits[i] == doctest::Approx(expect[t][i]).epsilon(1e-10));
        }
    }
}

TEST_CASE("decode_step is bitwise reproducible") {
    const ModelConfig cfg = tiny();
    const ModelWeights w = init_model(cfg);
    const std::vector<std::size_t> tokens{1, 2, 3, 4, 5};
    std::vector<double> first;
    for (int rep = 0; rep < 2; ++rep) {
        CachePolicyConfig policy;
        CacheHandle cache(cfg.n_layers, cfg.n_heads, cfg.d_head(), policy);
        std::vector<double> logits;
        for (std::size_t t = 0; t < tokens.size(); ++t)
            logits = decode_step(w, cfg, tokens[t], static_cast<std::int64_t>(t), cache, false)
                         .logits;
        if (rep == 0) first = logits;
        else CHECK(first == logits);
    }
}

TEST_CASE("captured attention is a distribution over the retained positions") {
    const ModelConfig cfg = tiny();
    const ModelWeights w = init_model(cfg);
    CachePolicyConfig policy;
    policy.policy = PolicyKind::streaming;
    policy.window_W = 3;
    policy.sink_count = 1;
    policy.pin_prompt = false;
    CacheHandle cache(cfg.n_layers, cfg.n_heads, cfg.d_head(), policy);
    cache.in_prefill = false;
    for (std::int64_t t = 0; t < 10; ++t) {
        const StepOutput out = decode_step(w, cfg, static_cast<std::size_t>(t % 7), t, cache, true);
        REQUIRE(out.attention);
        REQUIRE(out.attention->size() == cfg.n_layers * cfg.n_heads);
        for (const AttentionVector& av : *out.attention) {
            REQUIRE(av.positions.size() == av.probs.size());
            CHECK(av.positions.back() == t);
            double sum = 0.0;
            for (double p : av.probs) sum += p;
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
            for (std::size_t i = 1; i < av.positions.size(); ++i)
                CHECK(av.positions[i] > av.positions[i - 1]);
            if (t >= 4) CHECK(av.positions.size() == 1 + policy.window_W + 1); // sink + W + current
        }
    }
}

TEST_CASE("positional scheme changes the logits") {
    ModelConfig cfg = tiny();
    const ModelWeights w = init_model(cfg);
    auto run = [&](PositionalScheme s) {
        ModelConfig c2 = cfg;
        c2.positional_scheme = s;
        CachePolicyConfig policy;
        CacheHandle cache(c2.n_layers, c2.n_heads, c2.d_head(), policy);
        std::vector<double> logits;
        for (std::int64_t t = 0; t < 4; ++t)
            logits = decode_step(w, c2, 5, t, cache, false).logits;
        return logits;
    };
    CHECK(run(PositionalScheme::rotary) != run(PositionalScheme::none));
}

TEST_CASE("decode_step validates token and position") {
    const ModelConfig cfg = tiny();
    const ModelWeights w = init_model(cfg);
    CachePolicyConfig policy;
    CacheHandle cache(cfg.n_layers, cfg.n_heads, cfg.d_head(), policy);
    CHECK_THROWS_AS(decode_step(w, cfg, cfg.vocab_size, 0, cache, false), input_error);
    CHECK_THROWS_AS(decode_step(w, cfg, 1, 5, cache, false), sequencing_error);
    decode_step(w, cfg, 1, 0, cache, false);
    CHECK_THROWS_AS(decode_step(w, cfg, 1, 0, cache, false), sequencing_error); // replayed position
    CHECK(cache.next_position == 1);
}

TEST_CASE("model config validation and file loading") {
    ModelConfig bad = tiny();
    bad.d_model = 15; // not divisible by n_heads
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = tiny();
    bad.grid_h = 1;
    CHECK_THROWS_AS(bad.validate(), config_error);

    const char* path = "/tmp/ssdkv_test_model.cfg";
    {
        std::FILE* f = std::fopen(path, "w");
        std::fputs("[model]\nn_layers = 3\nd_model = 48\nn_heads = 6\ngrid_h = 5\n"
                   "grid_w = 7\nweight_seed = 99\npositional_scheme = none\n", f);
        std::fclose(f);
    }
    const ModelConfig c = load_model_config(path);
    CHECK(c.n_layers == 3);
    CHECK(c.d_head() == 8);
    CHECK(c.n_visual() == 35);
    CHECK(c.weight_seed == 99);
    CHECK(c.positional_scheme == PositionalScheme::none);
    CHECK(c.vocab_size == 256); // default survives
}
