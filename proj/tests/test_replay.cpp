#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ssdkv/numerics.hpp"
#include "ssdkv/profiler.hpp"
#include "ssdkv/replay.hpp"

using namespace ssdkv;

namespace {

// Trace over one head: `steps` decode steps after a prompt of length
// `prompt_len`, attention spread by `weight(pos, qpos)` then normalized.
template <typename WeightFn>
AttentionTrace synth_trace(std::size_t prompt_len, std::size_t steps, WeightFn weight) {
    AttentionTrace t;
    t.n_layers = 1;
    t.n_heads = 1;
    for (std::size_t s = 0; s < steps; ++s) {
        TraceRecord r;
        r.prompt = 0;
        r.layer = 0;
        r.head = 0;
        r.qpos = static_cast<std::int64_t>(prompt_len + s);
        double sum = 0.0;
        for (std::int64_t p = 0; p <= r.qpos; ++p) {
            r.positions.push_back(p);
            r.probs.push_back(weight(p, r.qpos));
            sum += r.probs.back();
        }
        for (auto& x : r.probs) x /= sum;
        t.records.push_back(std::move(r));
    }
    return t;
}

} // namespace

TEST_CASE("full policy retains all recorded mass") {
    auto t = synth_trace(4, 30, [](std::int64_t, std::int64_t) { return 1.0; });
    CachePolicyConfig cfg;
    const auto rep = trace_replay(t, cfg);
    REQUIRE(rep.per_head_retained_mass.size() == 1);
    CHECK(rep.per_head_retained_mass[0] == doctest::Approx(1.0));
    CHECK(rep.mean_retained_mass == doctest::Approx(1.0));
}

TEST_CASE("retained mass stays in [0, 1] for every policy") {
    auto t = synth_trace(3, 40, [](std::int64_t p, std::int64_t q) {
        return p == 0 ? 3.0 : (q - p < 5 ? 1.0 : 0.2);
    });
    for (const char* name : {"full", "streaming", "h2o"}) {
        CachePolicyConfig cfg;
        cfg.policy = policy_from_string(name);
        cfg.window_W = 4;
        cfg.budget_M = 3;
        cfg.recent_R = 2;
        const auto rep = trace_replay(t, cfg);
        REQUIRE(rep.per_head_retained_mass[0] >= 0.0);
        REQUIRE(rep.per_head_retained_mass[0] <= 1.0 + 1e-12);
    }
}

TEST_CASE("recency-concentrated attention survives a sliding window intact") {
    // all mass within the last 3 positions
    auto t = synth_trace(2, 40, [](std::int64_t p, std::int64_t q) {
        return q - p <= 3 ? 1.0 : 0.0;
    });
    CachePolicyConfig cfg;
    cfg.policy = PolicyKind::streaming;
    cfg.window_W = 8;
    cfg.sink_count = 1;
    cfg.pin_prompt = false;
    CHECK(trace_replay(t, cfg).mean_retained_mass == doctest::Approx(1.0));
}

TEST_CASE("a tiny window drops mass aimed at old positions") {
    auto t = synth_trace(2, 60, [](std::int64_t p, std::int64_t) {
        return p >= 4 && p < 8 ? 1.0 : 0.01; // hitters sit at fixed old positions
    });
    CachePolicyConfig window;
    window.policy = PolicyKind::streaming;
    window.window_W = 6;
    window.sink_count = 1;
    window.pin_prompt = false;
    CachePolicyConfig scoring = window;
    scoring.policy = PolicyKind::h2o;
    scoring.budget_M = 5;
    scoring.recent_R = 2;
    const double w_mass = trace_replay(t, window).mean_retained_mass;
    const double h_mass = trace_replay(t, scoring).mean_retained_mass;
    CHECK(w_mass < 0.7);       // the window cannot see the hitters
    CHECK(h_mass > 0.9);       // score accumulation keeps them
}

TEST_CASE("pinned prompt mass is always retained") {
    auto t = synth_trace(6, 50, [](std::int64_t p, std::int64_t) {
        return p < 6 ? 1.0 : 0.001; // nearly everything lands on the prompt
    });
    CachePolicyConfig cfg;
    cfg.policy = PolicyKind::streaming;
    cfg.window_W = 2;
    cfg.sink_count = 1;
    cfg.pin_prompt = true;
    CHECK(trace_replay(t, cfg).mean_retained_mass > 0.99);
}

TEST_CASE("buffered replay with cadence 1 equals per-step ssd replay") {
    Rng rng(17);
    auto t = synth_trace(3, 45, [&](std::int64_t, std::int64_t) {
        return 0.05 + rng.next_double();
    });
    HeadPartition part;
    part.n_layers = 1;
    part.n_heads = 1;
    part.labels = {HeadLabel::Semantic};
    CachePolicyConfig ssd;
    ssd.policy = PolicyKind::ssd;
    ssd.budget_M = 6;
    ssd.recent_R = 3;
    ssd.partition = part;
    CachePolicyConfig buf = ssd;
    buf.policy = PolicyKind::ssd_buffer;
    buf.buffer_rows = 1;
    const auto a = trace_replay(t, ssd);
    const auto b = trace_replay(t, buf);
    CHECK(a.mean_retained_mass == doctest::Approx(b.mean_retained_mass).epsilon(1e-12));
    // a coarser cadence holds more rows between flushes, never less mass
    buf.buffer_rows = 8;
    CHECK(trace_replay(t, buf).mean_retained_mass >= a.mean_retained_mass - 1e-12);
}

TEST_CASE("replay dimensions follow the trace") {
    AttentionTrace t;
    t.n_layers = 2;
    t.n_heads = 3;
    for (std::size_t l = 0; l < 2; ++l)
        for (std::size_t h = 0; h < 3; ++h) {
            TraceRecord r;
            r.layer = l;
            r.head = h;
            r.qpos = 1;
            r.positions = {0, 1};
            r.probs = {0.5, 0.5};
            t.records.push_back(r);
        }
    CachePolicyConfig cfg;
    const auto rep = trace_replay(t, cfg);
    CHECK(rep.n_layers == 2);
    CHECK(rep.n_heads == 3);
    CHECK(rep.per_head_retained_mass.size() == 6);
}
