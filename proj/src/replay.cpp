#include "ssdkv/replay.hpp"

#include <algorithm>
#include <map>

namespace ssdkv {

namespace {

struct StreamState {
    HeadCache cache;
    RowBuffer buffer;
    double frac_sum = 0.0;
    std::size_t steps = 0;
    bool seeded = false;
};

} // namespace

ReplayReport trace_replay(const AttentionTrace& trace, const CachePolicyConfig& policy) {
    trace.validate();
    if (trace.records.empty()) throw input_error("empty attention trace");
    policy.validate(trace.n_layers, trace.n_heads);

    const bool packed = policy.policy == PolicyKind::ssd_buffer;
    // (prompt, layer, head) -> replayed cache; K/V payloads are empty, only
    // positions and scores drive the eviction decisions.
    std::map<std::tuple<std::size_t, std::size_t, std::size_t>, StreamState> streams;

    std::vector<const TraceRecord*> ordered;
    ordered.reserve(trace.records.size());
    for (const auto& r : trace.records) ordered.push_back(&r);
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const TraceRecord* a, const TraceRecord* b) {
                         if (a->prompt != b->prompt) return a->prompt < b->prompt;
                         return a->qpos < b->qpos;
                     });

    for (const TraceRecord* rp : ordered) {
        const TraceRecord& r = *rp;
        auto& st = streams[{r.prompt, r.layer, r.head}];
        if (!st.seeded) {
            st.cache = HeadCache(head_kind_for(policy, r.layer, r.head), packed, 0);
            st.buffer.capacity = packed ? policy.buffer_rows : 0;
            // the prefix visible in the first record predates the visual
            // stream; treat it as the prompt
            for (std::size_t i = 0; i < r.positions.size(); ++i) {
                if (r.positions[i] >= r.qpos) continue;
                if (packed) {
                    st.cache.positions.push_back(r.positions[i]);
                    st.cache.scores.push_back(0.0);
                } else {
                    CacheEntry e;
                    e.position = r.positions[i];
                    st.cache.entries.push_back(std::move(e));
                }
            }
            if (policy.pin_prompt) st.cache.pinned_prefix_len = st.cache.retained();
            st.seeded = true;
        }

        // recorded mass landing on retained positions (current token counts)
        std::vector<std::int64_t> held = st.cache.retained_positions();
        for (const auto& e : st.buffer.staged) held.push_back(e.position);
        std::vector<double> att(held.size(), 0.0);
        double held_mass = 0.0, total_mass = 0.0;
        std::size_t k = 0;
        for (std::size_t i = 0; i < r.positions.size(); ++i) {
            total_mass += r.probs[i];
            if (r.positions[i] == r.qpos) {
                held_mass += r.probs[i];
                continue;
            }
            while (k < held.size() && held[k] < r.positions[i]) ++k;
            if (k < held.size() && held[k] == r.positions[i]) {
                att[k] = r.probs[i];
                held_mass += r.probs[i];
            }
        }
        st.frac_sum += total_mass > 0.0 ? held_mass / total_mass : 0.0;
        st.steps += 1;

        std::optional<std::span<const double>> att_opt;
        if (is_scoring_kind(st.cache.kind) && !att.empty())
            att_opt = std::span<const double>(att);
        if (packed)
            append_buffered(st.cache, policy, st.buffer, {}, {}, r.qpos, att_opt);
        else
            append_and_evict(st.cache, policy, {}, {}, r.qpos, att_opt);
    }

    ReplayReport rep;
    rep.n_layers = trace.n_layers;
    rep.n_heads = trace.n_heads;
    const std::size_t n = trace.n_layers * trace.n_heads;
    std::vector<double> sums(n, 0.0);
    std::vector<std::size_t> counts(n, 0);
    for (const auto& [key, st] : streams) {
        const std::size_t idx = std::get<1>(key) * trace.n_heads + std::get<2>(key);
        if (st.steps == 0) continue;
        sums[idx] += st.frac_sum / static_cast<double>(st.steps);
        counts[idx] += 1;
    }
    rep.per_head_retained_mass.assign(n, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        rep.per_head_retained_mass[i] =
            counts[i] ? sums[i] / static_cast<double>(counts[i]) : 0.0;
        total += rep.per_head_retained_mass[i];
    }
    rep.mean_retained_mass = n ? total / static_cast<double>(n) : 0.0;
    return rep;
}

} // namespace ssdkv
