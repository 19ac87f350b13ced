#include "ssdkv/kvcache.hpp"

#include <algorithm>
#include <cmath>

namespace ssdkv {

PolicyKind policy_from_string(const std::string& s) {
    if (s == "full") return PolicyKind::full;
    if (s == "streaming") return PolicyKind::streaming;
    if (s == "h2o") return PolicyKind::h2o;
    if (s == "ssd") return PolicyKind::ssd;
    if (s == "ssd-buffer" || s == "ssd_buffer") return PolicyKind::ssd_buffer;
    throw config_error("unknown policy '" + s + "'");
}

std::string to_string(PolicyKind p) {
    switch (p) {
        case PolicyKind::full: return "full";
        case PolicyKind::streaming: return "streaming";
        case PolicyKind::h2o: return "h2o";
        case PolicyKind::ssd: return "ssd";
        case PolicyKind::ssd_buffer: return "ssd-buffer";
    }
    return "?";
}

bool is_scoring_kind(HeadKind k) { return k == HeadKind::H2O || k == HeadKind::Semantic; }
bool is_window_kind(HeadKind k) { return k == HeadKind::Streaming || k == HeadKind::Spatial; }

HeadKind head_kind_for(const CachePolicyConfig& cfg, std::size_t layer, std::size_t head) {
    switch (cfg.policy) {
        case PolicyKind::full: return HeadKind::Full;
        case PolicyKind::streaming: return HeadKind::Streaming;
        case PolicyKind::h2o: return HeadKind::H2O;
        case PolicyKind::ssd:
        case PolicyKind::ssd_buffer:
            if (!cfg.partition) throw config_error("ssd policy without partition");
            return cfg.partition->label(layer, head) == HeadLabel::Spatial ? HeadKind::Spatial
                                                                           : HeadKind::Semantic;
    }
    return HeadKind::Full;
}

void CachePolicyConfig::validate(std::size_t n_layers, std::size_t n_heads) const {
    if (window_W < 1) throw config_error("window_W must be >= 1");
    if (budget_M < 1) throw config_error("budget_M must be >= 1");
    if (buffer_rows < 1) throw config_error("buffer_rows must be >= 1");
    if (policy == PolicyKind::ssd || policy == PolicyKind::ssd_buffer) {
        if (!partition) throw config_error("policy " + to_string(policy) + " needs a head partition");
        partition->validate();
        if (partition->n_layers != n_layers || partition->n_heads != n_heads)
            throw config_error("partition shape does not match model shape");
    }
}

void apply_budget_fraction(CachePolicyConfig& cfg, double frac, std::size_t n_visual) {
    if (frac <= 0.0 || frac > 1.0) throw config_error("budget fraction must be in (0, 1]");
    const auto budget = static_cast<std::size_t>(std::ceil(frac * static_cast<double>(n_visual)));
    const std::size_t base_window = cfg.window_W; // standardized sliding window (W = 32 default)
    cfg.window_W = budget > cfg.sink_count ? budget - cfg.sink_count : 1;
    // reserve the standard recent window, remainder becomes the heavy-hitter budget
    const std::size_t r = std::min(base_window, budget > 1 ? budget - 1 : std::size_t{0});
    cfg.recent_R = r;
    cfg.budget_M = budget - r;
}

std::int64_t HeadCache::last_position() const {
    if (packed) return positions.empty() ? -1 : positions.back();
    return entries.empty() ? -1 : entries.back().position;
}

std::vector<std::int64_t> HeadCache::retained_positions() const {
    if (packed) return positions;
    std::vector<std::int64_t> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.position);
    return out;
}

namespace {

// Keep mask for the sliding-window rule: pinned prefix, sink tokens, last W.
void spatial_keep_mask(std::size_t n, std::size_t pinned, std::size_t sink, std::size_t window,
                       std::vector<char>& keep) {
    keep.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (i < pinned || i < sink || i + window >= n) keep[i] = 1;
    }
}

// Keep mask for heavy-hitter retention: pinned prefix and the recent suffix
// are protected; of the remaining entries the top budget_M by accumulated
// score survive, ties broken toward the lower absolute position (== lower
// storage index, positions being strictly increasing).
template <typename ScoreAt>
void semantic_keep_mask(std::size_t n, std::size_t pinned, std::size_t recent_suffix,
                        std::size_t budget, ScoreAt score_at, std::vector<char>& keep) {
    keep.assign(n, 1);
    const std::size_t lo = pinned;
    const std::size_t hi = n >= recent_suffix ? n - recent_suffix : 0; // eligible range [lo, hi)
    if (hi <= lo) return;
    const std::size_t eligible = hi - lo;
    if (eligible <= budget) return;
    std::vector<std::size_t> idx(eligible);
    for (std::size_t i = 0; i < eligible; ++i) idx[i] = lo + i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const double sa = score_at(a), sb = score_at(b);
        if (sa != sb) return sa > sb;
        return a < b;
    });
    for (std::size_t i = budget; i < eligible; ++i) keep[idx[i]] = 0;
}

void compact_entries(std::vector<CacheEntry>& entries, const std::vector<char>& keep) {
    std::size_t w = 0;
    for (std::size_t r = 0; r < entries.size(); ++r) {
        if (!keep[r]) continue;
        if (w != r) entries[w] = std::move(entries[r]);
        ++w;
    }
    entries.resize(w);
}

CacheEntry make_entry(std::span<const double> key, std::span<const double> value,
                      std::int64_t position) {
    CacheEntry e;
    e.position = position;
    e.kv.reserve(key.size() + value.size());
    e.kv.insert(e.kv.end(), key.begin(), key.end());
    e.kv.insert(e.kv.end(), value.begin(), value.end());
    return e;
}

void check_new_position(const HeadCache& cache, const RowBuffer* buffer, std::int64_t pos) {
    std::int64_t last = cache.last_position();
    if (buffer && !buffer->staged.empty()) last = std::max(last, buffer->staged.back().position);
    if (pos <= last)
        throw sequencing_error("non-monotone cache position " + std::to_string(pos));
}

void fold_scores_entries(HeadCache& cache, std::optional<std::span<const double>> att) {
    if (!is_scoring_kind(cache.kind)) return;
    if (!att) {
        if (!cache.entries.empty())
            throw consistency_error("scoring head requires last_attention");
        return;
    }
    if (att->size() != cache.entries.size())
        throw consistency_error("attention length " + std::to_string(att->size()) +
                                " != retained " + std::to_string(cache.entries.size()));
    for (std::size_t i = 0; i < cache.entries.size(); ++i) cache.entries[i].score += (*att)[i];
}

// Rebuild the packed arrays from the packed cache plus staged entries,
// keeping only masked indices (mask covers the concatenated union).
void rebuild_packed(HeadCache& cache, std::vector<CacheEntry>& staged,
                    const std::vector<char>& keep) {
    const std::size_t d = cache.d_head;
    const std::size_t old_n = cache.positions.size();
    const std::size_t n = old_n + staged.size();
    std::vector<double> keys, values;
    std::vector<std::int64_t> positions;
    std::vector<double> scores;
    keys.reserve(n * d);
    values.reserve(n * d);
    positions.reserve(n);
    scores.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!keep[i]) continue;
        if (i < old_n) {
            keys.insert(keys.end(), cache.keys.begin() + i * d, cache.keys.begin() + (i + 1) * d);
            values.insert(values.end(), cache.values.begin() + i * d,
                          cache.values.begin() + (i + 1) * d);
            positions.push_back(cache.positions[i]);
            scores.push_back(cache.scores[i]);
        } else {
            const CacheEntry& e = staged[i - old_n];
            keys.insert(keys.end(), e.key(), e.key() + e.d_head());
            values.insert(values.end(), e.value(), e.value() + e.d_head());
            positions.push_back(e.position);
            scores.push_back(e.score);
        }
    }
    cache.keys = std::move(keys);
    cache.values = std::move(values);
    cache.positions = std::move(positions);
    cache.scores = std::move(scores);
}

} // namespace

void append_and_evict(HeadCache& cache, const CachePolicyConfig& cfg,
                      std::span<const double> new_key, std::span<const double> new_value,
                      std::int64_t new_position,
                      std::optional<std::span<const double>> last_attention) {
    check_new_position(cache, nullptr, new_position);
    if (new_key.size() != cache.d_head || new_value.size() != cache.d_head)
        throw shape_error("K/V width != d_head");

    std::vector<char> keep;
    switch (cache.kind) {
        case HeadKind::Full:
            cache.entries.push_back(make_entry(new_key, new_value, new_position));
            return;
        case HeadKind::Streaming:
        case HeadKind::Spatial: {
            cache.entries.push_back(make_entry(new_key, new_value, new_position));
            spatial_keep_mask(cache.entries.size(), cache.pinned_prefix_len, cfg.sink_count,
                              cfg.window_W, keep);
            compact_entries(cache.entries, keep);
            return;
        }
        case HeadKind::H2O:
        case HeadKind::Semantic: {
            fold_scores_entries(cache, last_attention);
            const std::size_t n = cache.entries.size();
            const std::size_t pinned = cache.pinned_prefix_len;
            const std::size_t recent = std::min(cfg.recent_R, n - std::min(pinned, n));
            semantic_keep_mask(
                n, pinned, recent, cfg.budget_M,
                [&](std::size_t i) { return cache.entries[i].score; }, keep);
            compact_entries(cache.entries, keep);
            cache.entries.push_back(make_entry(new_key, new_value, new_position));
            return;
        }
    }
}

namespace {

// Batch compaction at flush: apply the unbuffered policy to the union of
// packed cache and staged rows in one pass, treating the newest staged token
// as the current one (kept outside the heavy-hitter budget, exactly as the
// per-step policy appends it after selection).
void flush_packed(HeadCache& cache, const CachePolicyConfig& cfg, RowBuffer& buffer) {
    const std::size_t old_n = cache.positions.size();
    const std::size_t n = old_n + buffer.staged.size();
    if (n == 0) {
        buffer.full_flag = false;
        return;
    }
    auto score_at = [&](std::size_t i) {
        return i < old_n ? cache.scores[i] : buffer.staged[i - old_n].score;
    };
    std::vector<char> keep;
    if (is_window_kind(cache.kind) || cache.kind == HeadKind::Full) {
        if (cache.kind == HeadKind::Full) {
            keep.assign(n, 1);
        } else {
            spatial_keep_mask(n, cache.pinned_prefix_len, cfg.sink_count, cfg.window_W, keep);
        }
    } else {
        const std::size_t newest = buffer.staged.empty() ? 0 : 1;
        const std::size_t pinned = cache.pinned_prefix_len;
        const std::size_t avail = n - std::min(pinned + newest, n);
        const std::size_t recent = std::min(cfg.recent_R, avail);
        semantic_keep_mask(n, pinned, recent + newest, cfg.budget_M, score_at, keep);
    }
    rebuild_packed(cache, buffer.staged, keep);
    buffer.staged.clear();
    buffer.full_flag = false;
}

} // namespace

void append_buffered(HeadCache& cache, const CachePolicyConfig& cfg, RowBuffer& buffer,
                     std::span<const double> new_key, std::span<const double> new_value,
                     std::int64_t new_position,
                     std::optional<std::span<const double>> last_attention) {
    if (!cache.packed) throw consistency_error("append_buffered on non-packed cache");
    if (buffer.fill() >= buffer.capacity)
        throw consistency_error("row buffer overflow");
    check_new_position(cache, &buffer, new_position);
    if (new_key.size() != cache.d_head || new_value.size() != cache.d_head)
        throw shape_error("K/V width != d_head");

    if (is_scoring_kind(cache.kind)) {
        const std::size_t visible = cache.positions.size() + buffer.staged.size();
        if (!last_attention) {
            if (visible != 0) throw consistency_error("scoring head requires last_attention");
        } else {
            if (last_attention->size() != visible)
                throw consistency_error("attention length != retained + staged");
            for (std::size_t i = 0; i < cache.positions.size(); ++i)
                cache.scores[i] += (*last_attention)[i];
            for (std::size_t j = 0; j < buffer.staged.size(); ++j)
                buffer.staged[j].score += (*last_attention)[cache.positions.size() + j];
        }
    }

    buffer.staged.push_back(make_entry(new_key, new_value, new_position));
    if (buffer.fill() == buffer.capacity) {
        buffer.full_flag = true;
        flush_packed(cache, cfg, buffer);
    }
}

void cache_step_append(CacheHandle& stream, std::size_t layer, std::size_t head,
                       std::span<const double> new_key, std::span<const double> new_value,
                       std::int64_t new_position,
                       std::optional<std::span<const double>> last_attention) {
    HeadCache& cache = stream.head(layer, head);
    RowBuffer& buffer = stream.buffer(layer, head);
    const CachePolicyConfig& cfg = stream.config();

    if (stream.in_prefill && (cfg.pin_prompt || cache.packed)) {
        // Prefill bypasses eviction; compression happens at the prefill
        // boundary (packed) or never touches the pinned prefix (entry mode).
        check_new_position(cache, nullptr, new_position);
        if (is_scoring_kind(cache.kind) && last_attention) {
            if (cache.packed) {
                if (last_attention->size() != cache.positions.size())
                    throw consistency_error("attention length != retained");
                for (std::size_t i = 0; i < cache.positions.size(); ++i)
                    cache.scores[i] += (*last_attention)[i];
            } else {
                fold_scores_entries(cache, last_attention);
            }
        }
        if (cache.packed) {
            cache.keys.insert(cache.keys.end(), new_key.begin(), new_key.end());
            cache.values.insert(cache.values.end(), new_value.begin(), new_value.end());
            cache.positions.push_back(new_position);
            cache.scores.push_back(0.0);
        } else {
            cache.entries.push_back(make_entry(new_key, new_value, new_position));
        }
        return;
    }

    if (cache.packed)
        append_buffered(cache, cfg, buffer, new_key, new_value, new_position, last_attention);
    else
        append_and_evict(cache, cfg, new_key, new_value, new_position, last_attention);
}

CacheHandle::CacheHandle(std::size_t n_layers, std::size_t n_heads, std::size_t d_head,
                         CachePolicyConfig cfg)
    : n_layers_(n_layers), n_heads_(n_heads), d_head_(d_head), cfg_(std::move(cfg)) {
    cfg_.validate(n_layers, n_heads);
    const bool packed = cfg_.policy == PolicyKind::ssd_buffer;
    heads_.reserve(n_layers * n_heads);
    for (std::size_t l = 0; l < n_layers; ++l) {
        for (std::size_t h = 0; h < n_heads; ++h) {
            heads_.emplace_back(head_kind_for(cfg_, l, h), packed, d_head);
        }
    }
    buffers_.resize(n_layers * n_heads);
    if (packed) {
        for (auto& b : buffers_) b.capacity = cfg_.buffer_rows;
    }
}

void CacheHandle::end_prefill() {
    if (!in_prefill) return;
    in_prefill = false;
    for (std::size_t i = 0; i < heads_.size(); ++i) {
        HeadCache& hc = heads_[i];
        if (cfg_.pin_prompt) hc.pinned_prefix_len = hc.retained();
        if (hc.packed) flush_packed(hc, cfg_, buffers_[i]);
    }
}

MemoryReport memory_report(std::span<const CacheHandle* const> streams) {
    MemoryReport rep;
    if (streams.empty()) return rep;
    rep.n_layers = streams[0]->n_layers();
    rep.n_heads = streams[0]->n_heads();
    rep.per_head_entries.assign(rep.n_layers * rep.n_heads, 0);
    const std::size_t d_head = streams[0]->d_head();
    for (const CacheHandle* s : streams) {
        for (std::size_t l = 0; l < rep.n_layers; ++l) {
            for (std::size_t h = 0; h < rep.n_heads; ++h) {
                std::size_t n = s->head(l, h).retained() + s->buffer(l, h).fill();
                rep.per_head_entries[l * rep.n_heads + h] += n;
                rep.total_entries += n;
            }
        }
    }
    rep.total_scalars = rep.total_entries * d_head * 2;
    rep.total_bytes = rep.total_scalars * rep.element_width;
    return rep;
}

std::size_t retention_bound(HeadKind kind, const CachePolicyConfig& cfg,
                            std::size_t pinned_prefix_len) {
    std::size_t buffered = cfg.policy == PolicyKind::ssd_buffer ? cfg.buffer_rows : 0;
    switch (kind) {
        case HeadKind::Full: return SIZE_MAX;
        case HeadKind::Streaming:
        case HeadKind::Spatial:
            return pinned_prefix_len + cfg.sink_count + cfg.window_W + buffered;
        case HeadKind::H2O:
        case HeadKind::Semantic:
            return pinned_prefix_len + cfg.budget_M + cfg.recent_R + 1 + buffered;
    }
    return SIZE_MAX;
}

} // namespace ssdkv
