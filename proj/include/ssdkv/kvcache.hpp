#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssdkv/errors.hpp"
#include "ssdkv/partition.hpp"

namespace ssdkv {

enum class PolicyKind { full, streaming, h2o, ssd, ssd_buffer };

PolicyKind policy_from_string(const std::string& s);
std::string to_string(PolicyKind p);

/// Eviction policy parameters. For ssd/ssd_buffer a HeadPartition must be
/// attached before building cache handles.
struct CachePolicyConfig {
    PolicyKind policy = PolicyKind::full;
    std::size_t window_W = 32;   // sliding window for spatial/streaming heads
    std::size_t budget_M = 32;   // heavy-hitter budget for semantic/h2o heads
    std::size_t recent_R = 32;   // recent entries exempt from scoring eviction
    std::size_t sink_count = 1;  // earliest entries retained by windowed heads
    std::size_t buffer_rows = 24; // flush cadence for ssd_buffer
    bool pin_prompt = true;
    std::optional<HeadPartition> partition;

    void validate(std::size_t n_layers, std::size_t n_heads) const;
};

/// Rewrites window_W / budget_M / recent_R so every head retains
/// ceil(frac * n_visual) visual entries. The semantic split reserves
/// recent_R = min(window_W, budget) and puts the remainder into budget_M;
/// windowed heads get the same per-head budget minus the sink.
void apply_budget_fraction(CachePolicyConfig& cfg, double frac, std::size_t n_visual);

/// Behavior of one head's cache. Streaming and Spatial share the sliding
/// window rule; H2O and Semantic share heavy-hitter retention.
enum class HeadKind { Full, Streaming, Spatial, H2O, Semantic };

bool is_scoring_kind(HeadKind k);
bool is_window_kind(HeadKind k);

/// Head behavior a policy assigns to (layer, head); consults the partition
/// for ssd/ssd_buffer.
HeadKind head_kind_for(const CachePolicyConfig& cfg, std::size_t layer, std::size_t head);

struct CacheEntry {
    std::int64_t position = -1;
    double score = 0.0; // running sum of received attention probability
    std::vector<double> kv; // one block per entry: key, then value

    std::size_t d_head() const { return kv.size() / 2; }
    const double* key() const { return kv.data(); }
    const double* value() const { return kv.data() + d_head(); }
};

/// Staging area for ssd_buffer: newly decoded K/V accumulate here and the
/// packed cache is compressed only when the buffer fills (or at the prefill
/// boundary), then the buffer resets.
struct RowBuffer {
    std::size_t capacity = 0;
    bool full_flag = false;
    std::vector<CacheEntry> staged;

    std::size_t fill() const { return staged.size(); }
};

/// One head's retained cache. Two storage modes:
///  - entry mode (full/streaming/h2o/ssd): a vector of CacheEntry mutated
///    every step by the policy;
///  - packed mode (ssd_buffer): flat contiguous K/V arrays frozen between
///    row-buffer flushes, rebuilt by batch compaction at flush time.
/// Positions are strictly increasing in storage order in both modes.
class HeadCache {
public:
    HeadCache() = default;
    HeadCache(HeadKind kind, bool packed, std::size_t d_head)
        : kind(kind), packed(packed), d_head(d_head) {}

    HeadKind kind = HeadKind::Full;
    bool packed = false;
    std::size_t d_head = 0;
    std::size_t pinned_prefix_len = 0;

    // entry mode
    std::vector<CacheEntry> entries;

    // packed mode
    std::vector<double> keys;   // count * d_head
    std::vector<double> values; // count * d_head
    std::vector<std::int64_t> positions;
    std::vector<double> scores;

    std::size_t retained() const { return packed ? positions.size() : entries.size(); }
    std::int64_t last_position() const;
    std::vector<std::int64_t> retained_positions() const;
    double score_at(std::size_t i) const { return packed ? scores[i] : entries[i].score; }
};

/// One generation stream's complete cache state: per-(layer, head) caches,
/// row buffers when buffered, and the position counter the model checks
/// against. Single-owner, no locking.
class CacheHandle {
public:
    CacheHandle(std::size_t n_layers, std::size_t n_heads, std::size_t d_head,
                CachePolicyConfig cfg);

    HeadCache& head(std::size_t layer, std::size_t h) { return heads_[layer * n_heads_ + h]; }
    const HeadCache& head(std::size_t layer, std::size_t h) const {
        return heads_[layer * n_heads_ + h];
    }
    RowBuffer& buffer(std::size_t layer, std::size_t h) { return buffers_[layer * n_heads_ + h]; }
    const RowBuffer& buffer(std::size_t layer, std::size_t h) const {
        return buffers_[layer * n_heads_ + h];
    }

    const CachePolicyConfig& config() const { return cfg_; }
    std::size_t n_layers() const { return n_layers_; }
    std::size_t n_heads() const { return n_heads_; }
    std::size_t d_head() const { return d_head_; }
    bool buffered() const { return cfg_.policy == PolicyKind::ssd_buffer; }

    std::int64_t next_position = 0;
    bool in_prefill = true;

    /// Marks the prefill boundary: pins the prompt prefix (when configured)
    /// and forces a buffered flush.
    void end_prefill();

private:
    std::size_t n_layers_, n_heads_, d_head_;
    CachePolicyConfig cfg_;
    std::vector<HeadCache> heads_;
    std::vector<RowBuffer> buffers_;
};

/// Applies one head's eviction policy for one decoded token (entry mode).
/// last_attention is this step's post-softmax probability received by each
/// currently retained entry, in storage order, excluding the new token; it
/// must be present exactly for scoring kinds with a nonempty cache.
void append_and_evict(HeadCache& cache, const CachePolicyConfig& cfg,
                      std::span<const double> new_key, std::span<const double> new_value,
                      std::int64_t new_position,
                      std::optional<std::span<const double>> last_attention);

/// Buffered variant (packed mode): stages the new K/V, keeps accumulating
/// semantic scores over retained + staged entries every step, and compresses
/// only when the buffer fills, after which the buffer resets. last_attention
/// covers retained entries then previously staged entries, current excluded.
void append_buffered(HeadCache& cache, const CachePolicyConfig& cfg, RowBuffer& buffer,
                     std::span<const double> new_key, std::span<const double> new_value,
                     std::int64_t new_position,
                     std::optional<std::span<const double>> last_attention);

/// Routes one head's new K/V to the right path: direct append during a
/// pinned prefill, append_buffered for packed caches, append_and_evict
/// otherwise. This is what decode_step calls.
void cache_step_append(CacheHandle& stream, std::size_t layer, std::size_t head,
                       std::span<const double> new_key, std::span<const double> new_value,
                       std::int64_t new_position,
                       std::optional<std::span<const double>> last_attention);

/// Per-head retained-entry counts and exact scalar/byte totals.
struct MemoryReport {
    std::size_t n_layers = 0;
    std::size_t n_heads = 0;
    std::size_t element_width = sizeof(double);
    std::vector<std::size_t> per_head_entries; // summed over streams, layer-major
    std::size_t total_entries = 0;
    std::size_t total_scalars = 0; // entries * d_head * 2 (K and V)
    std::size_t total_bytes = 0;
};

MemoryReport memory_report(std::span<const CacheHandle* const> streams);

/// Closed-form retention bound for one head after any step (pinned prefix
/// included); the budget-bound fuzz tests assert retained() never exceeds it.
std::size_t retention_bound(HeadKind kind, const CachePolicyConfig& cfg,
                            std::size_t pinned_prefix_len);

} // namespace ssdkv
