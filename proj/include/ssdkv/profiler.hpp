#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ssdkv/generator.hpp"
#include "ssdkv/partition.hpp"

namespace ssdkv {

/// One recorded attention distribution: layer/head at one step of one
/// prompt's generation, probabilities tagged with absolute positions
/// (current token included, at qpos).
struct TraceRecord {
    std::size_t prompt = 0;
    std::size_t layer = 0;
    std::size_t head = 0;
    std::int64_t qpos = 0;
    std::vector<std::int64_t> positions;
    std::vector<double> probs;
};

struct AttentionTrace {
    std::size_t n_layers = 0;
    std::size_t n_heads = 0;
    std::vector<TraceRecord> records;

    std::size_t n_prompts() const;
    void validate() const;
};

/// Folds one generation's captured attention into a trace as prompt
/// `prompt_id`; qpos of step t is prompt_len + t.
void append_capture(AttentionTrace& trace, std::size_t prompt_id, const CapturedTrace& capture,
                    std::size_t prompt_len);

void write_trace(std::ostream& out, const AttentionTrace& trace,
                 const std::vector<std::string>& header_lines = {});
void write_trace_file(const std::string& path, const AttentionTrace& trace,
                      const std::vector<std::string>& header_lines = {});
AttentionTrace read_trace_file(const std::string& path);

/// Per-head sparsity values plus the averaging metadata that produced them.
struct SparsityProfile {
    std::size_t n_layers = 0;
    std::size_t n_heads = 0;
    std::size_t window_w = 32;
    std::size_t n_prompts = 0;
    std::string branch = "conditional";
    std::string empty_past_policy = "ratio-zero"; // steps with no past contribute 0
    std::vector<double> s; // layer-major, values in [0,1]

    double at(std::size_t layer, std::size_t head) const { return s[layer * n_heads + head]; }
};

/// Fraction of attention mass on positions older than the recency window,
/// averaged per prompt then over prompts. The current token's own mass is
/// excluded from numerator and denominator.
SparsityProfile sparsity(const AttentionTrace& trace, std::size_t w);

/// Threshold split: s > tau => Semantic, else Spatial.
HeadPartition classify(const SparsityProfile& profile, double tau);

/// Shuffled assignment with a given Semantic-head count (ablation baseline).
HeadPartition random_partition(std::size_t n_layers, std::size_t n_heads,
                               std::size_t n_semantic, std::uint64_t seed);

/// Per visual position: squared L2 distance between the two branches' keys
/// plus values, summed over layers and heads. Positions with
/// j % grid_w in {0, grid_w - 1} are margin columns.
struct DivergenceReport {
    std::size_t grid_w = 0;
    std::vector<double> mse; // length n_visual

    bool is_margin(std::size_t j) const { return j % grid_w == 0 || j % grid_w == grid_w - 1; }
};

/// Both handles must be full-policy caches holding the same number of visual
/// entries after their respective prefixes (visual_start_a / visual_start_b).
DivergenceReport kv_divergence(const CacheHandle& branch_a, std::size_t visual_start_a,
                               const CacheHandle& branch_b, std::size_t visual_start_b,
                               std::size_t n_visual, std::size_t grid_w);

struct HistogramRow {
    double lo = 0, hi = 0;
    std::size_t count = 0;
    double pct = 0;
    std::size_t cum_count = 0;
    double cum_pct = 0;
};

/// Ten 0.1-wide buckets over [0,1]; counts partition the heads.
std::vector<HistogramRow> sparsity_histogram(const SparsityProfile& profile);

/// Table text matching the appendix layout: range, percentage, count,
/// cumulative percentage, cumulative count.
std::string format_histogram(const std::vector<HistogramRow>& rows);

// CSV formats (columns after '#' header lines): layer,head,sparsity for
// profiles; layer,head,sparsity,label,tau for partitions. The partition CSV
// is what the cache policies consume as --partition-file.
void write_profile_csv(std::ostream& out, const SparsityProfile& profile,
                       const std::vector<std::string>& header_lines = {});
SparsityProfile read_profile_csv(const std::string& path);
void write_partition_csv(std::ostream& out, const HeadPartition& partition,
                         const SparsityProfile* profile,
                         const std::vector<std::string>& header_lines = {});
HeadPartition read_partition_csv(const std::string& path);

} // namespace ssdkv
