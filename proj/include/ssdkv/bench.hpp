#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssdkv/config_file.hpp"
#include "ssdkv/generator.hpp"
#include "ssdkv/model.hpp"

namespace ssdkv {

struct BenchCase {
    CachePolicyConfig policy;
    std::string policy_name;
    std::size_t batch = 1;
    std::size_t grid_h = 24;
    std::size_t grid_w = 24;
    std::uint64_t seed = 0;      // shared across policies within a comparison group
    std::size_t repetitions = 3; // medians need at least 3
    std::size_t prompt_len = 8;
};

struct BenchPlan {
    std::vector<BenchCase> cases;
    std::size_t warmup = 1;
    std::size_t threads = 1;
};

struct BenchRow {
    std::string policy;
    std::size_t batch = 0;
    std::size_t grid_h = 0, grid_w = 0;
    std::size_t threads = 1;
    std::size_t repetitions = 0;
    double tokens_per_second = 0.0; // median over repetitions
    std::size_t peak_kv_scalars = 0;
    double speedup_vs_full = 0.0;
    double memory_ratio_vs_full = 0.0;
    bool oom = false;
};

/// Builds a plan from a [bench] config section; policies run against the
/// same seeds so token outputs are comparable row to row.
BenchPlan load_bench_plan(const ConfigFile& cfg, const ModelConfig& model);

/// Warmups then timed repetitions per case; throughput counts all generated
/// visual tokens against wall time. Streams decode single-branch (no
/// guidance) so the timings isolate cache-policy cost. Each group of
/// identical (batch, grid) must contain a full-cache case, which anchors
/// the speedup and memory ratios.
std::vector<BenchRow> run_bench(const BenchPlan& plan, const ModelWeights& weights,
                                const ModelConfig& config);

enum class TableFormat { csv, markdown };

std::string emit_table(const std::vector<BenchRow>& rows, TableFormat format);

} // namespace ssdkv
