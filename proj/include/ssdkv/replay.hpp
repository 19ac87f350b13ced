#pragma once

#include <vector>

#include "ssdkv/kvcache.hpp"
#include "ssdkv/profiler.hpp"

namespace ssdkv {

/// Offline evaluation of an eviction policy against recorded attention:
/// per head, the mean fraction of each step's recorded mass that landed on
/// positions the policy had retained (the current token counts as retained).
struct ReplayReport {
    std::size_t n_layers = 0;
    std::size_t n_heads = 0;
    std::vector<double> per_head_retained_mass; // layer-major
    double mean_retained_mass = 0.0;
};

ReplayReport trace_replay(const AttentionTrace& trace, const CachePolicyConfig& policy);

} // namespace ssdkv
