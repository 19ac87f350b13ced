#pragma once

#include <cstddef>
#include <vector>

#include "ssdkv/errors.hpp"

namespace ssdkv {

enum class HeadLabel { Spatial, Semantic };

/// Per-(layer, head) Spatial/Semantic assignment plus the threshold that
/// produced it. Produced by the profiler, consumed by the cache policies.
struct HeadPartition {
    std::size_t n_layers = 0;
    std::size_t n_heads = 0;
    double tau = 0.8;
    std::vector<HeadLabel> labels; // layer-major, n_layers * n_heads

    HeadLabel label(std::size_t layer, std::size_t head) const {
        return labels[layer * n_heads + head];
    }

    void validate() const {
        if (labels.size() != n_layers * n_heads)
            throw consistency_error("partition label count != n_layers * n_heads");
    }
};

} // namespace ssdkv
