#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "ssdkv/kvcache.hpp"
#include "ssdkv/model.hpp"
#include "ssdkv/numerics.hpp"

namespace ssdkv {

/// Recorded attention for one generation, conditional branch: one
/// AttentionVector per (step, layer, head), step-major.
struct CapturedTrace {
    std::size_t n_layers = 0;
    std::size_t n_heads = 0;
    std::size_t n_steps = 0;
    std::vector<AttentionVector> records; // n_steps * n_layers * n_heads
};

struct SamplingConfig {
    double temperature = 1.0;
    std::size_t top_k = 1;
};

struct GenerationRequest {
    std::vector<std::size_t> prompt; // token indices, length <= max_prompt_len
    double gamma = 5.0;              // CFG scale
    SamplingConfig sampling;
    std::uint64_t sample_seed = 0;
    CachePolicyConfig policy;
    bool capture_attention = false;
    bool capture_timing = false;
    bool cfg_enabled = true; // false: native single-branch decoding (no guidance)
};

struct GenerationResult {
    std::vector<std::size_t> tokens;        // grid_h * grid_w, raster order
    std::vector<double> step_seconds;       // per visual token (both passes)
    MemoryReport memory;                    // final-state accounting, both branches
    std::optional<CapturedTrace> trace;     // conditional branch only
};

/// Guidance mix on raw logits: out = p_c + gamma * (p_c - p_u).
std::vector<double> cfg_mix(std::span<const double> p_cond, std::span<const double> p_uncond,
                            double gamma);

/// Temperature-scaled top-k sampling; ties go to the lower index, top_k = 1
/// is argmax. Throws numeric_error on non-finite logits.
std::size_t sample_token(std::span<const double> logits, double temperature, std::size_t top_k,
                         Rng& rng);

/// Token index fed to the unconditional branch instead of the prompt.
inline constexpr std::size_t kBeginImageToken = 0;

GenerationResult generate(const GenerationRequest& request, const ModelWeights& weights,
                          const ModelConfig& config);

/// One in-flight generation: validation and prefill happen in the
/// constructor, each step() decodes one visual token. generate() drives a
/// single stream to completion; batched callers interleave several streams
/// in lockstep so every stream's cache is resident at once, matching how
/// batched serving actually holds memory.
class GenerationStream {
public:
    GenerationStream(const GenerationRequest& request, const ModelWeights& weights,
                     const ModelConfig& config);
    ~GenerationStream();

    bool done() const;
    void step(); // throws sequencing_error when already done

    /// Memory report over the live branches plus the accumulated result;
    /// the stream is spent afterwards.
    GenerationResult finish();

    std::unique_ptr<CacheHandle> take_conditional();
    std::unique_ptr<CacheHandle> take_unconditional(); // null when !cfg_enabled

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// The two branches' final full caches, for KV divergence profiling.
struct BranchCaches {
    GenerationResult result;
    std::unique_ptr<CacheHandle> conditional;
    std::unique_ptr<CacheHandle> unconditional;
};

/// Like generate but hands back the live caches (full policy required by
/// kv_divergence callers).
BranchCaches generate_with_caches(const GenerationRequest& request, const ModelWeights& weights,
                                  const ModelConfig& config);

} // namespace ssdkv
