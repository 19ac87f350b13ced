#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ssdkv/kvcache.hpp"
#include "ssdkv/numerics.hpp"

namespace ssdkv {

enum class PositionalScheme { rotary, none };

/// Shape of the toy decoder-only transformer. One fixed architecture:
/// pre-norm RMSNorm blocks, multi-head attention with per-head KV caches,
/// a SiLU feed-forward with d_ff = d_model, rotary positions by default.
struct ModelConfig {
    std::size_t n_layers = 4;
    std::size_t n_heads = 4;
    std::size_t d_model = 64;
    std::size_t vocab_size = 256;
    std::size_t grid_h = 8;
    std::size_t grid_w = 8;
    std::size_t max_prompt_len = 32;
    std::uint64_t weight_seed = 1;
    PositionalScheme positional_scheme = PositionalScheme::rotary;

    std::size_t d_head() const { return d_model / n_heads; }
    std::size_t n_visual() const { return grid_h * grid_w; }

    void validate() const;
};

ModelConfig load_model_config(const std::string& path);

struct LayerWeights {
    Matrix w_q, w_k, w_v, w_o; // d_model x d_model
    Matrix w_ff1, w_ff2;       // d_model x d_ff, d_ff x d_model
};

/// All parameters, fully determined by config.weight_seed. Draw order is
/// fixed: embedding, then per layer (W_Q, W_K, W_V, W_O, W_ff1, W_ff2),
/// then the output head; every matrix is filled row-major with
/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) samples.
struct ModelWeights {
    Matrix embedding;  // vocab_size x d_model
    std::vector<LayerWeights> layers;
    Matrix output_head; // d_model x vocab_size
};

ModelWeights init_model(const ModelConfig& config);

/// One head's exported attention distribution, tagged with the absolute
/// token indices it covers (retained positions plus the current token).
struct AttentionVector {
    std::vector<std::int64_t> positions;
    std::vector<double> probs;
};

struct StepOutput {
    std::vector<double> logits;
    std::optional<std::vector<AttentionVector>> attention; // layer-major when captured
};

/// Feeds one token at the given absolute position through the model using
/// the stream's cache; appends the new K/V to every head via its policy.
/// position must equal cache.next_position.
StepOutput decode_step(const ModelWeights& weights, const ModelConfig& config,
                       std::size_t token, std::int64_t position, CacheHandle& cache,
                       bool capture_attention);

} // namespace ssdkv
