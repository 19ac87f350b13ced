#include "ssdkv/generator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace ssdkv {

std::vector<double> cfg_mix(std::span<const double> p_cond, std::span<const double> p_uncond,
                            double gamma) {
    if (p_cond.size() != p_uncond.size())
        throw shape_error("cfg_mix: branch logit lengths differ");
    std::vector<double> out(p_cond.size());
    for (std::size_t i = 0; i < p_cond.size(); ++i)
        out[i] = p_cond[i] + gamma * (p_cond[i] - p_uncond[i]);
    return out;
}

std::size_t sample_token(std::span<const double> logits, double temperature, std::size_t top_k,
                         Rng& rng) {
    if (logits.empty()) throw shape_error("sample_token: empty logits");
    if (temperature <= 0.0) throw input_error("temperature must be > 0");
    if (top_k < 1 || top_k > logits.size()) throw input_error("top_k out of range");
    for (double v : logits)
        if (!std::isfinite(v)) throw numeric_error("non-finite logit");

    if (top_k == 1) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < logits.size(); ++i)
            if (logits[i] > logits[best]) best = i;
        return best;
    }

    // temperature scale, then truncate to the top_k (ties toward lower
    // index), then renormalize over the survivors
    std::vector<std::size_t> idx(logits.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(top_k), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (logits[a] != logits[b]) return logits[a] > logits[b];
                          return a < b;
                      });
    idx.resize(top_k);
    std::vector<double> probs(top_k);
    for (std::size_t i = 0; i < top_k; ++i) probs[i] = logits[idx[i]] / temperature;
    softmax_inplace(probs);
    const double r = rng.next_double();
    double cum = 0.0;
    for (std::size_t i = 0; i < top_k; ++i) {
        cum += probs[i];
        if (r < cum) return idx[i];
    }
    return idx[top_k - 1];
}

struct GenerationStream::Impl {
    GenerationRequest request;
    const ModelWeights& weights;
    const ModelConfig& config;

    std::unique_ptr<CacheHandle> cond_cache;
    std::unique_ptr<CacheHandle> uncond_cache;
    std::vector<double> cond_logits;
    std::vector<double> uncond_logits;
    Rng rng;
    GenerationResult result;
    std::size_t n_visual = 0;
    std::size_t prompt_len = 0;
    std::size_t t = 0;

    Impl(const GenerationRequest& req, const ModelWeights& w, const ModelConfig& cfg)
        : request(req), weights(w), config(cfg), rng(req.sample_seed) {
        config.validate();
        if (request.prompt.empty()) throw input_error("empty prompt");
        if (request.prompt.size() > config.max_prompt_len)
            throw input_error("prompt longer than max_prompt_len");
        if (request.gamma < 0.0) throw input_error("gamma must be >= 0");
        for (std::size_t tok : request.prompt)
            if (tok >= config.vocab_size) throw input_error("prompt token out of vocab range");

        n_visual = config.n_visual();
        prompt_len = request.prompt.size();
        const bool dual = request.cfg_enabled;

        cond_cache = std::make_unique<CacheHandle>(config.n_layers, config.n_heads,
                                                   config.d_head(), request.policy);
        if (dual)
            uncond_cache = std::make_unique<CacheHandle>(config.n_layers, config.n_heads,
                                                         config.d_head(), request.policy);

        if (request.capture_attention) {
            result.trace.emplace();
            result.trace->n_layers = config.n_layers;
            result.trace->n_heads = config.n_heads;
            result.trace->n_steps = n_visual;
            result.trace->records.reserve(n_visual * config.n_layers * config.n_heads);
        }
        result.tokens.reserve(n_visual);
        if (request.capture_timing) result.step_seconds.reserve(n_visual);

        // Prefill. The last prompt forward already yields the logits for the
        // first visual token; it runs inside the prefill so its K/V entry is
        // part of the pinned prompt prefix.
        for (std::size_t i = 0; i < prompt_len; ++i) {
            StepOutput out = decode_step(weights, config, request.prompt[i],
                                         static_cast<std::int64_t>(i), *cond_cache, false);
            if (i + 1 == prompt_len) cond_logits = std::move(out.logits);
        }
        cond_cache->end_prefill();
        if (dual) {
            // Unconditional branch context is a single begin-of-image token.
            StepOutput out =
                decode_step(weights, config, kBeginImageToken, 0, *uncond_cache, false);
            uncond_logits = std::move(out.logits);
            uncond_cache->end_prefill();
        }
    }

    // One visual token: mix the branches' last logits, sample z_t, feed z_t
    // to both branches. Every visual token's K/V therefore lands in the
    // caches.
    void step() {
        if (t >= n_visual) throw sequencing_error("generation stream already finished");
        using clock = std::chrono::steady_clock;
        const auto t0 = clock::now();
        const bool dual = request.cfg_enabled;
        std::vector<double> mixed =
            dual ? cfg_mix(cond_logits, uncond_logits, request.gamma) : cond_logits;
        const std::size_t token = sample_token(mixed, request.sampling.temperature,
                                               request.sampling.top_k, rng);
        result.tokens.push_back(token);

        StepOutput out = decode_step(weights, config, token,
                                     static_cast<std::int64_t>(prompt_len + t), *cond_cache,
                                     request.capture_attention);
        cond_logits = std::move(out.logits);
        if (result.trace && out.attention)
            for (auto& av : *out.attention) result.trace->records.push_back(std::move(av));
        if (dual) {
            StepOutput uout = decode_step(weights, config, token,
                                          static_cast<std::int64_t>(1 + t), *uncond_cache, false);
            uncond_logits = std::move(uout.logits);
        }
        if (request.capture_timing) {
            result.step_seconds.push_back(
                std::chrono::duration<double>(clock::now() - t0).count());
        }
        ++t;
    }
};

GenerationStream::GenerationStream(const GenerationRequest& request, const ModelWeights& weights,
                                   const ModelConfig& config)
    : impl_(std::make_unique<Impl>(request, weights, config)) {}

GenerationStream::~GenerationStream() = default;

bool GenerationStream::done() const { return impl_->t >= impl_->n_visual; }

void GenerationStream::step() { impl_->step(); }

GenerationResult GenerationStream::finish() {
    std::vector<const CacheHandle*> branches{impl_->cond_cache.get()};
    if (impl_->uncond_cache) branches.push_back(impl_->uncond_cache.get());
    impl_->result.memory = memory_report(branches);
    return std::move(impl_->result);
}

std::unique_ptr<CacheHandle> GenerationStream::take_conditional() {
    return std::move(impl_->cond_cache);
}

std::unique_ptr<CacheHandle> GenerationStream::take_unconditional() {
    return std::move(impl_->uncond_cache);
}

GenerationResult generate(const GenerationRequest& request, const ModelWeights& weights,
                          const ModelConfig& config) {
    GenerationStream stream(request, weights, config);
    while (!stream.done()) stream.step();
    return stream.finish();
}

BranchCaches generate_with_caches(const GenerationRequest& request, const ModelWeights& weights,
                                  const ModelConfig& config) {
    GenerationStream stream(request, weights, config);
    while (!stream.done()) stream.step();
    BranchCaches bc;
    bc.result = stream.finish();
    bc.conditional = stream.take_conditional();
    bc.unconditional = stream.take_unconditional();
    return bc;
}

} // namespace ssdkv
