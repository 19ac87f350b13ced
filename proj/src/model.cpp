#include "ssdkv/model.hpp"

#include <cmath>

#include "ssdkv/config_file.hpp"

namespace ssdkv {

void ModelConfig::validate() const {
    if (n_layers < 1 || n_heads < 1) throw config_error("need at least one layer and head");
    if (d_model % n_heads != 0) throw config_error("d_model must be divisible by n_heads");
    if (grid_h < 2 || grid_w < 2) throw config_error("grid must be at least 2x2");
    if (vocab_size < 2) throw config_error("vocab_size must be >= 2");
    if (max_prompt_len < 1) throw config_error("max_prompt_len must be >= 1");
}

ModelConfig load_model_config(const std::string& path) {
    const ConfigFile f = ConfigFile::parse_file(path);
    ModelConfig c;
    c.n_layers = static_cast<std::size_t>(f.get_int_or("model.n_layers", 4));
    c.n_heads = static_cast<std::size_t>(f.get_int_or("model.n_heads", 4));
    c.d_model = static_cast<std::size_t>(f.get_int_or("model.d_model", 64));
    c.vocab_size = static_cast<std::size_t>(f.get_int_or("model.vocab_size", 256));
    c.grid_h = static_cast<std::size_t>(f.get_int_or("model.grid_h", 8));
    c.grid_w = static_cast<std::size_t>(f.get_int_or("model.grid_w", 8));
    c.max_prompt_len = static_cast<std::size_t>(f.get_int_or("model.max_prompt_len", 32));
    c.weight_seed = f.get_u64_or("model.weight_seed", 1);
    const std::string pos = f.get_or("model.positional_scheme", "rotary");
    if (pos == "rotary") c.positional_scheme = PositionalScheme::rotary;
    else if (pos == "none") c.positional_scheme = PositionalScheme::none;
    else throw config_error("positional_scheme must be rotary or none");
    c.validate();
    return c;
}

namespace {

Matrix draw_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    for (auto& v : m.data) v = rng.uniform(-bound, bound);
    return m;
}

void rms_norm(const std::vector<double>& x, std::vector<double>& out) {
    double ss = 0.0;
    for (double v : x) ss += v * v;
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + 1e-8);
    out.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv;
}

// Rotary embedding, llama convention: pair (i, i + d/2) rotated by
// pos * 10000^(-2i/d). cos/sin tables are shared across heads.
void rope_tables(std::int64_t position, std::size_t d_head, std::vector<double>& cs,
                 std::vector<double>& sn) {
    const std::size_t half = d_head / 2;
    cs.resize(half);
    sn.resize(half);
    for (std::size_t i = 0; i < half; ++i) {
        const double freq =
            std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d_head));
        const double angle = static_cast<double>(position) * freq;
        cs[i] = std::cos(angle);
        sn[i] = std::sin(angle);
    }
}

void rope_apply(double* vec, std::size_t d_head, const std::vector<double>& cs,
                const std::vector<double>& sn) {
    const std::size_t half = d_head / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double a = vec[i];
        const double b = vec[i + half];
        vec[i] = a * cs[i] - b * sn[i];
        vec[i + half] = a * sn[i] + b * cs[i];
    }
}

// Fixed-lane partial sums: deterministic (the reduction order never varies)
// but without the serial dependency chain of a single accumulator.
inline double dot(const double* a, const double* b, std::size_t n) {
    double s[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (std::size_t j = 0; j < 8; ++j) s[j] += a[i + j] * b[i + j];
    for (; i < n; ++i) s[i % 8] += a[i] * b[i];
    return ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7]));
}

struct Workspace {
    std::vector<double> x, normed, q, k, v, attn_out, ff_mid, ff_out, cs, sn, scores;
};

} // namespace

ModelWeights init_model(const ModelConfig& config) {
    config.validate();
    Rng rng(config.weight_seed);
    ModelWeights w;
    w.embedding = draw_matrix(rng, config.vocab_size, config.d_model);
    w.layers.resize(config.n_layers);
    for (auto& layer : w.layers) {
        layer.w_q = draw_matrix(rng, config.d_model, config.d_model);
        layer.w_k = draw_matrix(rng, config.d_model, config.d_model);
        layer.w_v = draw_matrix(rng, config.d_model, config.d_model);
        layer.w_o = draw_matrix(rng, config.d_model, config.d_model);
        layer.w_ff1 = draw_matrix(rng, config.d_model, config.d_model);
        layer.w_ff2 = draw_matrix(rng, config.d_model, config.d_model);
    }
    w.output_head = draw_matrix(rng, config.d_model, config.vocab_size);
    return w;
}

StepOutput decode_step(const ModelWeights& weights, const ModelConfig& config, std::size_t token,
                       std::int64_t position, CacheHandle& cache, bool capture_attention) {
    if (token >= config.vocab_size) throw input_error("token out of vocab range");
    if (position != cache.next_position)
        throw sequencing_error("decode position " + std::to_string(position) +
                               ", cache expects " + std::to_string(cache.next_position));

    const std::size_t dm = config.d_model;
    const std::size_t dh = config.d_head();
    const std::size_t nh = config.n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const bool rotary = config.positional_scheme == PositionalScheme::rotary;
    const CachePolicyConfig& pcfg = cache.config();

    thread_local Workspace ws;
    ws.x.assign(weights.embedding.row(token), weights.embedding.row(token) + dm);
    if (rotary) rope_tables(position, dh, ws.cs, ws.sn);

    StepOutput out;
    if (capture_attention) out.attention.emplace();

    for (std::size_t l = 0; l < config.n_layers; ++l) {
        const LayerWeights& lw = weights.layers[l];
        rms_norm(ws.x, ws.normed);
        ws.q.resize(dm);
        ws.k.resize(dm);
        ws.v.resize(dm);
        row_times_matrix(ws.normed, lw.w_q, ws.q);
        row_times_matrix(ws.normed, lw.w_k, ws.k);
        row_times_matrix(ws.normed, lw.w_v, ws.v);
        if (rotary) {
            for (std::size_t h = 0; h < nh; ++h) {
                rope_apply(&ws.q[h * dh], dh, ws.cs, ws.sn);
                rope_apply(&ws.k[h * dh], dh, ws.cs, ws.sn);
            }
        }

        ws.attn_out.assign(dm, 0.0);
        for (std::size_t h = 0; h < nh; ++h) {
            HeadCache& hc = cache.head(l, h);
            RowBuffer& buf = cache.buffer(l, h);
            const double* qh = &ws.q[h * dh];
            const double* kh = &ws.k[h * dh];
            const double* vh = &ws.v[h * dh];

            const std::size_t n_cached = hc.retained();
            const std::size_t n_staged = buf.fill();
            const std::size_t n = n_cached + n_staged + 1; // + current token
            ws.scores.resize(n);
            if (hc.packed) {
                const double* keys = hc.keys.data();
                for (std::size_t i = 0; i < n_cached; ++i)
                    ws.scores[i] = dot(qh, keys + i * dh, dh) * scale;
            } else {
                for (std::size_t i = 0; i < n_cached; ++i)
                    ws.scores[i] = dot(qh, hc.entries[i].key(), dh) * scale;
            }
            for (std::size_t j = 0; j < n_staged; ++j)
                ws.scores[n_cached + j] = dot(qh, buf.staged[j].key(), dh) * scale;
            ws.scores[n - 1] = dot(qh, kh, dh) * scale;
            softmax_inplace(ws.scores);

            double* oh = &ws.attn_out[h * dh];
            if (hc.packed) {
                const double* vals = hc.values.data();
                for (std::size_t i = 0; i < n_cached; ++i) {
                    const double p = ws.scores[i];
                    const double* vi = vals + i * dh;
                    for (std::size_t d = 0; d < dh; ++d) oh[d] += p * vi[d];
                }
            } else {
                for (std::size_t i = 0; i < n_cached; ++i) {
                    const double p = ws.scores[i];
                    const double* vi = hc.entries[i].value();
                    for (std::size_t d = 0; d < dh; ++d) oh[d] += p * vi[d];
                }
            }
            for (std::size_t j = 0; j < n_staged; ++j) {
                const double p = ws.scores[n_cached + j];
                const double* vj = buf.staged[j].value();
                for (std::size_t d = 0; d < dh; ++d) oh[d] += p * vj[d];
            }
            for (std::size_t d = 0; d < dh; ++d) oh[d] += ws.scores[n - 1] * vh[d];

            if (capture_attention) {
                AttentionVector av;
                av.positions = hc.retained_positions();
                for (std::size_t j = 0; j < n_staged; ++j)
                    av.positions.push_back(buf.staged[j].position);
                av.positions.push_back(position);
                av.probs = ws.scores;
                out.attention->push_back(std::move(av));
            }

            // Policy update: scoring heads receive this step's probabilities
            // over everything except the current token.
            std::optional<std::span<const double>> att;
            if (is_scoring_kind(hc.kind) && n > 1)
                att = std::span<const double>(ws.scores.data(), n - 1);
            cache_step_append(cache, l, h,
                              std::span<const double>(kh, dh),
                              std::span<const double>(vh, dh), position, att);
        }

        ws.ff_out.resize(dm);
        row_times_matrix(ws.attn_out, lw.w_o, ws.ff_out);
        for (std::size_t i = 0; i < dm; ++i) ws.x[i] += ws.ff_out[i];

        rms_norm(ws.x, ws.normed);
        ws.ff_mid.resize(dm);
        row_times_matrix(ws.normed, lw.w_ff1, ws.ff_mid);
        for (double& v : ws.ff_mid) v = v / (1.0 + std::exp(-v)); // SiLU
        row_times_matrix(ws.ff_mid, lw.w_ff2, ws.ff_out);
        for (std::size_t i = 0; i < dm; ++i) ws.x[i] += ws.ff_out[i];
    }

    rms_norm(ws.x, ws.normed);
    out.logits.resize(config.vocab_size);
    row_times_matrix(ws.normed, weights.output_head, out.logits);
    cache.next_position = position + 1;
    return out;
}

} // namespace ssdkv
