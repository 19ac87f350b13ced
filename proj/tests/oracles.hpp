#pragma once

// Independent reference implementations the tests check the library against.
// Deliberately naive: recompute everything from scratch, full sorts, no
// incremental state, no shared code with the hot paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "ssdkv/model.hpp"

namespace oracle {

// Full non-incremental forward pass: feeds the whole token sequence through
// the model at once, attending over all prior positions, and returns the
// logits produced at every position. No KV cache involved.
inline std::vector<std::vector<double>> forward_all(const ssdkv::ModelWeights& w,
                                                    const ssdkv::ModelConfig& cfg,
                                                    const std::vector<std::size_t>& tokens) {
    const std::size_t T = tokens.size();
    const std::size_t dm = cfg.d_model;
    const std::size_t dh = cfg.d_head();
    const std::size_t nh = cfg.n_heads;
    const bool rotary = cfg.positional_scheme == ssdkv::PositionalScheme::rotary;

    auto rmsn = [dm](const std::vector<double>& x) {
        double ss = 0.0;
        for (double v : x) ss += v * v;
        const double inv = 1.0 / std::sqrt(ss / static_cast<double>(dm) + 1e-8);
        std::vector<double> out(dm);
        for (std::size_t i = 0; i < dm; ++i) out[i] = x[i] * inv;
        return out;
    };
    auto project = [dm](const std::vector<double>& x, const ssdkv::Matrix& m) {
        std::vector<double> out(m.cols, 0.0);
        for (std::size_t j = 0; j < dm; ++j)
            for (std::size_t k = 0; k < m.cols; ++k) out[k] += x[j] * m.at(j, k);
        return out;
    };
    auto rope = [dh](std::vector<double>& vec, std::size_t off, std::int64_t pos) {
        const std::size_t half = dh / 2;
        for (std::size_t i = 0; i < half; ++i) {
            const double freq =
                std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dh));
            const double ang = static_cast<double>(pos) * freq;
            const double a = vec[off + i], b = vec[off + i + half];
            vec[off + i] = a * std::cos(ang) - b * std::sin(ang);
            vec[off + i + half] = a * std::sin(ang) + b * std::cos(ang);
        }
    };

    std::vector<std::vector<double>> x(T);
    for (std::size_t t = 0; t < T; ++t)
        x[t].assign(w.embedding.row(tokens[t]), w.embedding.row(tokens[t]) + dm);

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const auto& lw = w.layers[l];
        std::vector<std::vector<double>> qs(T), ks(T), vs(T);
        for (std::size_t t = 0; t < T; ++t) {
            const auto normed = rmsn(x[t]);
            qs[t] = project(normed, lw.w_q);
            ks[t] = project(normed, lw.w_k);
            vs[t] = project(normed, lw.w_v);
            if (rotary) {
                for (std::size_t h = 0; h < nh; ++h) {
                    rope(qs[t], h * dh, static_cast<std::int64_t>(t));
                    rope(ks[t], h * dh, static_cast<std::int64_t>(t));
                }
            }
        }
        for (std::size_t t = 0; t < T; ++t) {
            std::vector<double> attn(dm, 0.0);
            for (std::size_t h = 0; h < nh; ++h) {
                std::vector<double> sc(t + 1);
                for (std::size_t u = 0; u <= t; ++u) {
                    double d = 0.0;
                    for (std::size_t i = 0; i < dh; ++i)
                        d += qs[t][h * dh + i] * ks[u][h * dh + i];
                    sc[u] = d / std::sqrt(static_cast<double>(dh));
                }
                const double mx = *std::max_element(sc.begin(), sc.end());
                double z = 0.0;
                for (double& s : sc) z += (s = std::exp(s - mx));
                for (std::size_t u = 0; u <= t; ++u)
                    for (std::size_t i = 0; i < dh; ++i)
                        attn[h * dh + i] += (sc[u] / z) * vs[u][h * dh + i];
            }
            const auto o = project(attn, lw.w_o);
            for (std::size_t i = 0; i < dm; ++i) x[t][i] += o[i];
            auto mid = project(rmsn(x[t]), lw.w_ff1);
            for (double& v : mid) v = v / (1.0 + std::exp(-v));
            const auto ff = project(mid, lw.w_ff2);
            for (std::size_t i = 0; i < dm; ++i) x[t][i] += ff[i];
        }
    }

    std::vector<std::vector<double>> logits(T);
    for (std::size_t t = 0; t < T; ++t) logits[t] = project(rmsn(x[t]), w.output_head);
    return logits;
}

// Reference heavy-hitter selection: among the eligible middle region
// (everything except a protected prefix and the recent suffix), keep the
// budget_M entries with the highest scores, breaking ties toward the lower
// absolute position, via a full stable sort.
struct ScoredPos {
    std::int64_t position;
    double score;
};

inline std::vector<std::int64_t> heavy_hitter_keep(const std::vector<ScoredPos>& eligible,
                                                   std::size_t budget) {
    std::vector<ScoredPos> sorted = eligible;
    std::stable_sort(sorted.begin(), sorted.end(), [](const ScoredPos& a, const ScoredPos& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.position < b.position;
    });
    if (sorted.size() > budget) sorted.resize(budget);
    std::vector<std::int64_t> keep;
    for (const auto& e : sorted) keep.push_back(e.position);
    std::sort(keep.begin(), keep.end());
    return keep;
}

// Reference sparsity straight off the definition, from raw (position, prob)
// pairs per record.
inline double sparsity_of_record(const std::vector<std::int64_t>& positions,
                                 const std::vector<double>& probs, std::int64_t qpos,
                                 std::size_t w) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        if (positions[i] <= qpos - 1) den += probs[i];
        if (positions[i] <= qpos - 1 - static_cast<std::int64_t>(w)) num += probs[i];
    }
    return den == 0.0 ? 0.0 : num / den;
}

} // namespace oracle
