#include "ssdkv/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <thread>

#include "ssdkv/profiler.hpp"

namespace ssdkv {

namespace {

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (c != ' ') {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::pair<std::size_t, std::size_t> parse_grid(const std::string& s) {
    std::size_t h = 0, w = 0;
    if (std::sscanf(s.c_str(), "%zux%zu", &h, &w) != 2 || h < 2 || w < 2)
        throw input_error("bad grid spec '" + s + "', expected HxW");
    return {h, w};
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<std::size_t> make_prompt(std::uint64_t seed, std::size_t len,
                                     std::size_t vocab_size) {
    Rng rng(seed ^ 0x70726f6d70ULL); // prompt stream distinct from sampling
    std::vector<std::size_t> prompt(len);
    for (auto& t : prompt) t = rng.next_below(vocab_size);
    return prompt;
}

struct CaseOutcome {
    double tokens_per_second = 0.0;
    std::size_t peak_kv_scalars = 0;
    bool oom = false;
};

CaseOutcome run_case(const BenchCase& c, const BenchPlan& plan, const ModelWeights& weights,
                     ModelConfig config) {
    config.grid_h = c.grid_h;
    config.grid_w = c.grid_w;
    config.validate();

    auto run_batch = [&](bool record, CaseOutcome& out) {
        std::vector<GenerationRequest> reqs(c.batch);
        for (std::size_t i = 0; i < c.batch; ++i) {
            auto& r = reqs[i];
            r.prompt = make_prompt(c.seed + i, c.prompt_len, config.vocab_size);
            // Benchmarks time native single-branch decoding: guidance runs the
            // same policy on both branches, so it scales every row identically
            // and cancels out of the speedup/memory ratios being measured.
            r.cfg_enabled = false;
            r.sampling.temperature = 1.0;
            r.sampling.top_k = 8;
            r.sample_seed = c.seed + i;
            r.policy = c.policy;
        }
        std::vector<GenerationResult> results(c.batch);
        const auto t0 = std::chrono::steady_clock::now();
        // Streams advance in lockstep, one token per stream per round, so
        // every stream's KV cache is resident at once — the footprint (and
        // any OOM) matches batched serving rather than a sequential loop.
        auto run_streams = [&](std::size_t first, std::size_t stride) {
            std::vector<std::unique_ptr<GenerationStream>> streams;
            std::vector<std::size_t> ids;
            for (std::size_t i = first; i < c.batch; i += stride) {
                streams.push_back(std::make_unique<GenerationStream>(reqs[i], weights, config));
                ids.push_back(i);
            }
            while (!streams.empty() && !streams.front()->done())
                for (auto& s : streams) s->step();
            for (std::size_t j = 0; j < streams.size(); ++j)
                results[ids[j]] = streams[j]->finish();
        };
        if (plan.threads <= 1) {
            run_streams(0, 1);
        } else {
            std::vector<std::thread> pool;
            for (std::size_t w = 0; w < plan.threads; ++w)
                pool.emplace_back([&, w] { run_streams(w, plan.threads); });
            for (auto& th : pool) th.join();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                                .count();
        if (record) {
            const double tokens = static_cast<double>(c.batch * config.n_visual());
            out.tokens_per_second = tokens / secs;
            std::size_t scalars = 0;
            for (const auto& r : results) scalars += r.memory.total_scalars;
            out.peak_kv_scalars = scalars;
        }
    };

    CaseOutcome out;
    try {
        for (std::size_t i = 0; i < plan.warmup; ++i) run_batch(false, out);
        std::vector<double> tps;
        for (std::size_t i = 0; i < c.repetitions; ++i) {
            CaseOutcome rep;
            run_batch(true, rep);
            tps.push_back(rep.tokens_per_second);
            out.peak_kv_scalars = rep.peak_kv_scalars;
        }
        out.tokens_per_second = median(tps);
    } catch (const std::bad_alloc&) {
        out.oom = true;
    }
    return out;
}

} // namespace

BenchPlan load_bench_plan(const ConfigFile& cfg, const ModelConfig& model) {
    BenchPlan plan;
    plan.warmup = static_cast<std::size_t>(cfg.get_int_or("bench.warmup", 1));
    plan.threads = static_cast<std::size_t>(cfg.get_int_or("bench.threads", 1));
    const auto reps = static_cast<std::size_t>(cfg.get_int_or("bench.repetitions", 3));
    if (reps < 3) throw config_error("bench repetitions must be >= 3");

    const auto policies = split_list(cfg.get_or("bench.policies", "full,ssd"));
    const auto grids = split_list(cfg.get_or("bench.grids", "24x24"));
    const auto batches = split_list(cfg.get_or("bench.batches", "1"));

    CachePolicyConfig base;
    base.window_W = static_cast<std::size_t>(cfg.get_int_or("bench.window", 32));
    base.recent_R = static_cast<std::size_t>(cfg.get_int_or("bench.recent", 32));
    base.sink_count = static_cast<std::size_t>(cfg.get_int_or("bench.sink", 1));
    base.buffer_rows = static_cast<std::size_t>(cfg.get_int_or("bench.buffer_rows", 24));
    const double budget_frac = cfg.get_double_or("bench.budget_frac", 0.2);
    std::optional<HeadPartition> partition;
    if (cfg.has("bench.partition_file"))
        partition = read_partition_csv(cfg.get("bench.partition_file"));

    for (const auto& grid_spec : grids) {
        const auto [gh, gw] = parse_grid(grid_spec);
        for (const auto& batch_spec : batches) {
            const auto batch = static_cast<std::size_t>(std::stoll(batch_spec));
            for (const auto& pol : policies) {
                BenchCase c;
                c.policy.policy = policy_from_string(pol);
                c.policy.window_W = base.window_W;
                c.policy.recent_R = base.recent_R;
                c.policy.sink_count = base.sink_count;
                c.policy.buffer_rows = base.buffer_rows;
                if (c.policy.policy == PolicyKind::ssd ||
                    c.policy.policy == PolicyKind::ssd_buffer) {
                    if (!partition)
                        throw config_error("bench: ssd policies need bench.partition_file");
                    c.policy.partition = partition;
                }
                if (c.policy.policy != PolicyKind::full)
                    apply_budget_fraction(c.policy, budget_frac, gh * gw);
                c.policy_name = pol;
                c.batch = batch;
                c.grid_h = gh;
                c.grid_w = gw;
                c.seed = cfg.get_u64_or("bench.seed", 7);
                c.repetitions = reps;
                c.prompt_len = static_cast<std::size_t>(
                    cfg.get_int_or("bench.prompt_len", 8));
                plan.cases.push_back(std::move(c));
            }
        }
    }
    (void)model;
    return plan;
}

std::vector<BenchRow> run_bench(const BenchPlan& plan, const ModelWeights& weights,
                                const ModelConfig& config) {
    // full-cache anchor must exist per comparison group
    std::map<std::pair<std::size_t, std::pair<std::size_t, std::size_t>>, bool> has_full;
    for (const auto& c : plan.cases) {
        if (c.repetitions < 3) throw config_error("bench repetitions must be >= 3");
        if (c.policy.policy == PolicyKind::full)
            has_full[{c.batch, {c.grid_h, c.grid_w}}] = true;
    }
    for (const auto& c : plan.cases) {
        if (!has_full.count({c.batch, {c.grid_h, c.grid_w}}))
            throw config_error("bench group (batch=" + std::to_string(c.batch) +
                               ") lacks a full-cache anchor row");
    }

    std::vector<BenchRow> rows;
    std::map<std::pair<std::size_t, std::pair<std::size_t, std::size_t>>, CaseOutcome> anchors;
    // run full anchors first so ratios are computable in one pass
    std::vector<const BenchCase*> ordered;
    for (const auto& c : plan.cases)
        if (c.policy.policy == PolicyKind::full) ordered.push_back(&c);
    for (const auto& c : plan.cases)
        if (c.policy.policy != PolicyKind::full) ordered.push_back(&c);

    for (const BenchCase* cp : ordered) {
        const BenchCase& c = *cp;
        const CaseOutcome out = run_case(c, plan, weights, config);
        const auto key = std::make_pair(c.batch, std::make_pair(c.grid_h, c.grid_w));
        if (c.policy.policy == PolicyKind::full) anchors[key] = out;
        const CaseOutcome& anchor = anchors.at(key);

        BenchRow row;
        row.policy = c.policy_name;
        row.batch = c.batch;
        row.grid_h = c.grid_h;
        row.grid_w = c.grid_w;
        row.threads = plan.threads;
        row.repetitions = c.repetitions;
        row.oom = out.oom;
        if (!out.oom && !anchor.oom) {
            row.tokens_per_second = out.tokens_per_second;
            row.peak_kv_scalars = out.peak_kv_scalars;
            row.speedup_vs_full = out.tokens_per_second / anchor.tokens_per_second;
            row.memory_ratio_vs_full = static_cast<double>(out.peak_kv_scalars) /
                                       static_cast<double>(anchor.peak_kv_scalars);
        }
        rows.push_back(std::move(row));
    }

    // present rows in plan order
    std::stable_sort(rows.begin(), rows.end(), [&](const BenchRow& a, const BenchRow& b) {
        auto rank = [&](const BenchRow& r) {
            for (std::size_t i = 0; i < plan.cases.size(); ++i) {
                const auto& c = plan.cases[i];
                if (c.policy_name == r.policy && c.batch == r.batch && c.grid_h == r.grid_h &&
                    c.grid_w == r.grid_w)
                    return i;
            }
            return plan.cases.size();
        };
        return rank(a) < rank(b);
    });
    return rows;
}

std::string emit_table(const std::vector<BenchRow>& rows, TableFormat format) {
    static const char* cols[] = {"policy", "batch", "grid", "threads", "repetitions",
                                 "tokens_per_second", "speedup_vs_full", "peak_kv_scalars",
                                 "memory_ratio_vs_full", "status"};
    std::ostringstream out;
    char buf[64];
    auto cell = [&](const BenchRow& r, std::size_t i) -> std::string {
        switch (i) {
            case 0: return r.policy;
            case 1: return std::to_string(r.batch);
            case 2: return std::to_string(r.grid_h) + "x" + std::to_string(r.grid_w);
            case 3: return std::to_string(r.threads);
            case 4: return std::to_string(r.repetitions);
            case 5:
                std::snprintf(buf, sizeof(buf), "%.1f", r.tokens_per_second);
                return buf;
            case 6:
                std::snprintf(buf, sizeof(buf), "%.2f", r.speedup_vs_full);
                return buf;
            case 7: return std::to_string(r.peak_kv_scalars);
            case 8:
                std::snprintf(buf, sizeof(buf), "%.2f", r.memory_ratio_vs_full);
                return buf;
            case 9: return r.oom ? "OOM" : "ok";
        }
        return "";
    };
    const std::size_t ncols = std::size(cols);
    if (format == TableFormat::csv) {
        for (std::size_t i = 0; i < ncols; ++i) out << (i ? "," : "") << cols[i];
        out << "\n";
        for (const auto& r : rows) {
            for (std::size_t i = 0; i < ncols; ++i) out << (i ? "," : "") << cell(r, i);
            out << "\n";
        }
    } else {
        out << "|";
        for (const auto* c : cols) out << ' ' << c << " |";
        out << "\n|";
        for (std::size_t i = 0; i < ncols; ++i) out << " --- |";
        out << "\n";
        for (const auto& r : rows) {
            out << "|";
            for (std::size_t i = 0; i < ncols; ++i) out << ' ' << cell(r, i) << " |";
            out << "\n";
        }
    }
    return out.str();
}

} // namespace ssdkv
