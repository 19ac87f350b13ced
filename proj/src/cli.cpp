#include "ssdkv/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "ssdkv/bench.hpp"
#include "ssdkv/config_file.hpp"
#include "ssdkv/generator.hpp"
#include "ssdkv/model.hpp"
#include "ssdkv/profiler.hpp"
#include "ssdkv/replay.hpp"

namespace ssdkv {

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string trim_num(double v) {
    std::ostringstream ss;
    ss << v;
    return ss.str();
}

std::vector<std::size_t> parse_token_list(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        if (cell.empty()) continue;
        try {
            out.push_back(std::stoul(cell));
        } catch (const std::logic_error&) {
            throw input_error("bad token list entry '" + cell + "'");
        }
    }
    if (out.empty()) throw input_error("empty token list");
    return out;
}

struct PolicyOpts {
    std::string policy = "full";
    std::size_t window = 32;
    std::size_t recent = 32;
    std::size_t sink = 1;
    std::size_t buffer_rows = 24;
    double budget_frac = 0.0; // 0 = explicit window/budget values are used
    std::size_t budget = 32;
    std::string partition_file;
    bool no_pin_prompt = false;
};

void add_policy_flags(CLI::App* app, PolicyOpts& p) {
    app->add_option("--policy", p.policy, "full|streaming|h2o|ssd|ssd-buffer");
    app->add_option("--window", p.window, "sliding window W");
    app->add_option("--budget", p.budget, "heavy-hitter budget M");
    app->add_option("--budget-frac", p.budget_frac, "per-head budget as a fraction of the grid");
    app->add_option("--recent", p.recent, "reserved recent window R");
    app->add_option("--sink", p.sink, "sink token count");
    app->add_option("--buffer-rows", p.buffer_rows, "row buffer flush cadence");
    app->add_option("--partition-file", p.partition_file, "head partition CSV (ssd policies)");
    app->add_flag("--no-pin-prompt", p.no_pin_prompt, "allow prompt eviction");
}

CachePolicyConfig build_policy(const PolicyOpts& p, std::size_t n_visual) {
    CachePolicyConfig cfg;
    cfg.policy = policy_from_string(p.policy);
    cfg.window_W = p.window;
    cfg.budget_M = p.budget;
    cfg.recent_R = p.recent;
    cfg.sink_count = p.sink;
    cfg.buffer_rows = p.buffer_rows;
    cfg.pin_prompt = !p.no_pin_prompt;
    if (!p.partition_file.empty()) cfg.partition = read_partition_csv(p.partition_file);
    if (cfg.policy != PolicyKind::full && p.budget_frac > 0.0)
        apply_budget_fraction(cfg, p.budget_frac, n_visual);
    return cfg;
}

std::string policy_args_echo(const PolicyOpts& p) {
    std::ostringstream ss;
    ss << "--policy " << p.policy << " --window " << p.window << " --budget " << p.budget
       << " --recent " << p.recent << " --sink " << p.sink << " --buffer-rows " << p.buffer_rows;
    if (p.budget_frac > 0.0) ss << " --budget-frac " << trim_num(p.budget_frac);
    if (!p.partition_file.empty()) ss << " --partition-file " << p.partition_file;
    if (p.no_pin_prompt) ss << " --no-pin-prompt";
    return ss.str();
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw input_error("cannot write output file '" + path + "'");
    return out;
}

// Every output begins with the tool version and the fully resolved
// re-invocation line; rerunning that line reproduces the file byte for byte.
std::vector<std::string> repro_header(const std::string& command) {
    return {std::string(kToolVersion), "command: ssdkv " + command};
}

void write_header(std::ostream& out, const std::string& command) {
    for (const auto& line : repro_header(command)) out << "# " << line << "\n";
}

int cmd_profile(const std::string& trace_path, std::size_t w, const std::string& out_path,
                bool histogram) {
    const AttentionTrace trace = read_trace_file(trace_path);
    const SparsityProfile prof = sparsity(trace, w);
    std::ostringstream cmd;
    cmd << "profile --trace " << trace_path << " --w " << w << " --out " << out_path;
    if (histogram) cmd << " --histogram";
    auto out = open_out(out_path);
    write_profile_csv(out, prof, repro_header(cmd.str()));
    if (histogram) std::cout << format_histogram(sparsity_histogram(prof));
    return 0;
}

int cmd_classify(const std::string& profile_path, double tau, const std::string& out_path,
                 bool random, std::uint64_t seed) {
    const SparsityProfile prof = read_profile_csv(profile_path);
    HeadPartition part = classify(prof, tau);
    std::ostringstream cmd;
    cmd << "classify --profile " << profile_path << " --tau " << trim_num(tau) << " --out "
        << out_path;
    if (random) {
        std::size_t n_sem = 0;
        for (auto l : part.labels)
            if (l == HeadLabel::Semantic) ++n_sem;
        part = random_partition(prof.n_layers, prof.n_heads, n_sem, seed);
        cmd << " --random --seed " << seed;
    }
    auto out = open_out(out_path);
    write_partition_csv(out, part, &prof, repro_header(cmd.str()));
    return 0;
}

struct GenerateOpts {
    std::string model_config;
    std::string prompt_tokens;
    std::string grid;
    double gamma = 5.0;
    double temperature = 1.0;
    std::size_t top_k = 8;
    std::uint64_t seed = 7;
    bool timing = false;
    bool no_cfg = false;
    std::string out;
    std::string trace_out;
};

ModelConfig resolve_model(const std::string& path, const std::string& grid) {
    ModelConfig config = path.empty() ? ModelConfig{} : load_model_config(path);
    if (!grid.empty()) {
        if (std::sscanf(grid.c_str(), "%zux%zu", &config.grid_h, &config.grid_w) != 2)
            throw input_error("bad --grid, expected HxW");
    }
    config.validate();
    return config;
}

int cmd_generate(const GenerateOpts& g, const PolicyOpts& p) {
    const ModelConfig config = resolve_model(g.model_config, g.grid);
    GenerationRequest req;
    req.prompt = parse_token_list(g.prompt_tokens);
    req.gamma = g.gamma;
    req.sampling.temperature = g.temperature;
    req.sampling.top_k = g.top_k;
    req.sample_seed = g.seed;
    req.policy = build_policy(p, config.n_visual());
    req.capture_attention = !g.trace_out.empty();
    req.capture_timing = g.timing;
    req.cfg_enabled = !g.no_cfg;

    const ModelWeights weights = init_model(config);
    const GenerationResult result = generate(req, weights, config);

    std::ostringstream cmd;
    cmd << "generate";
    if (!g.model_config.empty()) cmd << " --model-config " << g.model_config;
    cmd << " --prompt-tokens " << g.prompt_tokens << " --gamma " << trim_num(g.gamma);
    if (!g.grid.empty()) cmd << " --grid " << g.grid;
    cmd << " --temperature " << trim_num(g.temperature) << " --top-k " << g.top_k << " --seed "
        << g.seed << ' ' << policy_args_echo(p);
    if (g.timing) cmd << " --timing";
    if (g.no_cfg) cmd << " --no-cfg";
    if (!g.trace_out.empty()) cmd << " --trace-out " << g.trace_out;
    cmd << " --out " << g.out;

    auto out = open_out(g.out);
    write_header(out, cmd.str());
    out << "# memory_entries=" << result.memory.total_entries
        << " memory_scalars=" << result.memory.total_scalars
        << " memory_bytes=" << result.memory.total_bytes << "\n";
    out << (g.timing ? "step,token,micros\n" : "step,token\n");
    for (std::size_t t = 0; t < result.tokens.size(); ++t) {
        out << t << ',' << result.tokens[t];
        if (g.timing) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.1f", result.step_seconds[t] * 1e6);
            out << ',' << buf;
        }
        out << "\n";
    }
    if (!g.trace_out.empty()) {
        AttentionTrace trace;
        append_capture(trace, 0, *result.trace, req.prompt.size());
        write_trace_file(g.trace_out, trace, repro_header(cmd.str()));
    }
    return 0;
}

int cmd_divergence(const GenerateOpts& g) {
    const ModelConfig config = resolve_model(g.model_config, g.grid);
    GenerationRequest req;
    req.prompt = parse_token_list(g.prompt_tokens);
    req.gamma = g.gamma;
    req.sampling.temperature = g.temperature;
    req.sampling.top_k = g.top_k;
    req.sample_seed = g.seed;
    req.policy.policy = PolicyKind::full;

    const ModelWeights weights = init_model(config);
    BranchCaches guided = generate_with_caches(req, weights, config);
    GenerationRequest native_req = req;
    native_req.cfg_enabled = false;
    BranchCaches native = generate_with_caches(native_req, weights, config);

    const DivergenceReport rep =
        kv_divergence(*guided.conditional, req.prompt.size(), *native.conditional,
                      req.prompt.size(), config.n_visual(), config.grid_w);

    std::ostringstream cmd;
    cmd << "divergence";
    if (!g.model_config.empty()) cmd << " --model-config " << g.model_config;
    cmd << " --prompt-tokens " << g.prompt_tokens << " --gamma " << trim_num(g.gamma);
    if (!g.grid.empty()) cmd << " --grid " << g.grid;
    cmd << " --temperature " << trim_num(g.temperature) << " --top-k " << g.top_k << " --seed "
        << g.seed << " --out " << g.out;

    auto out = open_out(g.out);
    write_header(out, cmd.str());
    out << "# axis=squared-L2-divergence grid_w=" << rep.grid_w << "\n";
    out << "position,divergence,margin_column\n";
    for (std::size_t j = 0; j < rep.mse.size(); ++j)
        out << j << ',' << fmt_double(rep.mse[j]) << ',' << (rep.is_margin(j) ? 1 : 0) << "\n";
    return 0;
}

int cmd_bench(const std::string& plan_path, const std::string& model_config,
              const std::string& out_path) {
    const ConfigFile plan_cfg = ConfigFile::parse_file(plan_path);
    ModelConfig config;
    if (!model_config.empty()) config = load_model_config(model_config);
    else config = load_model_config(plan_path); // plan may embed a [model] section
    const BenchPlan plan = load_bench_plan(plan_cfg, config);
    const ModelWeights weights = init_model(config);
    const auto rows = run_bench(plan, weights, config);

    std::ostringstream cmd;
    cmd << "bench --plan " << plan_path;
    if (!model_config.empty()) cmd << " --model-config " << model_config;
    cmd << " --out " << out_path;
    auto out = open_out(out_path);
    write_header(out, cmd.str());
    out << emit_table(rows, TableFormat::csv);
    std::cout << emit_table(rows, TableFormat::markdown);
    return 0;
}

int cmd_trace_replay(const std::string& trace_path, const PolicyOpts& p,
                     const std::string& out_path, double budget_frac_base) {
    const AttentionTrace trace = read_trace_file(trace_path);
    std::size_t n_visual = 0;
    if (budget_frac_base > 0.0) {
        // infer the visual length from the trace so --budget-frac has a base
        std::map<std::size_t, std::size_t> steps_per_prompt;
        for (const auto& r : trace.records)
            if (r.layer == 0 && r.head == 0) steps_per_prompt[r.prompt] += 1;
        for (const auto& [pr, n] : steps_per_prompt) n_visual = std::max(n_visual, n);
    }
    CachePolicyConfig cfg = build_policy(p, n_visual);
    const ReplayReport rep = trace_replay(trace, cfg);

    std::ostringstream cmd;
    cmd << "trace-replay --trace " << trace_path << ' ' << policy_args_echo(p) << " --out "
        << out_path;
    auto out = open_out(out_path);
    write_header(out, cmd.str());
    out << "# mean_retained_mass=" << fmt_double(rep.mean_retained_mass) << "\n";
    out << "layer,head,retained_mass\n";
    for (std::size_t l = 0; l < rep.n_layers; ++l)
        for (std::size_t h = 0; h < rep.n_heads; ++h)
            out << l << ',' << h << ','
                << fmt_double(rep.per_head_retained_mass[l * rep.n_heads + h]) << "\n";
    return 0;
}

} // namespace

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"SSD KV-cache compression toolkit"};
    app.require_subcommand(1);

    // profile
    auto* profile = app.add_subcommand("profile", "compute per-head sparsity from a trace");
    std::string trace_path, out_path, profile_path;
    std::size_t w = 32;
    bool histogram = false;
    profile->add_option("--trace", trace_path, "attention trace file")->required();
    profile->add_option("--w", w, "recency window");
    profile->add_option("--out", out_path, "profile CSV output")->required();
    profile->add_flag("--histogram", histogram, "print the sparsity histogram to stdout");

    // classify
    auto* classify_cmd = app.add_subcommand("classify", "threshold a profile into a partition");
    double tau = 0.8;
    bool random = false;
    std::uint64_t cls_seed = 0;
    std::string cls_out;
    classify_cmd->add_option("--profile", profile_path, "sparsity profile CSV")->required();
    classify_cmd->add_option("--tau", tau, "classification threshold");
    classify_cmd->add_option("--out", cls_out, "partition CSV output")->required();
    classify_cmd->add_flag("--random", random, "shuffle labels, keeping the Semantic count");
    classify_cmd->add_option("--seed", cls_seed, "shuffle seed");

    // generate
    auto* gen = app.add_subcommand("generate", "autoregressive raster generation with CFG");
    GenerateOpts gopts;
    PolicyOpts gen_policy;
    gen->add_option("--model-config", gopts.model_config, "model config file");
    gen->add_option("--prompt-tokens", gopts.prompt_tokens, "comma-separated token ids")
        ->required();
    gen->add_option("--gamma", gopts.gamma, "CFG guidance scale");
    gen->add_option("--grid", gopts.grid, "grid override, HxW");
    gen->add_option("--temperature", gopts.temperature, "sampling temperature");
    gen->add_option("--top-k", gopts.top_k, "top-k truncation");
    gen->add_option("--seed", gopts.seed, "sampling seed");
    gen->add_flag("--timing", gopts.timing, "include per-step microseconds");
    gen->add_flag("--no-cfg", gopts.no_cfg, "native decoding without guidance");
    gen->add_option("--trace-out", gopts.trace_out, "write the conditional attention trace");
    gen->add_option("--out", gopts.out, "result CSV")->required();
    add_policy_flags(gen, gen_policy);

    // divergence
    auto* div = app.add_subcommand("divergence", "CFG-vs-native KV divergence per position");
    GenerateOpts dopts;
    div->add_option("--model-config", dopts.model_config, "model config file");
    div->add_option("--prompt-tokens", dopts.prompt_tokens, "comma-separated token ids")
        ->required();
    div->add_option("--gamma", dopts.gamma, "CFG guidance scale");
    div->add_option("--grid", dopts.grid, "grid override, HxW");
    div->add_option("--temperature", dopts.temperature, "sampling temperature");
    div->add_option("--top-k", dopts.top_k, "top-k truncation");
    div->add_option("--seed", dopts.seed, "sampling seed");
    div->add_option("--out", dopts.out, "divergence CSV")->required();

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "throughput and memory comparison");
    std::string plan_path, bench_model, bench_out;
    bench_cmd->add_option("--plan", plan_path, "bench plan config")->required();
    bench_cmd->add_option("--model-config", bench_model, "model config file");
    bench_cmd->add_option("--out", bench_out, "bench CSV output")->required();

    // trace-replay
    auto* replay_cmd = app.add_subcommand("trace-replay", "replay a trace through a policy");
    std::string rt_trace, rt_out;
    PolicyOpts replay_policy;
    replay_cmd->add_option("--trace", rt_trace, "attention trace file")->required();
    replay_cmd->add_option("--out", rt_out, "retention report CSV")->required();
    add_policy_flags(replay_cmd, replay_policy);

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n" << app.help();
        return 1;
    }

    try {
        if (profile->parsed()) return cmd_profile(trace_path, w, out_path, histogram);
        if (classify_cmd->parsed())
            return cmd_classify(profile_path, tau, cls_out, random, cls_seed);
        if (gen->parsed()) return cmd_generate(gopts, gen_policy);
        if (div->parsed()) return cmd_divergence(dopts);
        if (bench_cmd->parsed()) return cmd_bench(plan_path, bench_model, bench_out);
        if (replay_cmd->parsed())
            return cmd_trace_replay(rt_trace, replay_policy, rt_out,
                                    replay_policy.budget_frac);
    } catch (const std::runtime_error& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
    return 1;
}

int dispatch(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return dispatch(args);
}

} // namespace ssdkv
