#include "ssdkv/profiler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ssdkv/numerics.hpp"

namespace ssdkv {

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

std::size_t AttentionTrace::n_prompts() const {
    std::set<std::size_t> ids;
    for (const auto& r : records) ids.insert(r.prompt);
    return ids.size();
}

void AttentionTrace::validate() const {
    for (const auto& r : records) {
        if (r.layer >= n_layers || r.head >= n_heads)
            throw input_error("trace record layer/head outside header shape");
        if (r.positions.size() != r.probs.size())
            throw input_error("trace record positions/probs length mismatch");
        double sum = 0.0;
        for (std::size_t i = 0; i < r.positions.size(); ++i) {
            if (i > 0 && r.positions[i] <= r.positions[i - 1])
                throw input_error("trace record positions not strictly increasing");
            sum += r.probs[i];
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw input_error("trace record probabilities do not sum to 1");
    }
}

void append_capture(AttentionTrace& trace, std::size_t prompt_id, const CapturedTrace& capture,
                    std::size_t prompt_len) {
    if (trace.n_layers == 0) {
        trace.n_layers = capture.n_layers;
        trace.n_heads = capture.n_heads;
    }
    if (trace.n_layers != capture.n_layers || trace.n_heads != capture.n_heads)
        throw input_error("capture shape does not match trace header");
    const std::size_t per_step = capture.n_layers * capture.n_heads;
    for (std::size_t t = 0; t < capture.n_steps; ++t) {
        for (std::size_t l = 0; l < capture.n_layers; ++l) {
            for (std::size_t h = 0; h < capture.n_heads; ++h) {
                const AttentionVector& av = capture.records[t * per_step + l * capture.n_heads + h];
                TraceRecord r;
                r.prompt = prompt_id;
                r.layer = l;
                r.head = h;
                r.qpos = static_cast<std::int64_t>(prompt_len + t);
                r.positions = av.positions;
                r.probs = av.probs;
                trace.records.push_back(std::move(r));
            }
        }
    }
}

void write_trace(std::ostream& out, const AttentionTrace& trace,
                 const std::vector<std::string>& header_lines) {
    for (const auto& line : header_lines) out << "# " << line << "\n";
    out << "# ssdkv-trace-v1 n_layers=" << trace.n_layers << " n_heads=" << trace.n_heads << "\n";
    for (const auto& r : trace.records) {
        out << r.prompt << ' ' << r.qpos << ' ' << r.layer << ' ' << r.head;
        for (std::size_t i = 0; i < r.positions.size(); ++i)
            out << ' ' << r.positions[i] << ':' << fmt_double(r.probs[i]);
        out << "\n";
    }
}

void write_trace_file(const std::string& path, const AttentionTrace& trace,
                      const std::vector<std::string>& header_lines) {
    std::ofstream out(path);
    if (!out) throw input_error("cannot write trace file '" + path + "'");
    write_trace(out, trace, header_lines);
}

AttentionTrace read_trace_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw input_error("cannot open trace file '" + path + "'");
    AttentionTrace trace;
    bool have_header = false;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line.front() == '#') {
            const auto tag = line.find("ssdkv-trace-v1");
            if (tag != std::string::npos) {
                if (std::sscanf(line.c_str() + tag,
                                "ssdkv-trace-v1 n_layers=%zu n_heads=%zu", &trace.n_layers,
                                &trace.n_heads) != 2)
                    throw input_error("malformed trace header");
                have_header = true;
            }
            continue;
        }
        if (!have_header) throw input_error("trace data before header");
        std::istringstream ss(line);
        TraceRecord r;
        if (!(ss >> r.prompt >> r.qpos >> r.layer >> r.head))
            throw input_error("trace line " + std::to_string(lineno) + ": bad record prefix");
        std::string cell;
        while (ss >> cell) {
            const auto colon = cell.find(':');
            if (colon == std::string::npos)
                throw input_error("trace line " + std::to_string(lineno) + ": expected pos:prob");
            try {
                r.positions.push_back(std::stoll(cell.substr(0, colon)));
                r.probs.push_back(std::stod(cell.substr(colon + 1)));
            } catch (const std::logic_error&) {
                throw input_error("trace line " + std::to_string(lineno) + ": bad number");
            }
        }
        trace.records.push_back(std::move(r));
    }
    if (!have_header) throw input_error("trace file has no header");
    trace.validate();
    return trace;
}

SparsityProfile sparsity(const AttentionTrace& trace, std::size_t w) {
    if (trace.records.empty()) throw input_error("empty attention trace");
    const std::size_t n = trace.n_layers * trace.n_heads;
    // per (prompt, head): sum of per-step ratios and step count
    std::map<std::size_t, std::vector<std::pair<double, std::size_t>>> per_prompt;
    for (const auto& r : trace.records) {
        auto& acc = per_prompt[r.prompt];
        if (acc.empty()) acc.assign(n, {0.0, 0});
        const std::int64_t wi = static_cast<std::int64_t>(w);
        double numer = 0.0, denom = 0.0;
        for (std::size_t i = 0; i < r.positions.size(); ++i) {
            const std::int64_t p = r.positions[i];
            if (p > r.qpos - 1) continue; // current token mass excluded
            denom += r.probs[i];
            if (p <= r.qpos - 1 - wi) numer += r.probs[i];
        }
        const double ratio = denom > 0.0 ? numer / denom : 0.0;
        auto& cell = acc[r.layer * trace.n_heads + r.head];
        cell.first += ratio;
        cell.second += 1;
    }

    SparsityProfile prof;
    prof.n_layers = trace.n_layers;
    prof.n_heads = trace.n_heads;
    prof.window_w = w;
    prof.n_prompts = per_prompt.size();
    prof.s.assign(n, 0.0);
    for (const auto& [prompt, acc] : per_prompt) {
        (void)prompt;
        for (std::size_t i = 0; i < n; ++i) {
            if (acc[i].second == 0) continue;
            prof.s[i] += acc[i].first / static_cast<double>(acc[i].second);
        }
    }
    for (auto& v : prof.s) v /= static_cast<double>(prof.n_prompts);
    return prof;
}

HeadPartition classify(const SparsityProfile& profile, double tau) {
    HeadPartition part;
    part.n_layers = profile.n_layers;
    part.n_heads = profile.n_heads;
    part.tau = tau;
    part.labels.reserve(profile.s.size());
    for (double v : profile.s)
        part.labels.push_back(v > tau ? HeadLabel::Semantic : HeadLabel::Spatial);
    return part;
}

HeadPartition random_partition(std::size_t n_layers, std::size_t n_heads,
                               std::size_t n_semantic, std::uint64_t seed) {
    const std::size_t n = n_layers * n_heads;
    if (n_semantic > n) throw input_error("semantic count exceeds head count");
    HeadPartition part;
    part.n_layers = n_layers;
    part.n_heads = n_heads;
    part.tau = -1.0; // not threshold-derived
    part.labels.assign(n, HeadLabel::Spatial);
    for (std::size_t i = 0; i < n_semantic; ++i) part.labels[i] = HeadLabel::Semantic;
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.next_below(i);
        std::swap(part.labels[i - 1], part.labels[j]);
    }
    return part;
}

DivergenceReport kv_divergence(const CacheHandle& branch_a, std::size_t visual_start_a,
                               const CacheHandle& branch_b, std::size_t visual_start_b,
                               std::size_t n_visual, std::size_t grid_w) {
    if (branch_a.config().policy != PolicyKind::full ||
        branch_b.config().policy != PolicyKind::full)
        throw input_error("kv_divergence requires full (uncompressed) caches");
    if (branch_a.n_layers() != branch_b.n_layers() || branch_a.n_heads() != branch_b.n_heads())
        throw input_error("kv_divergence: branch shapes differ");

    DivergenceReport rep;
    rep.grid_w = grid_w;
    rep.mse.assign(n_visual, 0.0);
    for (std::size_t l = 0; l < branch_a.n_layers(); ++l) {
        for (std::size_t h = 0; h < branch_a.n_heads(); ++h) {
            const HeadCache& ca = branch_a.head(l, h);
            const HeadCache& cb = branch_b.head(l, h);
            if (ca.entries.size() < visual_start_a + n_visual ||
                cb.entries.size() < visual_start_b + n_visual)
                throw input_error("kv_divergence: visual token length mismatch");
            for (std::size_t j = 0; j < n_visual; ++j) {
                const CacheEntry& ea = ca.entries[visual_start_a + j];
                const CacheEntry& eb = cb.entries[visual_start_b + j];
                double acc = 0.0;
                for (std::size_t d = 0; d < ea.d_head(); ++d) {
                    const double dk = ea.key()[d] - eb.key()[d];
                    const double dv = ea.value()[d] - eb.value()[d];
                    acc += dk * dk + dv * dv;
                }
                rep.mse[j] += acc;
            }
        }
    }
    return rep;
}

std::vector<HistogramRow> sparsity_histogram(const SparsityProfile& profile) {
    std::vector<HistogramRow> rows(10);
    const std::size_t total = profile.s.size();
    for (std::size_t b = 0; b < 10; ++b) {
        rows[b].lo = 0.1 * static_cast<double>(b);
        rows[b].hi = 0.1 * static_cast<double>(b + 1);
    }
    for (double v : profile.s) {
        auto b = static_cast<std::size_t>(v * 10.0);
        if (b > 9) b = 9; // s == 1.0 lands in the top bucket
        rows[b].count += 1;
    }
    std::size_t cum = 0;
    for (auto& r : rows) {
        cum += r.count;
        r.cum_count = cum;
        r.pct = total ? 100.0 * static_cast<double>(r.count) / static_cast<double>(total) : 0.0;
        r.cum_pct = total ? 100.0 * static_cast<double>(cum) / static_cast<double>(total) : 0.0;
    }
    return rows;
}

std::string format_histogram(const std::vector<HistogramRow>& rows) {
    std::ostringstream out;
    out << "sparsity_range,percentage,count,cumulative_percentage,cumulative_count\n";
    char buf[96];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.1f-%.1f,%.1f,%zu,%.1f,%zu\n", r.lo, r.hi, r.pct,
                      r.count, r.cum_pct, r.cum_count);
        out << buf;
    }
    return out.str();
}

void write_profile_csv(std::ostream& out, const SparsityProfile& profile,
                       const std::vector<std::string>& header_lines) {
    for (const auto& line : header_lines) out << "# " << line << "\n";
    out << "# ssdkv-profile-v1 n_layers=" << profile.n_layers << " n_heads=" << profile.n_heads
        << " w=" << profile.window_w << " prompts=" << profile.n_prompts
        << " branch=" << profile.branch << " empty_past=" << profile.empty_past_policy << "\n";
    out << "layer,head,sparsity\n";
    for (std::size_t l = 0; l < profile.n_layers; ++l)
        for (std::size_t h = 0; h < profile.n_heads; ++h)
            out << l << ',' << h << ',' << fmt_double(profile.at(l, h)) << "\n";
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    cells.push_back(cur);
    return cells;
}

} // namespace

SparsityProfile read_profile_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw input_error("cannot open profile '" + path + "'");
    SparsityProfile prof;
    std::map<std::pair<std::size_t, std::size_t>, double> cells;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line.front() == '#') {
            const auto tag = line.find("ssdkv-profile-v1");
            if (tag != std::string::npos)
                std::sscanf(line.c_str() + tag,
                            "ssdkv-profile-v1 n_layers=%zu n_heads=%zu w=%zu prompts=%zu",
                            &prof.n_layers, &prof.n_heads, &prof.window_w, &prof.n_prompts);
            continue;
        }
        if (line.rfind("layer,", 0) == 0) continue;
        const auto c = split_csv_line(line);
        if (c.size() < 3) throw input_error("profile CSV: expected layer,head,sparsity");
        try {
            cells[{std::stoul(c[0]), std::stoul(c[1])}] = std::stod(c[2]);
        } catch (const std::logic_error&) {
            throw input_error("profile CSV: bad number in '" + line + "'");
        }
    }
    if (cells.empty()) throw input_error("profile CSV '" + path + "' has no rows");
    if (prof.n_layers == 0) {
        for (const auto& [lh, v] : cells) {
            prof.n_layers = std::max(prof.n_layers, lh.first + 1);
            prof.n_heads = std::max(prof.n_heads, lh.second + 1);
        }
    }
    prof.s.assign(prof.n_layers * prof.n_heads, 0.0);
    if (cells.size() != prof.s.size())
        throw input_error("profile CSV row count does not match head count");
    for (const auto& [lh, v] : cells) {
        if (lh.first >= prof.n_layers || lh.second >= prof.n_heads)
            throw input_error("profile CSV layer/head out of range");
        prof.s[lh.first * prof.n_heads + lh.second] = v;
    }
    return prof;
}

void write_partition_csv(std::ostream& out, const HeadPartition& partition,
                         const SparsityProfile* profile,
                         const std::vector<std::string>& header_lines) {
    for (const auto& line : header_lines) out << "# " << line << "\n";
    out << "# ssdkv-partition-v1 n_layers=" << partition.n_layers
        << " n_heads=" << partition.n_heads << " tau=" << fmt_double(partition.tau) << "\n";
    out << "layer,head,sparsity,label,tau\n";
    for (std::size_t l = 0; l < partition.n_layers; ++l) {
        for (std::size_t h = 0; h < partition.n_heads; ++h) {
            const double s = profile ? profile->at(l, h) : std::nan("");
            out << l << ',' << h << ',' << fmt_double(s) << ','
                << (partition.label(l, h) == HeadLabel::Semantic ? "Semantic" : "Spatial") << ','
                << fmt_double(partition.tau) << "\n";
        }
    }
}

HeadPartition read_partition_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw input_error("cannot open partition '" + path + "'");
    HeadPartition part;
    std::map<std::pair<std::size_t, std::size_t>, HeadLabel> cells;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line.front() == '#') {
            const auto tag = line.find("ssdkv-partition-v1");
            if (tag != std::string::npos)
                std::sscanf(line.c_str() + tag,
                            "ssdkv-partition-v1 n_layers=%zu n_heads=%zu tau=%lf", &part.n_layers,
                            &part.n_heads, &part.tau);
            continue;
        }
        if (line.rfind("layer,", 0) == 0) continue;
        const auto c = split_csv_line(line);
        if (c.size() < 4) throw input_error("partition CSV: expected layer,head,sparsity,label");
        HeadLabel label;
        if (c[3] == "Semantic") label = HeadLabel::Semantic;
        else if (c[3] == "Spatial") label = HeadLabel::Spatial;
        else throw input_error("partition CSV: unknown label '" + c[3] + "'");
        try {
            cells[{std::stoul(c[0]), std::stoul(c[1])}] = label;
        } catch (const std::logic_error&) {
            throw input_error("partition CSV: bad index in '" + line + "'");
        }
    }
    if (cells.empty()) throw input_error("partition CSV '" + path + "' has no rows");
    if (part.n_layers == 0) {
        for (const auto& [lh, v] : cells) {
            part.n_layers = std::max(part.n_layers, lh.first + 1);
            part.n_heads = std::max(part.n_heads, lh.second + 1);
        }
    }
    part.labels.assign(part.n_layers * part.n_heads, HeadLabel::Spatial);
    if (cells.size() != part.labels.size())
        throw input_error("partition CSV row count does not match head count");
    for (const auto& [lh, v] : cells) {
        if (lh.first >= part.n_layers || lh.second >= part.n_heads)
            throw input_error("partition CSV layer/head out of range");
        part.labels[lh.first * part.n_heads + lh.second] = v;
    }
    return part;
}

} // namespace ssdkv
