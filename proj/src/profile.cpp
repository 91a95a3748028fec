#include "seglat/profile.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "seglat/errors.hpp"

namespace seglat {

namespace {

std::size_t attn_params(std::size_t d_q, std::size_t d_ctx, std::size_t inner) {
    return 2 * d_q + 2 * d_ctx + d_q * inner + 2 * d_ctx * inner + inner * d_q;
}

std::size_t ffn_params(std::size_t d, std::size_t mult) {
    const std::size_t fd = d * mult;
    return 2 * d + d * fd + fd + fd * d + d;
}

// Mirrors attention_block op-for-op under the tensorcore counting
// conventions.
std::uint64_t attn_flops(std::size_t n_q, std::size_t n_c, std::size_t d_q, std::size_t d_ctx,
                         std::size_t inner, std::size_t heads, bool masked) {
    std::uint64_t f = 0;
    f += 5ull * n_q * d_q + 5ull * n_c * d_ctx;                 // pre-norms
    f += 2ull * n_q * d_q * inner + 4ull * n_c * d_ctx * inner;  // Q, K, V
    f += 4ull * n_q * n_c * inner;                               // scores + weighted sum
    f += static_cast<std::uint64_t>(heads) * n_q * n_c * (masked ? 7 : 6);  // scale/mask/softmax
    f += 2ull * n_q * inner * d_q;                               // output projection
    f += static_cast<std::uint64_t>(n_q) * d_q;                  // residual
    return f;
}

std::uint64_t ffn_flops(std::size_t rows, std::size_t d, std::size_t mult) {
    const std::uint64_t fd = d * mult;
    std::uint64_t f = 0;
    f += 5ull * rows * d;                    // pre-norm
    f += 2ull * rows * d * fd + rows * fd;   // w1 + bias
    f += 8ull * rows * fd;                   // gelu
    f += 2ull * rows * fd * d + rows * d;    // w2 + bias
    f += static_cast<std::uint64_t>(rows) * d;  // residual
    return f;
}

double percentile(std::vector<double> sorted, double p) {
    if (sorted.empty()) return 0.0;
    const double idx = p * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(idx);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = idx - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

std::size_t count_params(const ModelConfig& cfg, std::size_t token_width) {
    cfg.validate();
    const std::size_t d = cfg.latent_dim;
    std::size_t per_layer = attn_params(d, token_width, cfg.cross_inner()) +
                            ffn_params(d, cfg.ffn_multiplier) +
                            cfg.self_blocks_per_cross *
                                (attn_params(d, d, cfg.self_inner()) +
                                 ffn_params(d, cfg.ffn_multiplier));
    return d                       // latent seed
           + cfg.depth * per_layer
           + 2 * d                 // final norm
           + d * cfg.n_classes + cfg.n_classes;
}

std::uint64_t estimate_flops(const ModelConfig& cfg, std::size_t num_segments,
                             std::size_t token_count, std::size_t token_width) {
    cfg.validate();
    const std::size_t d = cfg.latent_dim;
    std::uint64_t per_layer = 0;
    std::size_t latent_rows = 0;
    if (num_segments == 0) {
        latent_rows = cfg.num_latents;
        per_layer += attn_flops(latent_rows, token_count, d, token_width, cfg.cross_inner(),
                                cfg.cross_heads, false);
    } else {
        latent_rows = num_segments;
        const std::size_t seg_len = (token_count + num_segments - 1) / num_segments;
        per_layer += static_cast<std::uint64_t>(num_segments) *
                     attn_flops(1, seg_len, d, token_width, cfg.cross_inner(), cfg.cross_heads,
                                true);
    }
    per_layer += ffn_flops(latent_rows, d, cfg.ffn_multiplier);
    per_layer += static_cast<std::uint64_t>(cfg.self_blocks_per_cross) *
                 (attn_flops(latent_rows, latent_rows, d, d, cfg.self_inner(), cfg.self_heads,
                             false) +
                  ffn_flops(latent_rows, d, cfg.ffn_multiplier));
    std::uint64_t total = cfg.depth * per_layer;
    if (cfg.pooling == Pooling::mean) total += static_cast<std::uint64_t>(latent_rows) * d + d;
    total += 5ull * d;                              // final norm
    total += 2ull * d * cfg.n_classes + cfg.n_classes;  // head
    return total;
}

std::uint64_t instrumented_forward_flops(const ModelParams& params, const SegmentedTokens& seg) {
    reset_flop_count();
    forward(params, seg);
    return flop_count();
}

std::uint64_t instrumented_forward_flops_unsegmented(const ModelParams& params,
                                                     const TokenBatch& batch) {
    reset_flop_count();
    forward_unsegmented(params, batch);
    return flop_count();
}

void benchmark(const ModelParams& params, const SegmentedTokens& seg, const BenchmarkConfig& cfg,
               CostReport& report) {
    if (cfg.timed_iters < 1) throw config_error("benchmark: timed_iters must be at least 1");
    using clock = std::chrono::steady_clock;
    for (std::size_t i = 0; i < cfg.warmup_iters; ++i) forward(params, seg);
    std::vector<double> times_ms(cfg.timed_iters);
    for (std::size_t i = 0; i < cfg.timed_iters; ++i) {
        const auto t0 = clock::now();
        forward(params, seg);
        const auto t1 = clock::now();
        times_ms[i] = std::chrono::duration<double, std::milli>(t1 - t0).count();
    }
    std::sort(times_ms.begin(), times_ms.end());
    double mean = 0.0;
    for (double t : times_ms) mean += t;
    mean /= static_cast<double>(times_ms.size());
    report.latency_mean_ms = mean;
    report.latency_p50_ms = percentile(times_ms, 0.50);
    report.latency_p95_ms = percentile(times_ms, 0.95);
    report.samples_per_second = mean > 0.0 ? 1000.0 / mean : 0.0;
}

CostReport profile_config(const ModelParams& params, const SegmentedTokens& seg,
                          const std::string& input_desc, const BenchmarkConfig& bench) {
    CostReport r;
    r.input_desc = input_desc;
    r.num_segments = seg.num_segments;
    r.token_count = seg.real_count();
    r.token_width = seg.tokens.extent(1);
    r.param_count = count_params(params.cfg, params.token_width);
    r.params_millions = static_cast<double>(r.param_count) / 1e6;
    r.gflops = static_cast<double>(estimate_flops(params.cfg, seg.num_segments, r.token_count,
                                                  r.token_width)) /
               1e9;
    benchmark(params, seg, bench, r);
    return r;
}

std::string cost_report_json(const CostReport& r) {
    nlohmann::ordered_json j;
    j["input"] = r.input_desc;
    j["segments"] = r.num_segments;
    j["tokens"] = r.token_count;
    j["token_width"] = r.token_width;
    j["params"] = r.param_count;
    j["params_millions"] = r.params_millions;
    j["gflops"] = r.gflops;
    j["latency_ms"] = {{"mean", r.latency_mean_ms}, {"p50", r.latency_p50_ms}, {"p95", r.latency_p95_ms}};
    j["samples_per_second"] = r.samples_per_second;
    return j.dump(2);
}

std::string cost_report_table(const std::vector<CostReport>& rows) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof(line), "%-18s %8s %10s %10s %14s %12s\n", "Input", "#Segm.",
                  "Params(M)", "GFLOPs", "Latency(ms)", "Samples/s");
    os << line;
    for (const auto& r : rows) {
        std::string seg = r.num_segments == 0 ? "-" : std::to_string(r.num_segments);
        std::snprintf(line, sizeof(line), "%-18s %8s %10.2f %10.3f %14.3f %12.2f\n",
                      r.input_desc.c_str(), seg.c_str(), r.params_millions, r.gflops,
                      r.latency_mean_ms, r.samples_per_second);
        os << line;
    }
    return os.str();
}

std::string cost_report_csv(const std::vector<CostReport>& rows) {
    std::ostringstream os;
    os << "input,segments,tokens,token_width,params,gflops,latency_mean_ms,latency_p50_ms,"
          "latency_p95_ms,samples_per_second\n";
    for (const auto& r : rows) {
        os << r.input_desc << "," << r.num_segments << "," << r.token_count << ","
           << r.token_width << "," << r.param_count << "," << r.gflops << ","
           << r.latency_mean_ms << "," << r.latency_p50_ms << "," << r.latency_p95_ms << ","
           << r.samples_per_second << "\n";
    }
    return os.str();
}

}  // namespace seglat
