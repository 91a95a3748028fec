#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seglat/model.hpp"
#include "seglat/tokenizer.hpp"

namespace seglat {

struct CostReport {
    std::string input_desc;
    std::size_t num_segments = 0;  // 0 = unsegmented (M latents)
    std::size_t token_count = 0;
    std::size_t token_width = 0;
    std::size_t param_count = 0;
    double params_millions = 0.0;
    double gflops = 0.0;
    double latency_mean_ms = 0.0;
    double latency_p50_ms = 0.0;
    double latency_p95_ms = 0.0;
    double samples_per_second = 0.0;
};

// Exact learnable-element count, closed form; equals the element count of an
// instantiated ModelParams for the same config.
std::size_t count_params(const ModelConfig& cfg, std::size_t token_width);

// Analytic forward-pass FLOPs for one sample, MAC = 2 FLOPs, softmax 5 and
// GELU 8 FLOPs/element, layer norm 5. num_segments = 0 selects the
// unsegmented path with cfg.num_latents latents.
std::uint64_t estimate_flops(const ModelConfig& cfg, std::size_t num_segments,
                             std::size_t token_count, std::size_t token_width);

// Counter-instrumented forward pass; the independent oracle for
// estimate_flops.
std::uint64_t instrumented_forward_flops(const ModelParams& params, const SegmentedTokens& seg);
std::uint64_t instrumented_forward_flops_unsegmented(const ModelParams& params,
                                                     const TokenBatch& batch);

struct BenchmarkConfig {
    std::size_t warmup_iters = 10;
    std::size_t timed_iters = 100;
};

// Wall-clock per single-sample forward pass; fills the latency fields.
void benchmark(const ModelParams& params, const SegmentedTokens& seg, const BenchmarkConfig& cfg,
               CostReport& report);

CostReport profile_config(const ModelParams& params, const SegmentedTokens& seg,
                          const std::string& input_desc, const BenchmarkConfig& bench);

std::string cost_report_json(const CostReport& r);
std::string cost_report_table(const std::vector<CostReport>& rows);
std::string cost_report_csv(const std::vector<CostReport>& rows);

}  // namespace seglat
