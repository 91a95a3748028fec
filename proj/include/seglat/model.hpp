#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "seglat/tensor.hpp"
#include "seglat/tokenizer.hpp"

namespace seglat {

enum class Pooling { mean, last };

struct ModelConfig {
    std::size_t depth = 4;           // L layers
    std::size_t latent_dim = 128;    // d
    std::size_t cross_heads = 1;
    std::size_t cross_head_dim = 64;
    std::size_t self_heads = 8;
    std::size_t self_head_dim = 64;
    std::size_t self_blocks_per_cross = 8;  // R
    std::size_t n_classes = 3;
    std::size_t ffn_multiplier = 1;
    std::size_t num_latents = 32;    // M, unsegmented mode only
    Pooling pooling = Pooling::mean;
    double norm_eps = 1e-5;

    std::size_t cross_inner() const { return cross_heads * cross_head_dim; }
    std::size_t self_inner() const { return self_heads * self_head_dim; }
    void validate() const;
};

// One pre-normalized attention block: query/context norms and Q,K,V,O
// projections. Projections carry no bias.
struct AttentionParams {
    Tensor norm_q_gain, norm_q_bias;
    Tensor norm_c_gain, norm_c_bias;
    Tensor wq, wk, wv, wo;
};

struct FfnParams {
    Tensor norm_gain, norm_bias;
    Tensor w1, b1, w2, b2;
};

struct SelfBlockParams {
    AttentionParams attn;
    FfnParams ffn;
};

struct LayerParams {
    AttentionParams cross;
    FfnParams cross_ffn;
    std::vector<SelfBlockParams> self_blocks;
};

struct ModelParams {
    ModelConfig cfg;
    std::size_t token_width = 0;  // C'
    Tensor latent_seed;           // 1 x d
    std::vector<LayerParams> layers;
    Tensor final_norm_gain, final_norm_bias;
    Tensor head_w, head_b;

    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::size_t parameter_count() const;
};

ModelParams init_model(const ModelConfig& cfg, std::size_t token_width, std::uint64_t seed);

// Pre-norm multi-head attention with residual, then a pre-norm feedforward
// with residual. mask, when present, must cover the context rows; bias -1e9
// on masked rows. Returns updated queries.
Tensor attend(const Tensor& queries, const Tensor& context,
              const std::vector<bool>* mask, const AttentionParams& attn,
              const FfnParams& ffn, std::size_t heads, std::size_t head_dim, double eps);

// Segmented forward: one latent per segment, per-layer local cross-attention
// followed by R inter-segment self-attention blocks; pooled head.
Tensor forward(const ModelParams& params, const SegmentedTokens& seg);

// Unsegmented baseline: M identical latent rows attend over all tokens.
Tensor forward_unsegmented(const ModelParams& params, const TokenBatch& batch);

struct Prediction {
    std::size_t klass = 0;
    std::vector<double> probabilities;
};

Prediction predict(const ModelParams& params, const Tensor& input, const TokenizerConfig& tok_cfg,
                   std::size_t num_segments);

// Self-describing checkpoint: JSON index (configs + per-parameter byte
// offsets) followed by concatenated tensor containers.
void save_checkpoint(const std::string& path, const ModelParams& params,
                     const TokenizerConfig& tok_cfg, std::size_t num_segments);

struct Checkpoint {
    ModelParams params;
    TokenizerConfig tok_cfg;
    std::size_t num_segments = 1;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace seglat
