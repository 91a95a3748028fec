#include "seglat/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "seglat/errors.hpp"
#include "seglat/rng.hpp"
#include "seglat/signal.hpp"

namespace seglat {

namespace {

constexpr double kMaskBias = -1e9;

Tensor init_weight(Rng& rng, Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.truncated_normal(0.02);
    return Tensor::from_data(std::move(shape), std::move(v), true);
}

AttentionParams init_attention(Rng& rng, std::size_t d_q, std::size_t d_ctx, std::size_t inner) {
    AttentionParams p;
    p.norm_q_gain = Tensor::full({d_q}, 1.0, true);
    p.norm_q_bias = Tensor::zeros({d_q}, true);
    p.norm_c_gain = Tensor::full({d_ctx}, 1.0, true);
    p.norm_c_bias = Tensor::zeros({d_ctx}, true);
    p.wq = init_weight(rng, {d_q, inner});
    p.wk = init_weight(rng, {d_ctx, inner});
    p.wv = init_weight(rng, {d_ctx, inner});
    p.wo = init_weight(rng, {inner, d_q});
    return p;
}

FfnParams init_ffn(Rng& rng, std::size_t d, std::size_t mult) {
    FfnParams p;
    p.norm_gain = Tensor::full({d}, 1.0, true);
    p.norm_bias = Tensor::zeros({d}, true);
    p.w1 = init_weight(rng, {d, d * mult});
    p.b1 = Tensor::zeros({d * mult}, true);
    p.w2 = init_weight(rng, {d * mult, d});
    p.b2 = Tensor::zeros({d}, true);
    return p;
}

// Attention sub-block only (pre-norm, MHA, residual); the feedforward
// sub-block is applied separately so it can run once over all rows.
Tensor attention_block(const Tensor& queries, const Tensor& context,
                       const std::vector<bool>* mask, const AttentionParams& p,
                       std::size_t heads, std::size_t head_dim, double eps) {
    const std::size_t n_q = queries.extent(0);
    const std::size_t n_c = context.extent(0);
    if (mask) {
        if (mask->size() != n_c) {
            throw shape_error("attend: mask length " + std::to_string(mask->size()) +
                              " != context rows " + std::to_string(n_c));
        }
        if (std::none_of(mask->begin(), mask->end(), [](bool b) { return b; })) {
            throw usage_error("attend: context is fully masked, no valid keys");
        }
    }
    Tensor nq = layer_norm(queries, p.norm_q_gain, p.norm_q_bias, eps);
    Tensor nc = layer_norm(context, p.norm_c_gain, p.norm_c_bias, eps);
    Tensor q = matmul(nq, p.wq);
    Tensor k = matmul(nc, p.wk);
    Tensor v = matmul(nc, p.wv);

    Tensor mask_bias;
    if (mask) {
        std::vector<double> mb(n_q * n_c, 0.0);
        for (std::size_t j = 0; j < n_c; ++j) {
            if (!(*mask)[j]) {
                for (std::size_t i = 0; i < n_q; ++i) mb[i * n_c + j] = kMaskBias;
            }
        }
        mask_bias = Tensor::from_data({n_q, n_c}, std::move(mb));
    }

    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<Tensor> head_outputs;
    head_outputs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * head_dim, head_dim);
        Tensor kh = slice_cols(k, h * head_dim, head_dim);
        Tensor vh = slice_cols(v, h * head_dim, head_dim);
        Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
        if (mask) scores = add(scores, mask_bias);
        Tensor weights = softmax(scores, 1);
        head_outputs.push_back(matmul(weights, vh));
    }
    Tensor cat = heads == 1 ? head_outputs[0] : concat_cols(head_outputs);
    return add(queries, matmul(cat, p.wo));
}

Tensor ffn_block(const Tensor& x, const FfnParams& p, double eps) {
    Tensor h = layer_norm(x, p.norm_gain, p.norm_bias, eps);
    h = add_rowwise(matmul(h, p.w1), p.b1);
    h = gelu(h);
    h = add_rowwise(matmul(h, p.w2), p.b2);
    return add(x, h);
}

Tensor head_logits(const ModelParams& params, const Tensor& latent_states) {
    Tensor pooled = params.cfg.pooling == Pooling::mean
                        ? mean_rows(latent_states)
                        : slice_rows(latent_states, latent_states.extent(0) - 1, 1);
    Tensor h = layer_norm(pooled, params.final_norm_gain, params.final_norm_bias,
                          params.cfg.norm_eps);
    return add_rowwise(matmul(h, params.head_w), params.head_b);
}

Tensor run_layers(const ModelParams& params, Tensor latent_states,
                  const std::function<Tensor(const LayerParams&, const Tensor&)>& cross_update) {
    const double eps = params.cfg.norm_eps;
    for (const LayerParams& layer : params.layers) {
        latent_states = cross_update(layer, latent_states);
        latent_states = ffn_block(latent_states, layer.cross_ffn, eps);
        for (const SelfBlockParams& blk : layer.self_blocks) {
            latent_states = attention_block(latent_states, latent_states, nullptr, blk.attn,
                                            params.cfg.self_heads, params.cfg.self_head_dim, eps);
            latent_states = ffn_block(latent_states, blk.ffn, eps);
        }
    }
    return latent_states;
}

void collect(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
             const AttentionParams& p) {
    out.emplace_back(prefix + ".norm_q.gain", p.norm_q_gain);
    out.emplace_back(prefix + ".norm_q.bias", p.norm_q_bias);
    out.emplace_back(prefix + ".norm_c.gain", p.norm_c_gain);
    out.emplace_back(prefix + ".norm_c.bias", p.norm_c_bias);
    out.emplace_back(prefix + ".wq", p.wq);
    out.emplace_back(prefix + ".wk", p.wk);
    out.emplace_back(prefix + ".wv", p.wv);
    out.emplace_back(prefix + ".wo", p.wo);
}

void collect(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
             const FfnParams& p) {
    out.emplace_back(prefix + ".norm.gain", p.norm_gain);
    out.emplace_back(prefix + ".norm.bias", p.norm_bias);
    out.emplace_back(prefix + ".w1", p.w1);
    out.emplace_back(prefix + ".b1", p.b1);
    out.emplace_back(prefix + ".w2", p.w2);
    out.emplace_back(prefix + ".b2", p.b2);
}

}  // namespace

void ModelConfig::validate() const {
    if (latent_dim == 0 || cross_heads == 0 || cross_head_dim == 0 || self_heads == 0 ||
        self_head_dim == 0 || n_classes == 0 || ffn_multiplier == 0 || num_latents == 0) {
        throw config_error("model: all dimensions must be positive");
    }
    if (norm_eps <= 0.0) throw config_error("model: norm_eps must be positive");
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("latent_seed", latent_seed);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string base = "layer" + std::to_string(l);
        collect(out, base + ".cross", layers[l].cross);
        collect(out, base + ".cross_ffn", layers[l].cross_ffn);
        for (std::size_t r = 0; r < layers[l].self_blocks.size(); ++r) {
            const std::string sb = base + ".self" + std::to_string(r);
            collect(out, sb + ".attn", layers[l].self_blocks[r].attn);
            collect(out, sb + ".ffn", layers[l].self_blocks[r].ffn);
        }
    }
    out.emplace_back("final_norm.gain", final_norm_gain);
    out.emplace_back("final_norm.bias", final_norm_bias);
    out.emplace_back("head.w", head_w);
    out.emplace_back("head.b", head_b);
    return out;
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named_parameters()) n += t.numel();
    return n;
}

ModelParams init_model(const ModelConfig& cfg, std::size_t token_width, std::uint64_t seed) {
    cfg.validate();
    if (token_width == 0) throw config_error("init_model: token width must be positive");
    Rng rng = Rng(seed).fork("init");
    ModelParams p;
    p.cfg = cfg;
    p.token_width = token_width;
    p.latent_seed = init_weight(rng, {1, cfg.latent_dim});
    p.layers.resize(cfg.depth);
    for (auto& layer : p.layers) {
        layer.cross = init_attention(rng, cfg.latent_dim, token_width, cfg.cross_inner());
        layer.cross_ffn = init_ffn(rng, cfg.latent_dim, cfg.ffn_multiplier);
        layer.self_blocks.resize(cfg.self_blocks_per_cross);
        for (auto& blk : layer.self_blocks) {
            blk.attn = init_attention(rng, cfg.latent_dim, cfg.latent_dim, cfg.self_inner());
            blk.ffn = init_ffn(rng, cfg.latent_dim, cfg.ffn_multiplier);
        }
    }
    p.final_norm_gain = Tensor::full({cfg.latent_dim}, 1.0, true);
    p.final_norm_bias = Tensor::zeros({cfg.latent_dim}, true);
    p.head_w = init_weight(rng, {cfg.latent_dim, cfg.n_classes});
    p.head_b = Tensor::zeros({cfg.n_classes}, true);
    return p;
}

Tensor attend(const Tensor& queries, const Tensor& context, const std::vector<bool>* mask,
              const AttentionParams& attn, const FfnParams& ffn, std::size_t heads,
              std::size_t head_dim, double eps) {
    Tensor out = attention_block(queries, context, mask, attn, heads, head_dim, eps);
    return ffn_block(out, ffn, eps);
}

Tensor forward(const ModelParams& params, const SegmentedTokens& seg) {
    const std::size_t s_count = seg.num_segments;
    const std::size_t seg_len = seg.segment_len;
    if (seg.mask.size() != seg.padded_count()) {
        throw shape_error("forward: mask size does not match segmentation");
    }
    Tensor latent_states = repeat_rows(params.latent_seed, s_count);
    auto cross_update = [&](const LayerParams& layer, const Tensor& states) {
        std::vector<Tensor> rows;
        rows.reserve(s_count);
        for (std::size_t s = 0; s < s_count; ++s) {
            Tensor q = slice_rows(states, s, 1);
            Tensor ctx = slice_rows(seg.tokens, s * seg_len, seg_len);
            std::vector<bool> m(seg.mask.begin() + s * seg_len,
                                seg.mask.begin() + (s + 1) * seg_len);
            rows.push_back(attention_block(q, ctx, &m, layer.cross, params.cfg.cross_heads,
                                           params.cfg.cross_head_dim, params.cfg.norm_eps));
        }
        return s_count == 1 ? rows[0] : concat_rows(rows);
    };
    latent_states = run_layers(params, latent_states, cross_update);
    return head_logits(params, latent_states);
}

Tensor forward_unsegmented(const ModelParams& params, const TokenBatch& batch) {
    Tensor latent_states = repeat_rows(params.latent_seed, params.cfg.num_latents);
    auto cross_update = [&](const LayerParams& layer, const Tensor& states) {
        return attention_block(states, batch.tokens, nullptr, layer.cross,
                               params.cfg.cross_heads, params.cfg.cross_head_dim,
                               params.cfg.norm_eps);
    };
    latent_states = run_layers(params, latent_states, cross_update);
    return head_logits(params, latent_states);
}

Prediction predict(const ModelParams& params, const Tensor& input, const TokenizerConfig& tok_cfg,
                   std::size_t num_segments) {
    TokenBatch batch = tokenize(input, tok_cfg);
    SegmentedTokens seg = segment(batch, num_segments);
    Tensor logits = forward(params, seg);
    Tensor probs = softmax(logits, 1);
    Prediction pred;
    pred.probabilities = probs.values();
    pred.klass = 0;
    for (std::size_t j = 1; j < pred.probabilities.size(); ++j) {
        if (pred.probabilities[j] > pred.probabilities[pred.klass]) pred.klass = j;
    }
    return pred;
}

namespace {

nlohmann::ordered_json config_to_json(const ModelConfig& cfg) {
    return {{"depth", cfg.depth},
            {"latent_dim", cfg.latent_dim},
            {"cross_heads", cfg.cross_heads},
            {"cross_head_dim", cfg.cross_head_dim},
            {"self_heads", cfg.self_heads},
            {"self_head_dim", cfg.self_head_dim},
            {"self_blocks_per_cross", cfg.self_blocks_per_cross},
            {"n_classes", cfg.n_classes},
            {"ffn_multiplier", cfg.ffn_multiplier},
            {"num_latents", cfg.num_latents},
            {"pooling", cfg.pooling == Pooling::mean ? "mean" : "last"},
            {"norm_eps", cfg.norm_eps}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.depth = j.at("depth").get<std::size_t>();
    cfg.latent_dim = j.at("latent_dim").get<std::size_t>();
    cfg.cross_heads = j.at("cross_heads").get<std::size_t>();
    cfg.cross_head_dim = j.at("cross_head_dim").get<std::size_t>();
    cfg.self_heads = j.at("self_heads").get<std::size_t>();
    cfg.self_head_dim = j.at("self_head_dim").get<std::size_t>();
    cfg.self_blocks_per_cross = j.at("self_blocks_per_cross").get<std::size_t>();
    cfg.n_classes = j.at("n_classes").get<std::size_t>();
    cfg.ffn_multiplier = j.at("ffn_multiplier").get<std::size_t>();
    cfg.num_latents = j.at("num_latents").get<std::size_t>();
    cfg.pooling = j.at("pooling").get<std::string>() == "last" ? Pooling::last : Pooling::mean;
    cfg.norm_eps = j.at("norm_eps").get<double>();
    return cfg;
}

// Serializes one tensor in the container format into a byte buffer.
void append_container(std::string& blob, const Tensor& t) {
    blob.append("LSG1", 4);
    blob.push_back(static_cast<char>(t.rank()));
    for (std::size_t e : t.shape()) {
        std::uint32_t v = static_cast<std::uint32_t>(e);
        for (int b = 0; b < 4; ++b) blob.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
    }
    const char* raw = reinterpret_cast<const char*>(t.values().data());
    blob.append(raw, t.numel() * 8);
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const TokenizerConfig& tok_cfg, std::size_t num_segments) {
    std::string blob;
    nlohmann::ordered_json index;
    index["format"] = "seglat-ckpt-1";
    index["model"] = config_to_json(params.cfg);
    index["token_width"] = params.token_width;
    index["tokenizer"] = {{"bands", tok_cfg.bands}, {"f_max", tok_cfg.f_max}};
    index["segments"] = num_segments;
    nlohmann::ordered_json pj = nlohmann::ordered_json::object();
    for (const auto& [name, t] : params.named_parameters()) {
        const std::size_t offset = blob.size();
        append_container(blob, t);
        pj[name] = {{"offset", offset}, {"bytes", blob.size() - offset}};
    }
    index["params"] = std::move(pj);
    const std::string header = index.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("save_checkpoint: cannot open " + path);
    std::uint64_t hlen = header.size();
    unsigned char lenb[8];
    for (int b = 0; b < 8; ++b) lenb[b] = static_cast<unsigned char>((hlen >> (8 * b)) & 0xff);
    os.write(reinterpret_cast<const char*>(lenb), 8);
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!os) throw io_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("load_checkpoint: cannot open " + path);
    unsigned char lenb[8];
    if (!is.read(reinterpret_cast<char*>(lenb), 8)) {
        throw format_error("load_checkpoint: truncated header length in " + path);
    }
    std::uint64_t hlen = 0;
    for (int b = 0; b < 8; ++b) hlen |= static_cast<std::uint64_t>(lenb[b]) << (8 * b);
    const std::uint64_t file_size =
        static_cast<std::uint64_t>(std::filesystem::file_size(path));
    if (hlen > file_size) {
        throw format_error("load_checkpoint: header length exceeds file size in " + path);
    }
    std::string header(hlen, '\0');
    if (!is.read(header.data(), static_cast<std::streamsize>(hlen))) {
        throw format_error("load_checkpoint: truncated JSON index in " + path);
    }
    nlohmann::json index;
    try {
        index = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw format_error("load_checkpoint: bad JSON index in " + path + ": " + e.what());
    }
    if (index.value("format", "") != "seglat-ckpt-1") {
        throw format_error("load_checkpoint: unknown format tag in " + path);
    }
    std::string blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

    Checkpoint ck;
    ck.params.cfg = config_from_json(index.at("model"));
    ck.params.token_width = index.at("token_width").get<std::size_t>();
    ck.tok_cfg.bands = index.at("tokenizer").at("bands").get<std::size_t>();
    ck.tok_cfg.f_max = index.at("tokenizer").at("f_max").get<double>();
    ck.num_segments = index.at("segments").get<std::size_t>();

    // Rebuild the parameter tree with correct shapes, then load each blob.
    ck.params = [&] {
        ModelParams skeleton = init_model(ck.params.cfg, ck.params.token_width, 0);
        return skeleton;
    }();
    for (auto& [name, t] : ck.params.named_parameters()) {
        const auto& entry = index.at("params").at(name);
        const std::size_t offset = entry.at("offset").get<std::size_t>();
        const std::size_t bytes = entry.at("bytes").get<std::size_t>();
        if (offset + bytes > blob.size()) {
            throw format_error("load_checkpoint: blob range for " + name + " out of bounds");
        }
        const char* p = blob.data() + offset;
        if (std::memcmp(p, "LSG1", 4) != 0) {
            throw format_error("load_checkpoint: bad container magic for " + name);
        }
        const unsigned char rank = static_cast<unsigned char>(p[4]);
        std::size_t pos = 5 + 4 * rank;
        Tensor dst = t;
        if (rank != dst.rank() || bytes != pos + dst.numel() * 8) {
            throw format_error("load_checkpoint: shape mismatch for " + name);
        }
        std::memcpy(dst.mutable_values().data(), p + pos, dst.numel() * 8);
    }
    return ck;
}

}  // namespace seglat
