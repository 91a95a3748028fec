#include "seglat/tokenizer.hpp"

#include <cmath>
#include <string>

#include "seglat/errors.hpp"

namespace seglat {

void TokenizerConfig::validate() const {
    if (bands < 1) throw config_error("tokenizer: K must be at least 1");
    if (f_max != 0.0 && f_max < 2.0) throw config_error("tokenizer: f_max must be at least 2");
}

double TokenizerConfig::f_max_for(std::size_t extent) const {
    if (f_max != 0.0) return f_max;
    return std::max<double>(2.0, static_cast<double>(extent));
}

std::vector<double> frequency_bands(std::size_t bands, double f_max) {
    if (bands < 1) throw config_error("frequency_bands: K must be at least 1");
    if (f_max < 2.0) throw config_error("frequency_bands: f_max must be at least 2");
    std::vector<double> s(bands);
    const double hi = f_max / 2.0;
    if (bands == 1) {
        s[0] = 1.0;
    } else {
        for (std::size_t k = 0; k < bands; ++k) {
            s[k] = 1.0 + (hi - 1.0) * static_cast<double>(k) / static_cast<double>(bands - 1);
        }
    }
    return s;
}

std::vector<double> fourier_position_encoding(const std::vector<double>& p, std::size_t bands,
                                              double f_max) {
    const std::vector<double> s = frequency_bands(bands, f_max);
    std::vector<double> out;
    out.reserve(p.size() * (2 * bands + 1));
    for (double coord : p) {
        if (coord < -1.0 || coord > 1.0) {
            throw data_error("fourier_position_encoding: coordinate " + std::to_string(coord) +
                             " outside [-1,1]");
        }
        for (double sk : s) out.push_back(std::sin(M_PI * sk * coord));
        for (double sk : s) out.push_back(std::cos(M_PI * sk * coord));
        out.push_back(coord);
    }
    return out;
}

TokenBatch tokenize(const Tensor& input, const TokenizerConfig& cfg) {
    cfg.validate();
    if (input.rank() != 2 && input.rank() != 3) {
        throw data_error("tokenize: unsupported input rank " + std::to_string(input.rank()) +
                         ", expected 2 (L x C) or 3 (H x W x C)");
    }
    const std::size_t d_axes = input.rank() - 1;
    const std::size_t channels = input.extent(input.rank() - 1);
    std::vector<std::size_t> extents(d_axes);
    std::size_t n_tokens = 1;
    for (std::size_t a = 0; a < d_axes; ++a) {
        extents[a] = input.extent(a);
        n_tokens *= extents[a];
    }
    const std::size_t pos_width = d_axes * (2 * cfg.bands + 1);
    const std::size_t width = channels + pos_width;

    // Per-axis encodings precomputed once; token rows assembled row-major.
    std::vector<std::vector<std::vector<double>>> axis_enc(d_axes);
    for (std::size_t a = 0; a < d_axes; ++a) {
        axis_enc[a].resize(extents[a]);
        const double fm = cfg.f_max_for(extents[a]);
        for (std::size_t i = 0; i < extents[a]; ++i) {
            const double coord = extents[a] == 1
                                     ? 0.0
                                     : -1.0 + 2.0 * static_cast<double>(i) /
                                                  static_cast<double>(extents[a] - 1);
            axis_enc[a][i] = fourier_position_encoding({coord}, cfg.bands, fm);
        }
    }

    std::vector<double> tokens(n_tokens * width);
    const double* in = input.values().data();
    for (std::size_t t = 0; t < n_tokens; ++t) {
        double* row = tokens.data() + t * width;
        for (std::size_t c = 0; c < channels; ++c) row[c] = in[t * channels + c];
        std::size_t rem = t;
        std::size_t offset = channels;
        // Decode row-major multi-index for this token.
        std::vector<std::size_t> idx(d_axes);
        for (std::size_t a = d_axes; a-- > 0;) {
            idx[a] = rem % extents[a];
            rem /= extents[a];
        }
        for (std::size_t a = 0; a < d_axes; ++a) {
            const auto& enc = axis_enc[a][idx[a]];
            std::copy(enc.begin(), enc.end(), row + offset);
            offset += enc.size();
        }
    }

    TokenBatch batch;
    batch.tokens = Tensor::from_data({n_tokens, width}, std::move(tokens));
    batch.data_channels = channels;
    batch.axis_extents = std::move(extents);
    return batch;
}

std::size_t SegmentedTokens::real_count() const {
    std::size_t n = 0;
    for (bool b : mask) n += b ? 1 : 0;
    return n;
}

SegmentedTokens segment(const TokenBatch& batch, std::size_t num_segments) {
    const std::size_t n = batch.count();
    if (num_segments < 1 || num_segments > n) {
        throw config_error("segment: S=" + std::to_string(num_segments) +
                           " outside [1, N=" + std::to_string(n) + "]");
    }
    const std::size_t seg_len = (n + num_segments - 1) / num_segments;
    const std::size_t padded = num_segments * seg_len;
    const std::size_t width = batch.width();
    std::vector<double> tokens(padded * width, 0.0);
    std::copy(batch.tokens.values().begin(), batch.tokens.values().end(), tokens.begin());
    std::vector<bool> mask(padded, false);
    for (std::size_t i = 0; i < n; ++i) mask[i] = true;

    SegmentedTokens seg;
    seg.tokens = Tensor::from_data({padded, width}, std::move(tokens));
    seg.mask = std::move(mask);
    seg.num_segments = num_segments;
    seg.segment_len = seg_len;
    return seg;
}

Tensor unsegment(const SegmentedTokens& seg) {
    const std::size_t width = seg.tokens.extent(1);
    std::vector<double> out;
    for (std::size_t i = 0; i < seg.padded_count(); ++i) {
        if (!seg.mask[i]) continue;
        out.insert(out.end(), seg.tokens.values().begin() + i * width,
                   seg.tokens.values().begin() + (i + 1) * width);
    }
    const std::size_t n = out.size() / width;
    return Tensor::from_data({n, width}, std::move(out));
}

}  // namespace seglat
