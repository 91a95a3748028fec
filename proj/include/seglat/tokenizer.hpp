#pragma once

#include <cstddef>
#include <vector>

#include "seglat/tensor.hpp"

namespace seglat {

struct TokenizerConfig {
    std::size_t bands = 64;     // K, frequency bands per axis
    double f_max = 0.0;         // 0 = default to the axis extent, per axis

    void validate() const;
    // Effective maximum frequency for an axis of the given extent.
    double f_max_for(std::size_t extent) const;
};

// Flattened token matrix T (N x C'), C' = C + D(2K+1).
struct TokenBatch {
    Tensor tokens;
    std::size_t data_channels = 0;
    std::vector<std::size_t> axis_extents;

    std::size_t count() const { return tokens.extent(0); }
    std::size_t width() const { return tokens.extent(1); }
};

// Segment-reshaped token matrix: S segments of n_s rows, zero-padded to
// S*n_s with mask false on pads.
struct SegmentedTokens {
    Tensor tokens;                // (S*n_s) x C'
    std::vector<bool> mask;       // length S*n_s, true = real token
    std::size_t num_segments = 0;
    std::size_t segment_len = 0;  // n_s

    std::size_t padded_count() const { return num_segments * segment_len; }
    std::size_t real_count() const;
};

// Fourier positional features for p in [-1,1]^D: per axis K sines, K
// cosines, then the raw coordinate; axes concatenated.
std::vector<double> fourier_position_encoding(const std::vector<double>& p, std::size_t bands,
                                              double f_max);

// Linearly spaced frequency bands over [1, f_max/2]; K=1 collapses to {1}.
std::vector<double> frequency_bands(std::size_t bands, double f_max);

TokenBatch tokenize(const Tensor& input, const TokenizerConfig& cfg);

SegmentedTokens segment(const TokenBatch& batch, std::size_t num_segments);

// Drops the padding; inverse of segment up to the reshape.
Tensor unsegment(const SegmentedTokens& seg);

}  // namespace seglat
