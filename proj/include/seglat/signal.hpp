#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seglat/tensor.hpp"

namespace seglat {

// One trial: C channels x L samples.
struct Recording {
    std::vector<std::vector<double>> channels;
    double sample_rate_hz = 10.0;
    std::size_t label = 0;  // {0,1,2}
    std::string subject_id;

    std::size_t num_channels() const { return channels.size(); }
    std::size_t length() const { return channels.empty() ? 0 : channels[0].size(); }
};

struct StftConfig {
    std::size_t window_len = 64;
    std::size_t hop = 16;
    std::string window = "hann";  // or "rect"
    bool log_scale = true;

    void validate(std::size_t series_len) const;
};

struct SpectrogramSet {
    std::vector<Tensor> planes;  // one (H x W) plane per channel
    std::vector<double> freq_axis_hz;
    std::vector<double> time_axis_s;
};

struct ManifestEntry {
    std::string path;
    std::size_t label = 0;
    std::string subject;
    std::string split;           // train | val | test
    std::string representation;  // empty for raw recordings
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::string dir;  // directory entries' relative paths resolve against

    std::string resolve(const ManifestEntry& e) const;
    std::vector<const ManifestEntry*> split(const std::string& tag) const;
};

// Power spectral density over short overlapping frames.
// Output is (window_len/2 + 1) frequency rows by frame-count columns,
// scaled by 1/(fs * sum w^2) with one-sided doubling.
Tensor compute_psd_spectrogram(const std::vector<double>& series, double sample_rate_hz,
                               const StftConfig& cfg);

std::vector<double> psd_freq_axis(double sample_rate_hz, const StftConfig& cfg);
std::vector<double> psd_time_axis(std::size_t series_len, double sample_rate_hz,
                                  const StftConfig& cfg);

// Corner-aligned bilinear resampling of a 2D plane.
Tensor resize_bilinear(const Tensor& plane, std::size_t target_h, std::size_t target_w);

// (L x C), per-channel z-scored; constant channels map to zeros.
Tensor build_waveform_input(const Recording& rec);

// (H x W x C): per channel PSD -> resize -> per-plane min-max to [0,1].
Tensor build_psd_input(const Recording& rec, const StftConfig& cfg, std::size_t target_h = 224,
                       std::size_t target_w = 224);

// Interpolates each waveform channel to an H x W tile and concatenates the
// tiles ahead of the PSD planes along the channel axis.
Tensor stack_fusion(const Tensor& wave, const Tensor& psd);

// Tensor container: "LSG1", u8 rank, rank x u32 LE extents, f64 LE row-major.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

void save_manifest(const std::string& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::string& path);

struct SynthConfig {
    std::size_t n_per_class = 100;
    std::size_t channels = 24;
    std::size_t length = 512;
    double sample_rate_hz = 10.0;
    std::uint64_t seed = 0;
};

// Three synthetic classes separated by a narrowband oscillation at
// f_k = 0.1 * (k+1) * nyquist/2, over 1/f-like noise at 6 dB SNR.
// Subject-disjoint 70/15/15 splits; byte-deterministic per seed.
DatasetManifest generate_synthetic_dataset(const std::string& out_dir, const SynthConfig& cfg);

double synthetic_class_freq_hz(std::size_t klass, double sample_rate_hz);

Recording load_recording(const DatasetManifest& m, const ManifestEntry& e, double sample_rate_hz);

}  // namespace seglat
