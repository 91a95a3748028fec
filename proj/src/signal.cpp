#include "seglat/signal.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "seglat/errors.hpp"
#include "seglat/rng.hpp"

namespace fs = std::filesystem;

namespace seglat {

namespace {

std::vector<double> make_window(const StftConfig& cfg) {
    std::vector<double> w(cfg.window_len, 1.0);
    if (cfg.window == "hann") {
        for (std::size_t n = 0; n < cfg.window_len; ++n) {
            w[n] = 0.5 * (1.0 - std::cos(2.0 * M_PI * static_cast<double>(n) /
                                         static_cast<double>(cfg.window_len - 1)));
        }
    } else if (cfg.window != "rect") {
        throw config_error("stft: unknown window '" + cfg.window + "'");
    }
    return w;
}

// 1/f-like noise, Paul Kellet pink filter over white gaussian input.
std::vector<double> pink_noise(std::size_t n, Rng& rng) {
    std::vector<double> out(n);
    double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double white = rng.normal();
        b0 = 0.99886 * b0 + white * 0.0555179;
        b1 = 0.99332 * b1 + white * 0.0750759;
        b2 = 0.96900 * b2 + white * 0.1538520;
        b3 = 0.86650 * b3 + white * 0.3104856;
        b4 = 0.55000 * b4 + white * 0.5329522;
        b5 = -0.7616 * b5 - white * 0.0168980;
        out[i] = (b0 + b1 + b2 + b3 + b4 + b5 + b6 + white * 0.5362) * 0.11;
        b6 = white * 0.115926;
    }
    return out;
}

void write_u32_le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32_le(std::istream& is, const char* field) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw format_error(std::string("tensor file truncated while reading ") + field);
    }
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void StftConfig::validate(std::size_t series_len) const {
    if (hop == 0 || hop > window_len) {
        throw config_error("stft: require 0 < hop <= window_len");
    }
    if (window_len < 2) throw config_error("stft: window_len must be at least 2");
    if (window_len > series_len) {
        throw data_error("stft: window_len " + std::to_string(window_len) + " exceeds series length " +
                         std::to_string(series_len));
    }
}

Tensor compute_psd_spectrogram(const std::vector<double>& series, double sample_rate_hz,
                               const StftConfig& cfg) {
    cfg.validate(series.size());
    if (sample_rate_hz <= 0.0) throw config_error("stft: sample rate must be positive");
    const std::size_t win = cfg.window_len;
    const std::size_t n_freq = win / 2 + 1;
    const std::size_t n_frames = (series.size() - win) / cfg.hop + 1;
    const std::vector<double> w = make_window(cfg);
    double wsum2 = 0.0;
    for (double v : w) wsum2 += v * v;
    const double norm = 1.0 / (sample_rate_hz * wsum2);

    std::vector<double> plane(n_freq * n_frames, 0.0);
    std::vector<double> frame(win);
    for (std::size_t t = 0; t < n_frames; ++t) {
        for (std::size_t n = 0; n < win; ++n) frame[n] = series[t * cfg.hop + n] * w[n];
        for (std::size_t f = 0; f < n_freq; ++f) {
            double re = 0.0, im = 0.0;
            for (std::size_t n = 0; n < win; ++n) {
                const double ang = -2.0 * M_PI * static_cast<double>(f) * static_cast<double>(n) /
                                   static_cast<double>(win);
                re += frame[n] * std::cos(ang);
                im += frame[n] * std::sin(ang);
            }
            double p = (re * re + im * im) * norm;
            // One-sided: double every bin with a distinct conjugate partner.
            if (f != 0 && 2 * f != win) p *= 2.0;
            plane[f * n_frames + t] = p;
        }
    }
    if (cfg.log_scale) {
        for (double& p : plane) p = std::log10(p + 1e-12);
    }
    return Tensor::from_data({n_freq, n_frames}, std::move(plane));
}

std::vector<double> psd_freq_axis(double sample_rate_hz, const StftConfig& cfg) {
    const std::size_t n_freq = cfg.window_len / 2 + 1;
    std::vector<double> f(n_freq);
    for (std::size_t i = 0; i < n_freq; ++i) {
        f[i] = sample_rate_hz * static_cast<double>(i) / static_cast<double>(cfg.window_len);
    }
    return f;
}

std::vector<double> psd_time_axis(std::size_t series_len, double sample_rate_hz,
                                  const StftConfig& cfg) {
    const std::size_t n_frames = (series_len - cfg.window_len) / cfg.hop + 1;
    std::vector<double> t(n_frames);
    for (std::size_t i = 0; i < n_frames; ++i) {
        t[i] = (static_cast<double>(i * cfg.hop) + static_cast<double>(cfg.window_len) / 2.0) /
               sample_rate_hz;
    }
    return t;
}

Tensor resize_bilinear(const Tensor& plane, std::size_t target_h, std::size_t target_w) {
    if (plane.rank() != 2) throw shape_error("resize_bilinear: expected 2D plane");
    if (target_h == 0 || target_w == 0) {
        throw config_error("resize_bilinear: target extents must be positive");
    }
    const std::size_t sh = plane.extent(0), sw = plane.extent(1);
    std::vector<double> out(target_h * target_w);
    const double* src = plane.values().data();
    for (std::size_t y = 0; y < target_h; ++y) {
        const double fy = (target_h == 1 || sh == 1)
                              ? 0.0
                              : static_cast<double>(y) * static_cast<double>(sh - 1) /
                                    static_cast<double>(target_h - 1);
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, sh - 1);
        const double dy = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < target_w; ++x) {
            const double fx = (target_w == 1 || sw == 1)
                                  ? 0.0
                                  : static_cast<double>(x) * static_cast<double>(sw - 1) /
                                        static_cast<double>(target_w - 1);
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, sw - 1);
            const double dx = fx - static_cast<double>(x0);
            const double top = src[y0 * sw + x0] * (1.0 - dx) + src[y0 * sw + x1] * dx;
            const double bot = src[y1 * sw + x0] * (1.0 - dx) + src[y1 * sw + x1] * dx;
            out[y * target_w + x] = top * (1.0 - dy) + bot * dy;
        }
    }
    return Tensor::from_data({target_h, target_w}, std::move(out));
}

Tensor build_waveform_input(const Recording& rec) {
    const std::size_t c_count = rec.num_channels();
    const std::size_t len = rec.length();
    if (c_count == 0 || len == 0) throw data_error("build_waveform_input: empty recording");
    std::vector<double> out(len * c_count);
    for (std::size_t c = 0; c < c_count; ++c) {
        const auto& ch = rec.channels[c];
        if (ch.size() != len) throw data_error("build_waveform_input: ragged channels");
        double mean = 0.0;
        for (double v : ch) mean += v;
        mean /= static_cast<double>(len);
        double var = 0.0;
        for (double v : ch) var += (v - mean) * (v - mean);
        var /= static_cast<double>(len);
        if (var <= 0.0) {
            for (std::size_t t = 0; t < len; ++t) out[t * c_count + c] = 0.0;
        } else {
            const double inv = 1.0 / std::sqrt(var);
            for (std::size_t t = 0; t < len; ++t) out[t * c_count + c] = (ch[t] - mean) * inv;
        }
    }
    return Tensor::from_data({len, c_count}, std::move(out));
}

Tensor build_psd_input(const Recording& rec, const StftConfig& cfg, std::size_t target_h,
                       std::size_t target_w) {
    if (rec.length() < 2 * cfg.window_len) {
        throw data_error("build_psd_input: recording length " + std::to_string(rec.length()) +
                         " below 2x window_len " + std::to_string(cfg.window_len));
    }
    const std::size_t c_count = rec.num_channels();
    std::vector<double> out(target_h * target_w * c_count);
    for (std::size_t c = 0; c < c_count; ++c) {
        Tensor plane = compute_psd_spectrogram(rec.channels[c], rec.sample_rate_hz, cfg);
        Tensor resized = resize_bilinear(plane, target_h, target_w);
        const auto& v = resized.values();
        double lo = v[0], hi = v[0];
        for (double x : v) {
            lo = std::min(lo, x);
            hi = std::max(hi, x);
        }
        const double span = hi - lo;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double scaled = span > 0.0 ? (v[i] - lo) / span : 0.0;
            out[i * c_count + c] = scaled;
        }
    }
    return Tensor::from_data({target_h, target_w, c_count}, std::move(out));
}

Tensor stack_fusion(const Tensor& wave, const Tensor& psd) {
    if (wave.rank() != 2) throw shape_error("stack_fusion: waveform input must be (L x C)");
    if (psd.rank() != 3) throw shape_error("stack_fusion: PSD input must be (H x W x C)");
    const std::size_t len = wave.extent(0), c_wave = wave.extent(1);
    const std::size_t h = psd.extent(0), w = psd.extent(1), c_psd = psd.extent(2);
    const std::size_t c_out = c_wave + c_psd;
    std::vector<double> out(h * w * c_out);
    // Each waveform channel: resample its length-L series to width W, then
    // replicate the row down all H rows of the tile.
    for (std::size_t c = 0; c < c_wave; ++c) {
        std::vector<double> series(len);
        for (std::size_t t = 0; t < len; ++t) series[t] = wave.values()[t * c_wave + c];
        Tensor row = resize_bilinear(Tensor::from_data({1, len}, std::move(series)), 1, w);
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                out[(y * w + x) * c_out + c] = row.values()[x];
            }
        }
    }
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < c_psd; ++c) {
                out[(y * w + x) * c_out + c_wave + c] = psd.values()[(y * w + x) * c_psd + c];
            }
        }
    }
    return Tensor::from_data({h, w, c_out}, std::move(out));
}

void save_tensor(const std::string& path, const Tensor& t) {
    if (t.rank() > 8) throw format_error("save_tensor: rank " + std::to_string(t.rank()) + " > 8");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("save_tensor: cannot open " + path);
    os.write("LSG1", 4);
    const unsigned char rank = static_cast<unsigned char>(t.rank());
    os.write(reinterpret_cast<const char*>(&rank), 1);
    for (std::size_t e : t.shape()) write_u32_le(os, static_cast<std::uint32_t>(e));
    static_assert(sizeof(double) == 8);
    os.write(reinterpret_cast<const char*>(t.values().data()),
             static_cast<std::streamsize>(t.numel() * 8));
    if (!os) throw io_error("save_tensor: write failed for " + path);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("load_tensor: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "LSG1", 4) != 0) {
        throw format_error("load_tensor: bad magic in " + path);
    }
    unsigned char rank = 0;
    if (!is.read(reinterpret_cast<char*>(&rank), 1)) {
        throw format_error("load_tensor: truncated at rank field in " + path);
    }
    if (rank > 8) throw format_error("load_tensor: rank field " + std::to_string(rank) + " > 8");
    Shape shape(rank);
    for (std::size_t i = 0; i < rank; ++i) shape[i] = read_u32_le(is, "extent");
    std::vector<double> data(shape_numel(shape));
    if (!is.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * 8))) {
        throw format_error("load_tensor: truncated data section in " + path);
    }
    return Tensor::from_data(std::move(shape), std::move(data));
}

std::string DatasetManifest::resolve(const ManifestEntry& e) const {
    fs::path p(e.path);
    if (p.is_absolute() || dir.empty()) return e.path;
    return (fs::path(dir) / p).string();
}

std::vector<const ManifestEntry*> DatasetManifest::split(const std::string& tag) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
        if (e.split == tag) out.push_back(&e);
    return out;
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& e : manifest.entries) {
        nlohmann::ordered_json row = {
            {"path", e.path}, {"label", e.label}, {"subject", e.subject}, {"split", e.split}};
        if (!e.representation.empty()) row["representation"] = e.representation;
        arr.push_back(row);
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("save_manifest: cannot open " + path);
    os << arr.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("load_manifest: cannot open " + path);
    nlohmann::json arr;
    try {
        is >> arr;
    } catch (const nlohmann::json::exception& e) {
        throw format_error("load_manifest: invalid JSON in " + path + ": " + e.what());
    }
    if (!arr.is_array()) throw format_error("load_manifest: expected a JSON array in " + path);
    DatasetManifest m;
    m.dir = fs::path(path).parent_path().string();
    for (const auto& row : arr) {
        ManifestEntry e;
        try {
            e.path = row.at("path").get<std::string>();
            e.label = row.at("label").get<std::size_t>();
            e.subject = row.at("subject").get<std::string>();
            e.split = row.at("split").get<std::string>();
        } catch (const nlohmann::json::exception& ex) {
            throw format_error("load_manifest: malformed entry in " + path + ": " + ex.what());
        }
        if (row.contains("representation")) e.representation = row["representation"].get<std::string>();
        if (e.label > 2) throw format_error("load_manifest: label out of range in " + path);
        m.entries.push_back(std::move(e));
    }
    return m;
}

double synthetic_class_freq_hz(std::size_t klass, double sample_rate_hz) {
    const double nyquist = sample_rate_hz / 2.0;
    return 0.1 * static_cast<double>(klass + 1) * nyquist / 2.0;
}

DatasetManifest generate_synthetic_dataset(const std::string& out_dir, const SynthConfig& cfg) {
    if (cfg.n_per_class == 0 || cfg.channels == 0 || cfg.length == 0) {
        throw config_error("generate_synthetic_dataset: counts must be positive");
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw io_error("generate_synthetic_dataset: cannot create " + out_dir);

    const double snr = std::pow(10.0, 6.0 / 10.0);
    Rng root(cfg.seed);
    Rng data_rng = root.fork("data");

    DatasetManifest m;
    m.dir = out_dir;
    // Subject i owns one trial of each class; splits are disjoint by subject.
    const std::size_t n_train = cfg.n_per_class * 70 / 100;
    const std::size_t n_val = cfg.n_per_class * 15 / 100;
    for (std::size_t k = 0; k < 3; ++k) {
        const double f_hz = synthetic_class_freq_hz(k, cfg.sample_rate_hz);
        for (std::size_t i = 0; i < cfg.n_per_class; ++i) {
            Rng trial = data_rng.fork("trial_" + std::to_string(k) + "_" + std::to_string(i));
            std::vector<double> flat(cfg.channels * cfg.length);
            for (std::size_t c = 0; c < cfg.channels; ++c) {
                Rng ch = trial.fork("ch_" + std::to_string(c));
                std::vector<double> noise = pink_noise(cfg.length, ch);
                double p_noise = 0.0;
                for (double v : noise) p_noise += v * v;
                p_noise /= static_cast<double>(cfg.length);
                const double amp = std::sqrt(2.0 * snr * std::max(p_noise, 1e-30));
                const double phase = ch.uniform(0.0, 2.0 * M_PI);
                for (std::size_t t = 0; t < cfg.length; ++t) {
                    flat[c * cfg.length + t] =
                        amp * std::sin(2.0 * M_PI * f_hz * static_cast<double>(t) /
                                           cfg.sample_rate_hz +
                                       phase) +
                        noise[t];
                }
            }
            char name[64];
            std::snprintf(name, sizeof(name), "rec_c%zu_s%04zu.lsg", k, i);
            save_tensor((fs::path(out_dir) / name).string(),
                        Tensor::from_data({cfg.channels, cfg.length}, std::move(flat)));
            ManifestEntry e;
            e.path = name;
            e.label = k;
            char subj[32];
            std::snprintf(subj, sizeof(subj), "S%04zu", i);
            e.subject = subj;
            e.split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
            m.entries.push_back(std::move(e));
        }
    }
    save_manifest((fs::path(out_dir) / "manifest.json").string(), m);
    return m;
}

Recording load_recording(const DatasetManifest& m, const ManifestEntry& e, double sample_rate_hz) {
    Tensor t = load_tensor(m.resolve(e));
    if (t.rank() != 2) throw data_error("load_recording: expected (C x L) tensor at " + e.path);
    Recording rec;
    rec.sample_rate_hz = sample_rate_hz;
    rec.label = e.label;
    rec.subject_id = e.subject;
    const std::size_t c_count = t.extent(0), len = t.extent(1);
    rec.channels.resize(c_count);
    for (std::size_t c = 0; c < c_count; ++c) {
        rec.channels[c].assign(t.values().begin() + c * len, t.values().begin() + (c + 1) * len);
    }
    return rec;
}

}  // namespace seglat
