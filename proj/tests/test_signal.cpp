#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "seglat/errors.hpp"
#include "seglat/rng.hpp"
#include "seglat/signal.hpp"

using namespace seglat;
namespace fs = std::filesystem;

namespace {

std::vector<double> sinusoid(std::size_t n, double freq_hz, double fs, double phase = 0.0) {
    std::vector<double> s(n);
    for (std::size_t t = 0; t < n; ++t) {
        s[t] = std::sin(2.0 * M_PI * freq_hz * static_cast<double>(t) / fs + phase);
    }
    return s;
}

std::string temp_dir(const std::string& tag) {
    auto p = fs::temp_directory_path() / ("seglat_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

StftConfig linear_cfg() {
    StftConfig cfg;
    cfg.log_scale = false;
    return cfg;
}

}  // namespace

TEST_CASE("psd of a pure sinusoid peaks at the nearest bin in every frame") {
    const double fs = 10.0;
    StftConfig cfg = linear_cfg();
    Tensor plane = compute_psd_spectrogram(sinusoid(512, 0.5, fs), fs, cfg);
    const std::size_t n_freq = plane.extent(0), n_frames = plane.extent(1);
    const std::size_t expect_bin =
        static_cast<std::size_t>(std::lround(0.5 / fs * static_cast<double>(cfg.window_len)));
    for (std::size_t t = 0; t < n_frames; ++t) {
        std::size_t argmax = 0;
        for (std::size_t f = 1; f < n_freq; ++f) {
            if (plane.values()[f * n_frames + t] > plane.values()[argmax * n_frames + t]) argmax = f;
        }
        CHECK(argmax == expect_bin);
    }
}

TEST_CASE("psd of silence is zero, or the log floor with log scaling") {
    std::vector<double> zero(256, 0.0);
    Tensor lin = compute_psd_spectrogram(zero, 10.0, linear_cfg());
    for (double v : lin.values()) CHECK(v == 0.0);
    StftConfig logged;
    logged.log_scale = true;
    Tensor lg = compute_psd_spectrogram(zero, 10.0, logged);
    for (double v : lg.values()) CHECK(v == doctest::Approx(-12.0));
}

TEST_CASE("psd satisfies Parseval per frame within 1 percent") {
    Rng rng(42);
    std::vector<double> x(300);
    for (double& v : x) v = rng.normal();
    const double fs = 10.0;
    StftConfig cfg = linear_cfg();
    Tensor plane = compute_psd_spectrogram(x, fs, cfg);
    const std::size_t n_freq = plane.extent(0), n_frames = plane.extent(1);
    // Hann taper replicated independently of the implementation
    std::vector<double> w(cfg.window_len);
    double wsum2 = 0.0;
    for (std::size_t n = 0; n < cfg.window_len; ++n) {
        w[n] = 0.5 * (1.0 - std::cos(2.0 * M_PI * n / double(cfg.window_len - 1)));
        wsum2 += w[n] * w[n];
    }
    const double df = fs / static_cast<double>(cfg.window_len);
    for (std::size_t t = 0; t < n_frames; ++t) {
        double spectral = 0.0;
        for (std::size_t f = 0; f < n_freq; ++f) spectral += plane.values()[f * n_frames + t] * df;
        double time_power = 0.0;  // windowed frame power
        for (std::size_t n = 0; n < cfg.window_len; ++n) {
            const double v = x[t * cfg.hop + n] * w[n];
            time_power += v * v;
        }
        time_power /= wsum2;
        CHECK(spectral == doctest::Approx(time_power).epsilon(0.01));
    }
}

TEST_CASE("psd is nonnegative before log scaling") {
    Rng rng(9);
    std::vector<double> x(200);
    for (double& v : x) v = rng.normal() + std::sin(0.3 * static_cast<double>(&v - x.data()));
    Tensor plane = compute_psd_spectrogram(x, 10.0, linear_cfg());
    for (double v : plane.values()) CHECK(v >= 0.0);
}

TEST_CASE("time shift by one hop advances psd frames by one column") {
    const double fs = 10.0;
    StftConfig cfg = linear_cfg();
    std::vector<double> x = sinusoid(512, 0.7, fs, 0.3);
    std::vector<double> shifted(x.begin() + cfg.hop, x.end());
    Tensor a = compute_psd_spectrogram(x, fs, cfg);
    Tensor b = compute_psd_spectrogram(shifted, fs, cfg);
    const std::size_t fa = a.extent(1), fb = b.extent(1);
    for (std::size_t f = 0; f < a.extent(0); ++f) {
        for (std::size_t t = 0; t + 1 < std::min(fa, fb + 1); ++t) {
            CHECK(std::abs(b.values()[f * fb + t] - a.values()[f * fa + t + 1]) < 1e-6);
        }
    }
}

TEST_CASE("stft config validation") {
    StftConfig cfg;
    cfg.window_len = 100;
    CHECK_THROWS_AS(compute_psd_spectrogram(std::vector<double>(50, 0.0), 10.0, cfg), data_error);
    cfg.window_len = 16;
    cfg.hop = 0;
    CHECK_THROWS_AS(compute_psd_spectrogram(std::vector<double>(50, 0.0), 10.0, cfg), config_error);
}

TEST_CASE("resize_bilinear preserves constants exactly and is idempotent at size") {
    Tensor c = Tensor::full({5, 7}, 3.25);
    Tensor up = resize_bilinear(c, 13, 11);
    for (double v : up.values()) CHECK(v == 3.25);

    Rng rng(4);
    std::vector<double> vals(5 * 7);
    for (double& v : vals) v = rng.normal();
    Tensor r = Tensor::from_data({5, 7}, std::move(vals));
    Tensor same = resize_bilinear(r, 5, 7);
    for (std::size_t i = 0; i < r.numel(); ++i) {
        CHECK(std::abs(same.values()[i] - r.values()[i]) < 1e-12);
    }
}

TEST_CASE("resize_bilinear hand interpolation and bounds") {
    Tensor p = Tensor::from_data({2, 2}, {0, 1, 0, 1});
    Tensor out = resize_bilinear(p, 2, 3);
    CHECK(out.values()[0] == 0.0);
    CHECK(out.values()[1] == doctest::Approx(0.5));
    CHECK(out.values()[2] == 1.0);
    CHECK(out.values()[4] == doctest::Approx(0.5));
    // values stay within the source range
    for (double v : out.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK_THROWS_AS(resize_bilinear(p, 0, 3), config_error);
}

TEST_CASE("build_waveform_input standardizes per channel") {
    Recording rec;
    rec.channels = {{7, 7, 7, 7}, {-1, 1, -1, 1}};
    Tensor x = build_waveform_input(rec);
    CHECK(x.shape() == Shape{4, 2});
    for (std::size_t t = 0; t < 4; ++t) CHECK(x.values()[t * 2] == 0.0);  // dead channel
    CHECK(x.values()[0 * 2 + 1] == doctest::Approx(-1.0));
    CHECK(x.values()[1 * 2 + 1] == doctest::Approx(1.0));
}

TEST_CASE("build_waveform_input preserves shape at scale") {
    Rng rng(88);
    Recording rec;
    rec.channels.assign(24, std::vector<double>(512));
    for (auto& ch : rec.channels)
        for (double& v : ch) v = rng.normal();
    Tensor x = build_waveform_input(rec);
    CHECK(x.shape() == Shape{512, 24});
}

TEST_CASE("build_psd_input stacks scaled planes") {
    Rng rng(13);
    Recording rec;
    rec.sample_rate_hz = 10.0;
    rec.channels.assign(2, std::vector<double>(256));
    for (double& v : rec.channels[0]) v = rng.normal();
    // channel 1 stays zero
    StftConfig cfg;
    Tensor x = build_psd_input(rec, cfg, 32, 32);
    CHECK(x.shape() == Shape{32, 32, 2});
    double lo = 1e9, hi = -1e9;
    for (std::size_t i = 0; i < 32 * 32; ++i) {
        lo = std::min(lo, x.values()[i * 2]);
        hi = std::max(hi, x.values()[i * 2]);
        CHECK(x.values()[i * 2 + 1] == 0.0);  // constant plane scales to zero
    }
    CHECK(lo == 0.0);
    CHECK(hi == 1.0);
}

TEST_CASE("build_psd_input default target is 224x224") {
    Rng rng(14);
    Recording rec;
    rec.sample_rate_hz = 10.0;
    rec.channels.assign(24, std::vector<double>(512));
    for (auto& ch : rec.channels)
        for (double& v : ch) v = rng.normal();
    Tensor x = build_psd_input(rec, StftConfig{});
    CHECK(x.shape() == Shape{224, 224, 24});
}

TEST_CASE("stack_fusion concatenates interpolated waveform planes first") {
    Rng rng(15);
    std::vector<double> wv(512 * 24);
    for (double& v : wv) v = rng.normal();
    Tensor wave = Tensor::from_data({512, 24}, std::move(wv));
    Tensor psd = Tensor::full({224, 224, 24}, 0.5);
    Tensor stacked = stack_fusion(wave, psd);
    CHECK(stacked.shape() == Shape{224, 224, 48});

    Tensor zero_wave = Tensor::zeros({512, 24});
    Tensor z = stack_fusion(zero_wave, psd);
    for (std::size_t i = 0; i < 224 * 224; ++i) {
        for (std::size_t c = 0; c < 24; ++c) CHECK(z.values()[i * 48 + c] == 0.0);
        for (std::size_t c = 24; c < 48; ++c) CHECK(z.values()[i * 48 + c] == 0.5);
    }
}

TEST_CASE("stack_fusion channel count is additive") {
    Tensor wave = Tensor::zeros({16, 3});
    Tensor psd = Tensor::zeros({8, 8, 5});
    CHECK(stack_fusion(wave, psd).extent(2) == 8);
}

TEST_CASE("tensor container round trips bit exactly") {
    const std::string dir = temp_dir("io");
    Rng rng(31);
    std::vector<double> v(3 * 4 * 5);
    for (double& x : v) x = rng.normal();
    Tensor t = Tensor::from_data({3, 4, 5}, v);
    const std::string path = dir + "/t.lsg";
    save_tensor(path, t);
    Tensor back = load_tensor(path);
    CHECK(back.shape() == t.shape());
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(back.values()[i] == v[i]);

    // scalar round trip
    save_tensor(dir + "/s.lsg", Tensor::scalar(-2.5));
    Tensor s = load_tensor(dir + "/s.lsg");
    CHECK(s.rank() == 0);
    CHECK(s.item() == -2.5);
}

TEST_CASE("tensor container rejects corruption") {
    const std::string dir = temp_dir("io_bad");
    save_tensor(dir + "/t.lsg", Tensor::full({4, 4}, 1.0));
    std::string bytes = slurp(dir + "/t.lsg");

    {
        std::ofstream os(dir + "/trunc.lsg", std::ios::binary);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_WITH_AS(load_tensor(dir + "/trunc.lsg"), doctest::Contains("truncated"),
                         format_error);

    bytes[0] = 'X';
    {
        std::ofstream os(dir + "/magic.lsg", std::ios::binary);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_WITH_AS(load_tensor(dir + "/magic.lsg"), doctest::Contains("magic"), format_error);
}

TEST_CASE("synthetic dataset counting and determinism") {
    SynthConfig cfg;
    cfg.n_per_class = 1;
    cfg.channels = 2;
    cfg.length = 64;
    cfg.seed = 5;
    const std::string d1 = temp_dir("synth1");
    const std::string d2 = temp_dir("synth2");
    DatasetManifest m1 = generate_synthetic_dataset(d1, cfg);
    DatasetManifest m2 = generate_synthetic_dataset(d2, cfg);
    CHECK(m1.entries.size() == 3);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(d1)) {
        if (e.path().extension() == ".lsg") ++files;
    }
    CHECK(files == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(slurp(m1.resolve(m1.entries[i])) == slurp(m2.resolve(m2.entries[i])));
    }
    CHECK(slurp(d1 + "/manifest.json") == slurp(d2 + "/manifest.json"));
}

TEST_CASE("synthetic class oscillation dominates the psd near its bin") {
    SynthConfig cfg;
    cfg.n_per_class = 10;
    cfg.channels = 4;
    cfg.length = 512;
    cfg.seed = 77;
    const std::string dir = temp_dir("synth_psd");
    DatasetManifest m = generate_synthetic_dataset(dir, cfg);
    StftConfig stft = linear_cfg();
    const double f1 = synthetic_class_freq_hz(1, cfg.sample_rate_hz);
    const std::size_t expect_bin = static_cast<std::size_t>(
        std::lround(f1 / cfg.sample_rate_hz * static_cast<double>(stft.window_len)));
    // class-1 recording: average over frames and channels, then argmax
    for (const auto& e : m.entries) {
        if (e.label != 1) continue;
        Recording rec = load_recording(m, e, cfg.sample_rate_hz);
        std::vector<double> avg;
        for (const auto& ch : rec.channels) {
            Tensor plane = compute_psd_spectrogram(ch, cfg.sample_rate_hz, stft);
            if (avg.empty()) avg.assign(plane.extent(0), 0.0);
            for (std::size_t f = 0; f < plane.extent(0); ++f) {
                for (std::size_t t = 0; t < plane.extent(1); ++t) {
                    avg[f] += plane.values()[f * plane.extent(1) + t];
                }
            }
        }
        std::size_t argmax = 0;
        for (std::size_t f = 1; f < avg.size(); ++f) {
            if (avg[f] > avg[argmax]) argmax = f;
        }
        CHECK(std::abs(static_cast<long>(argmax) - static_cast<long>(expect_bin)) <= 1);
        break;
    }
}

TEST_CASE("synthetic splits are subject disjoint and sized 70/15/15") {
    SynthConfig cfg;
    cfg.n_per_class = 20;
    cfg.channels = 1;
    cfg.length = 64;
    DatasetManifest m = generate_synthetic_dataset(temp_dir("splits"), cfg);
    std::set<std::string> train, val, test;
    for (const auto& e : m.entries) {
        if (e.split == "train") train.insert(e.subject);
        if (e.split == "val") val.insert(e.subject);
        if (e.split == "test") test.insert(e.subject);
    }
    CHECK(train.size() == 14);
    CHECK(val.size() == 3);
    CHECK(test.size() == 3);
    for (const auto& s : train) {
        CHECK(val.count(s) == 0);
        CHECK(test.count(s) == 0);
    }
    for (const auto& s : val) CHECK(test.count(s) == 0);
}

TEST_CASE("manifest save and load round trip") {
    const std::string dir = temp_dir("manifest");
    DatasetManifest m;
    m.dir = dir;
    m.entries.push_back({"a.lsg", 0, "S1", "train", ""});
    m.entries.push_back({"b.lsg", 2, "S2", "val", "psd"});
    save_manifest(dir + "/m.json", m);
    DatasetManifest back = load_manifest(dir + "/m.json");
    REQUIRE(back.entries.size() == 2);
    CHECK(back.entries[0].path == "a.lsg");
    CHECK(back.entries[1].label == 2);
    CHECK(back.entries[1].representation == "psd");
    CHECK(back.dir == dir);

    std::ofstream(dir + "/bad.json") << "{not json";
    CHECK_THROWS_AS(load_manifest(dir + "/bad.json"), format_error);
}
