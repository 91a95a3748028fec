// Command-line front end: dataset synthesis, preprocessing, training,
// evaluation, profiling, and the segment sweep.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "seglat/errors.hpp"
#include "seglat/model.hpp"
#include "seglat/profile.hpp"
#include "seglat/rng.hpp"
#include "seglat/signal.hpp"
#include "seglat/tensor.hpp"
#include "seglat/tokenizer.hpp"
#include "seglat/train.hpp"

namespace fs = std::filesystem;
using namespace seglat;

namespace {

std::uint64_t fnv1a_file(const std::string& path, std::uint64_t h) {
    std::ifstream is(path, std::ios::binary);
    char buf[4096];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
        for (std::streamsize i = 0; i < is.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
        if (!is) break;
    }
    return h;
}

struct CommonOpts {
    // model
    std::size_t depth = 4;
    std::size_t latent_dim = 128;
    std::size_t cross_heads = 1;
    std::size_t cross_head_dim = 64;
    std::size_t self_heads = 8;
    std::size_t self_head_dim = 64;
    std::size_t r_blocks = 8;
    std::size_t ffn_mult = 1;
    std::size_t num_latents = 32;
    std::string pooling = "mean";
    // tokenizer
    std::size_t bands = 64;
    double f_max = 0.0;
    // segmentation
    std::size_t segments = 32;
    std::uint64_t seed = 0;

    ModelConfig model_config(std::size_t n_classes = 3) const {
        ModelConfig cfg;
        cfg.depth = depth;
        cfg.latent_dim = latent_dim;
        cfg.cross_heads = cross_heads;
        cfg.cross_head_dim = cross_head_dim;
        cfg.self_heads = self_heads;
        cfg.self_head_dim = self_head_dim;
        cfg.self_blocks_per_cross = r_blocks;
        cfg.ffn_multiplier = ffn_mult;
        cfg.num_latents = num_latents;
        cfg.n_classes = n_classes;
        cfg.pooling = pooling == "last" ? Pooling::last : Pooling::mean;
        return cfg;
    }

    TokenizerConfig tokenizer_config() const {
        TokenizerConfig cfg;
        cfg.bands = bands;
        cfg.f_max = f_max;
        return cfg;
    }
};

void add_common_flags(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--depth", o.depth, "Transformer layers (L)");
    cmd->add_option("--latent-dim", o.latent_dim, "Latent dimension (d)");
    cmd->add_option("--cross-heads", o.cross_heads, "Cross-attention heads");
    cmd->add_option("--cross-head-dim", o.cross_head_dim, "Cross-attention head dim");
    cmd->add_option("--self-heads", o.self_heads, "Self-attention heads");
    cmd->add_option("--self-head-dim", o.self_head_dim, "Self-attention head dim");
    cmd->add_option("--r-blocks", o.r_blocks, "Self-attention blocks per cross (R)");
    cmd->add_option("--ffn-mult", o.ffn_mult, "Feedforward width multiplier");
    cmd->add_option("--num-latents", o.num_latents, "Latents (M) for the unsegmented baseline");
    cmd->add_option("--pooling", o.pooling, "Head pooling: mean|last")
        ->check(CLI::IsMember({"mean", "last"}));
    cmd->add_option("--bands", o.bands, "Fourier frequency bands per axis (K)");
    cmd->add_option("--f-max", o.f_max, "Maximum positional frequency (0 = axis extent)");
    cmd->add_option("--segments", o.segments, "Latent segments (S); 0 = unsegmented");
    cmd->add_option("--seed", o.seed, "Master RNG seed");
}

struct StftOpts {
    std::size_t window_len = 64;
    std::size_t hop = 16;
    std::string window = "hann";
    bool no_log = false;
    std::size_t target_h = 224;
    std::size_t target_w = 224;
    double sample_rate = 10.0;

    StftConfig stft() const {
        StftConfig cfg;
        cfg.window_len = window_len;
        cfg.hop = hop;
        cfg.window = window;
        cfg.log_scale = !no_log;
        return cfg;
    }
};

void add_stft_flags(CLI::App* cmd, StftOpts& o) {
    cmd->add_option("--window-len", o.window_len, "STFT window length (samples)");
    cmd->add_option("--hop", o.hop, "STFT hop (samples)");
    cmd->add_option("--window", o.window, "STFT taper: hann|rect")
        ->check(CLI::IsMember({"hann", "rect"}));
    cmd->add_flag("--no-log", o.no_log, "Disable log10 scaling of PSD planes");
    cmd->add_option("--target-h", o.target_h, "Spectrogram resize height");
    cmd->add_option("--target-w", o.target_w, "Spectrogram resize width");
    cmd->add_option("--sample-rate", o.sample_rate, "Sample rate in Hz");
}

// Loads one manifest entry as a model input tensor. Raw recordings fall back
// to the waveform representation.
Tensor load_input(const DatasetManifest& m, const ManifestEntry& e, double sample_rate) {
    if (e.representation.empty()) {
        return build_waveform_input(load_recording(m, e, sample_rate));
    }
    return load_tensor(m.resolve(e));
}

std::vector<PreparedSample> prepare_split(const DatasetManifest& m, const std::string& split,
                                          const TokenizerConfig& tok_cfg, std::size_t segments,
                                          double sample_rate) {
    std::vector<PreparedSample> out;
    for (const ManifestEntry* e : m.split(split)) {
        PreparedSample s;
        s.seg = segment(tokenize(load_input(m, *e, sample_rate), tok_cfg), segments);
        s.label = e->label;
        out.push_back(std::move(s));
    }
    return out;
}

// Deterministic standardized waveform-shaped input for profiling.
Tensor random_wave_input(std::size_t length, std::size_t channels, std::uint64_t seed) {
    Rng rng = Rng(seed).fork("profile_input");
    std::vector<double> v(length * channels);
    for (double& x : v) x = rng.normal();
    return Tensor::from_data({length, channels}, std::move(v));
}

int run(int argc, char** argv) {
    CLI::App app{"Segmented-latent transformer for multichannel physiological signals"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Key=value config file; command-line flags win");
    app.allow_config_extras(CLI::config_extras_mode::error);

    // --- synth ---
    auto* synth = app.add_subcommand("synth", "Generate the synthetic 3-class dataset");
    std::string synth_out;
    SynthConfig synth_cfg;
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--n-per-class", synth_cfg.n_per_class, "Trials per class");
    synth->add_option("--channels", synth_cfg.channels, "Signal channels");
    synth->add_option("--length", synth_cfg.length, "Samples per trial");
    synth->add_option("--sample-rate", synth_cfg.sample_rate_hz, "Sample rate in Hz");
    synth->add_option("--seed", synth_cfg.seed, "RNG seed");

    // --- preprocess ---
    auto* prep = app.add_subcommand("preprocess", "Build model input tensors from recordings");
    std::string prep_manifest, prep_out, prep_repr = "wave";
    StftOpts prep_stft;
    prep->add_option("--manifest", prep_manifest, "Input manifest")->required();
    prep->add_option("--out", prep_out, "Output directory")->required();
    prep->add_option("--representation", prep_repr, "wave|psd|stack")
        ->check(CLI::IsMember({"wave", "psd", "stack"}));
    add_stft_flags(prep, prep_stft);

    // --- train ---
    auto* tr = app.add_subcommand("train", "Train on a manifest");
    std::string tr_manifest, tr_out;
    CommonOpts tr_opts;
    tr_opts.segments = 32;
    TrainConfig tr_cfg;
    double tr_sample_rate = 10.0;
    tr->add_option("--manifest", tr_manifest, "Dataset manifest")->required();
    tr->add_option("--out", tr_out, "Output directory for history and checkpoints")->required();
    add_common_flags(tr, tr_opts);
    tr->add_option("--lr", tr_cfg.base_lr, "Base learning rate");
    tr->add_option("--weight-decay", tr_cfg.weight_decay, "AdamW weight decay");
    tr->add_option("--epochs", tr_cfg.epochs_total, "Total epochs");
    tr->add_option("--warmup", tr_cfg.epochs_warmup, "Warmup epochs");
    tr->add_option("--cooldown", tr_cfg.epochs_cooldown, "Cooldown epochs");
    tr->add_option("--batch-size", tr_cfg.batch_size, "Batch size");
    tr->add_option("--min-lr", tr_cfg.min_lr, "Cooldown plateau learning rate");
    tr->add_option("--sample-rate", tr_sample_rate, "Sample rate for raw recordings");

    // --- eval ---
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
    std::string ev_ckpt, ev_manifest, ev_split = "val";
    double ev_sample_rate = 10.0;
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
    ev->add_option("--manifest", ev_manifest, "Dataset manifest")->required();
    ev->add_option("--split", ev_split, "Split tag")->check(CLI::IsMember({"train", "val", "test"}));
    ev->add_option("--sample-rate", ev_sample_rate, "Sample rate for raw recordings");

    // --- profile ---
    auto* pr = app.add_subcommand("profile", "Cost report for one configuration");
    CommonOpts pr_opts;
    std::size_t pr_length = 512, pr_channels = 24, pr_warmup = 10, pr_iters = 100;
    bool pr_json = false;
    add_common_flags(pr, pr_opts);
    pr->add_option("--length", pr_length, "Waveform length for the profiled input");
    pr->add_option("--channels", pr_channels, "Channels for the profiled input");
    pr->add_option("--warmup", pr_warmup, "Warmup iterations");
    pr->add_option("--iters", pr_iters, "Timed iterations");
    pr->add_flag("--json", pr_json, "Emit JSON instead of the table");

    // --- sweep ---
    auto* sw = app.add_subcommand("sweep", "Cost report across segment settings");
    CommonOpts sw_opts;
    std::vector<std::size_t> sw_segments = {0, 2, 4, 8, 16, 32, 64};
    std::size_t sw_length = 512, sw_channels = 24, sw_warmup = 3, sw_iters = 20;
    std::string sw_csv;
    add_common_flags(sw, sw_opts);
    sw->add_option("--segment-list", sw_segments, "Segment settings; 0 = unsegmented");
    sw->add_option("--length", sw_length, "Waveform length for the profiled input");
    sw->add_option("--channels", sw_channels, "Channels for the profiled input");
    sw->add_option("--warmup", sw_warmup, "Warmup iterations");
    sw->add_option("--iters", sw_iters, "Timed iterations");
    sw->add_option("--csv", sw_csv, "Write the sweep as CSV to this path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // usage problems exit 2, --help exits 0
    }

    if (synth->parsed()) {
        if (synth_cfg.n_per_class == 0) throw config_error("synth: --n-per-class must be positive");
        DatasetManifest m = generate_synthetic_dataset(synth_out, synth_cfg);
        std::uint64_t h = 1469598103934665603ull;
        for (const auto& e : m.entries) h = fnv1a_file(m.resolve(e), h);
        std::cout << "manifest: " << (fs::path(synth_out) / "manifest.json").string() << "\n"
                  << "recordings: " << m.entries.size() << "\n"
                  << "checksum: " << std::hex << h << std::dec << "\n";
        return 0;
    }

    if (prep->parsed()) {
        DatasetManifest in = load_manifest(prep_manifest);
        bool already = !in.entries.empty() && !in.entries.front().representation.empty();
        if (already) {
            std::cout << "warning: manifest already carries representation '"
                      << in.entries.front().representation << "', nothing to do\n";
            return 0;
        }
        std::error_code ec;
        fs::create_directories(prep_out, ec);
        if (ec) throw io_error("preprocess: cannot create " + prep_out);
        DatasetManifest out;
        out.dir = prep_out;
        std::size_t failures = 0;
        for (const auto& e : in.entries) {
            try {
                Recording rec = load_recording(in, e, prep_stft.sample_rate);
                Tensor t;
                if (prep_repr == "wave") {
                    t = build_waveform_input(rec);
                } else if (prep_repr == "psd") {
                    t = build_psd_input(rec, prep_stft.stft(), prep_stft.target_h,
                                        prep_stft.target_w);
                } else {
                    t = stack_fusion(build_waveform_input(rec),
                                     build_psd_input(rec, prep_stft.stft(), prep_stft.target_h,
                                                     prep_stft.target_w));
                }
                std::string name = fs::path(e.path).stem().string() + "_" + prep_repr + ".lsg";
                save_tensor((fs::path(prep_out) / name).string(), t);
                ManifestEntry oe = e;
                oe.path = name;
                oe.representation = prep_repr;
                out.entries.push_back(std::move(oe));
                if (out.entries.size() == 1) {
                    std::cout << "representation: " << prep_repr << ", shape "
                              << shape_str(t.shape()) << "\n";
                }
            } catch (const std::exception& ex) {
                std::cerr << "error: " << e.path << ": " << ex.what() << "\n";
                ++failures;
            }
        }
        std::string out_manifest = (fs::path(prep_out) / "manifest.json").string();
        save_manifest(out_manifest, out);
        std::cout << "manifest: " << out_manifest << "\n";
        return failures ? 1 : 0;
    }

    if (tr->parsed()) {
        if (tr_opts.segments == 0) throw config_error("train: --segments must be at least 1");
        DatasetManifest m = load_manifest(tr_manifest);
        TokenizerConfig tok_cfg = tr_opts.tokenizer_config();
        tr_cfg.seed = tr_opts.seed;
        auto train_set = prepare_split(m, "train", tok_cfg, tr_opts.segments, tr_sample_rate);
        auto val_set = prepare_split(m, "val", tok_cfg, tr_opts.segments, tr_sample_rate);
        if (train_set.empty() || val_set.empty()) {
            throw config_error("train: manifest lacks a train or val split");
        }
        std::error_code ec;
        fs::create_directories(tr_out, ec);
        if (ec) throw io_error("train: cannot create " + tr_out);

        const std::size_t width = train_set.front().seg.tokens.extent(1);
        ModelParams params = init_model(tr_opts.model_config(), width, tr_opts.seed);
        std::cout << "tokens: " << train_set.front().seg.real_count() << " x " << width
                  << ", segments: " << tr_opts.segments << "\n"
                  << "lr schedule: " << lr_at_epoch(tr_cfg, 0) << " -> peak " << tr_cfg.base_lr
                  << " -> " << tr_cfg.min_lr << "\n";
        TrainResult result = train(params, train_set, val_set, tr_cfg,
                                   (fs::path(tr_out) / "history.jsonl").string());
        save_checkpoint((fs::path(tr_out) / "checkpoint_final.ckpt").string(), params, tok_cfg,
                        tr_opts.segments);
        // Restore the best-val-macro-F1 snapshot and persist it alongside.
        auto named = params.named_parameters();
        for (std::size_t i = 0; i < named.size(); ++i) {
            named[i].second.mutable_values() = result.best_param_values[i];
        }
        save_checkpoint((fs::path(tr_out) / "checkpoint_best.ckpt").string(), params, tok_cfg,
                        tr_opts.segments);
        const EpochRecord& last = result.history.back();
        std::cout << "final epoch " << last.epoch << ": train_loss " << last.train_loss
                  << ", val balanced_accuracy " << last.val.macro_recall << ", val macro_f1 "
                  << last.val.macro_f1 << "\n"
                  << "best epoch " << result.best_epoch << " (macro_f1 "
                  << result.best_val_macro_f1 << ")\n";
        return 0;
    }

    if (ev->parsed()) {
        Checkpoint ck = load_checkpoint(ev_ckpt);
        DatasetManifest m = load_manifest(ev_manifest);
        auto samples = prepare_split(m, ev_split, ck.tok_cfg, ck.num_segments, ev_sample_rate);
        if (samples.empty()) throw config_error("eval: split '" + ev_split + "' is empty");
        Metrics metrics = evaluate(ck.params, samples);
        std::cout << metrics_to_json(metrics) << "\n";
        return 0;
    }

    auto profile_one = [](const CommonOpts& o, std::size_t length, std::size_t channels,
                          std::size_t segments, std::size_t warmup, std::size_t iters) {
        TokenBatch batch = tokenize(random_wave_input(length, channels, o.seed),
                                    o.tokenizer_config());
        ModelParams params = init_model(o.model_config(), batch.width(), o.seed);
        BenchmarkConfig bench{warmup, iters};
        if (segments == 0) {
            // Unsegmented: profile via an S=1 segmentation for latency of the
            // M-latent path, analytic columns use the unsegmented formula.
            CostReport r;
            r.input_desc = "wave(" + std::to_string(length) + "x" + std::to_string(channels) + ")";
            r.num_segments = 0;
            r.token_count = batch.count();
            r.token_width = batch.width();
            r.param_count = count_params(params.cfg, batch.width());
            r.params_millions = static_cast<double>(r.param_count) / 1e6;
            r.gflops =
                static_cast<double>(estimate_flops(params.cfg, 0, batch.count(), batch.width())) /
                1e9;
            using clock = std::chrono::steady_clock;
            for (std::size_t i = 0; i < warmup; ++i) forward_unsegmented(params, batch);
            std::vector<double> times(iters);
            for (std::size_t i = 0; i < iters; ++i) {
                auto t0 = clock::now();
                forward_unsegmented(params, batch);
                auto t1 = clock::now();
                times[i] = std::chrono::duration<double, std::milli>(t1 - t0).count();
            }
            std::sort(times.begin(), times.end());
            double mean = 0;
            for (double t : times) mean += t;
            mean /= static_cast<double>(times.size());
            r.latency_mean_ms = mean;
            r.latency_p50_ms = times[(times.size() - 1) / 2];
            r.latency_p95_ms = times[std::min(times.size() - 1,
                                              static_cast<std::size_t>(0.95 * (times.size() - 1)))];
            r.samples_per_second = mean > 0 ? 1000.0 / mean : 0.0;
            return r;
        }
        SegmentedTokens seg = segment(batch, segments);
        return profile_config(params, seg,
                              "wave(" + std::to_string(length) + "x" + std::to_string(channels) +
                                  ")",
                              bench);
    };

    if (pr->parsed()) {
        CostReport r = profile_one(pr_opts, pr_length, pr_channels, pr_opts.segments, pr_warmup,
                                   pr_iters);
        if (pr_json) {
            std::cout << cost_report_json(r) << "\n";
        } else {
            std::cout << cost_report_table({r});
        }
        return 0;
    }

    if (sw->parsed()) {
        std::vector<CostReport> rows;
        for (std::size_t s : sw_segments) {
            rows.push_back(profile_one(sw_opts, sw_length, sw_channels, s, sw_warmup, sw_iters));
        }
        std::cout << cost_report_table(rows);
        if (!sw_csv.empty()) {
            std::ofstream os(sw_csv, std::ios::binary);
            if (!os) throw io_error("sweep: cannot open " + sw_csv);
            os << cost_report_csv(rows);
            std::cout << "csv: " << sw_csv << "\n";
        }
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const usage_error& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const format_error& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
