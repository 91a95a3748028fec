#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "seglat/errors.hpp"
#include "seglat/rng.hpp"
#include "seglat/train.hpp"

using namespace seglat;

namespace {

ModelConfig toy_model_config() {
    ModelConfig cfg;
    cfg.depth = 1;
    cfg.latent_dim = 8;
    cfg.cross_heads = 1;
    cfg.cross_head_dim = 4;
    cfg.self_heads = 2;
    cfg.self_head_dim = 4;
    cfg.self_blocks_per_cross = 1;
    cfg.num_latents = 2;
    return cfg;
}

std::vector<PreparedSample> toy_samples(std::size_t count, std::size_t bands, uint64_t seed) {
    TokenizerConfig tok;
    tok.bands = bands;
    Rng rng(seed);
    std::vector<PreparedSample> out;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t label = i % 3;
        std::vector<double> vals(16 * 2);
        for (double& v : vals) v = rng.normal() + static_cast<double>(label);
        TokenBatch batch = tokenize(Tensor::from_data({16, 2}, std::move(vals)), tok);
        out.push_back({segment(batch, 4), label});
    }
    return out;
}

}  // namespace

TEST_CASE("learning rate schedule hits the documented anchor points") {
    TrainConfig cfg;  // defaults: 200 total, 20 warmup, 10 cooldown, 2e-5 base
    CHECK(lr_at_epoch(cfg, 0) == doctest::Approx(2e-5 / 20.0).epsilon(1e-12));
    CHECK(lr_at_epoch(cfg, 19) == 2e-5);
    CHECK(lr_at_epoch(cfg, 20) == 2e-5);  // cosine starts at the base rate
    // halfway through the cosine span: epochs 20..190, midpoint 105
    const double mid = 1e-6 + (2e-5 - 1e-6) * 0.5;
    CHECK(lr_at_epoch(cfg, 105) == doctest::Approx(mid).epsilon(1e-12));
    CHECK(lr_at_epoch(cfg, 190) == doctest::Approx(1e-6).epsilon(1e-12));
    for (std::size_t e = 190; e < 200; ++e) CHECK(lr_at_epoch(cfg, e) == 1e-6);
    CHECK_THROWS_AS(lr_at_epoch(cfg, 200), usage_error);
}

TEST_CASE("learning rate schedule is continuous at the phase boundaries") {
    TrainConfig cfg;
    cfg.base_lr = 3e-4;
    cfg.min_lr = 2e-6;
    cfg.epochs_total = 60;
    cfg.epochs_warmup = 12;
    cfg.epochs_cooldown = 6;
    // warmup ends exactly at base_lr, cosine begins exactly at base_lr
    CHECK(std::abs(lr_at_epoch(cfg, 11) - cfg.base_lr) < 1e-15);
    CHECK(std::abs(lr_at_epoch(cfg, 12) - cfg.base_lr) < 1e-15);
    // cosine reaches min_lr exactly where the plateau starts
    CHECK(std::abs(lr_at_epoch(cfg, 54) - cfg.min_lr) < 1e-15);
    // monotone decay after warmup
    for (std::size_t e = 12; e + 1 < 60; ++e) CHECK(lr_at_epoch(cfg, e + 1) <= lr_at_epoch(cfg, e));
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.epochs_warmup = 150;
    cfg.epochs_cooldown = 60;  // warmup + cooldown exceeds total
    CHECK_THROWS_AS(cfg.validate(), config_error);
    cfg = TrainConfig{};
    cfg.base_lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), config_error);
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), config_error);
}

TEST_CASE("weight decay exclusions") {
    Tensor mat = Tensor::zeros({4, 4}, true);
    Tensor vec = Tensor::zeros({4}, true);
    CHECK_FALSE(decay_excluded("layer0.cross.wq", mat));
    CHECK(decay_excluded("layer0.cross.norm_q_gain", vec));
    CHECK(decay_excluded("head.b", vec));
    CHECK(decay_excluded("latent_seed", Tensor::zeros({1, 8}, true)));
}

TEST_CASE("adamw with zero gradients applies pure decoupled decay") {
    Tensor w = Tensor::full({2, 2}, 1.0, true);
    Tensor v = Tensor::full({2}, 1.0, true);
    w.zero_grad();
    v.zero_grad();
    std::vector<std::pair<std::string, Tensor>> params{{"w", w}, {"norm.gain", v}};
    OptState state;
    TrainConfig cfg;
    cfg.weight_decay = 0.5;
    adamw_step(params, state, 0.01, cfg);
    for (double x : w.values()) CHECK(x == doctest::Approx(1.0 - 0.01 * 0.5).epsilon(1e-14));
    for (double x : v.values()) CHECK(x == 1.0);  // excluded from decay
}

TEST_CASE("adamw first step moves against the gradient by roughly lr") {
    Tensor w = Tensor::from_data({2}, {1.0, -1.0}, true);
    w.zero_grad();
    w.node()->grad = {0.3, -0.7};
    std::vector<std::pair<std::string, Tensor>> params{{"norm.gain", w}};
    OptState state;
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    adamw_step(params, state, 0.01, cfg);
    // bias-corrected first step: lr * g / (|g| + eps) ~= lr * sign(g)
    CHECK(w.values()[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-5));
    CHECK(w.values()[1] == doctest::Approx(-1.0 + 0.01).epsilon(1e-5));
}

TEST_CASE("adamw matches a scalar reference over two steps") {
    // independent recurrence evaluated by hand for g1 = 0.5, g2 = -0.25
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double m = 0.0, v = 0.0, theta_ref = 2.0;
    const double grads[2] = {0.5, -0.25};
    for (int t = 1; t <= 2; ++t) {
        const double g = grads[t - 1];
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t));
        const double vh = v / (1 - std::pow(b2, t));
        theta_ref -= lr * mh / (std::sqrt(vh) + eps);
    }

    Tensor w = Tensor::from_data({1}, {2.0}, true);
    std::vector<std::pair<std::string, Tensor>> params{{"norm.gain", w}};
    OptState state;
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    for (int t = 0; t < 2; ++t) {
        w.zero_grad();
        w.node()->grad = {grads[t]};
        adamw_step(params, state, lr, cfg);
    }
    CHECK(w.values()[0] == doctest::Approx(theta_ref).epsilon(1e-12));
}

TEST_CASE("adamw at zero learning rate leaves parameters untouched") {
    Tensor w = Tensor::from_data({2}, {0.5, -0.5}, true);
    w.zero_grad();
    w.node()->grad = {1.0, 1.0};
    std::vector<std::pair<std::string, Tensor>> params{{"w", w}};
    OptState state;
    TrainConfig cfg;
    adamw_step(params, state, 0.0, cfg);
    CHECK(w.values()[0] == 0.5);
    CHECK(w.values()[1] == -0.5);
}

TEST_CASE("adamw rejects non-finite gradients by name") {
    Tensor w = Tensor::from_data({1}, {1.0}, true);
    w.zero_grad();
    w.node()->grad = {std::nan("")};
    std::vector<std::pair<std::string, Tensor>> params{{"layer0.cross.wq", w}};
    OptState state;
    TrainConfig cfg;
    CHECK_THROWS_WITH_AS(adamw_step(params, state, 0.01, cfg),
                         doctest::Contains("layer0.cross.wq"), numeric_error);
}

TEST_CASE("metrics for a perfect diagonal confusion") {
    Metrics m = metrics_from_confusion({{5, 0, 0}, {0, 5, 0}, {0, 0, 5}});
    CHECK(m.overall_accuracy == 1.0);
    CHECK(m.macro_recall == 1.0);
    CHECK(m.macro_precision == 1.0);
    CHECK(m.macro_f1 == 1.0);
}

TEST_CASE("metrics for a constant predictor") {
    // always predicts class 0 on a balanced set
    Metrics m = metrics_from_confusion({{4, 0, 0}, {4, 0, 0}, {4, 0, 0}});
    CHECK(m.overall_accuracy == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(m.macro_recall == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(m.precision[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(m.precision[1] == 0.0);  // empty denominator counts as zero
    CHECK(m.recall[0] == 1.0);
    CHECK(m.f1[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(m.macro_f1 == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("metrics for a mixed confusion, worked by hand") {
    // rows true, columns predicted
    Metrics m = metrics_from_confusion({{2, 0, 0}, {1, 1, 0}, {0, 0, 2}});
    CHECK(m.overall_accuracy == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
    CHECK(m.recall[0] == 1.0);
    CHECK(m.recall[1] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(m.recall[2] == 1.0);
    CHECK(m.macro_recall == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
    CHECK(m.precision[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(m.precision[1] == 1.0);
    CHECK(m.precision[2] == 1.0);
    CHECK(m.macro_precision == doctest::Approx(8.0 / 9.0).epsilon(1e-12));
    const double f0 = 2.0 * (2.0 / 3.0) * 1.0 / (2.0 / 3.0 + 1.0);
    const double f1 = 2.0 * 1.0 * 0.5 / 1.5;
    CHECK(m.f1[0] == doctest::Approx(f0).epsilon(1e-12));
    CHECK(m.f1[1] == doctest::Approx(f1).epsilon(1e-12));
    CHECK(m.macro_f1 == doctest::Approx((f0 + f1 + 1.0) / 3.0).epsilon(1e-12));
}

TEST_CASE("overall accuracy equals trace over sum") {
    Rng rng(17);
    std::vector<std::vector<std::size_t>> conf(3, std::vector<std::size_t>(3));
    std::size_t trace = 0, total = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            conf[i][j] = rng.next_below(20);
            total += conf[i][j];
            if (i == j) trace += conf[i][j];
        }
    }
    Metrics m = metrics_from_confusion(conf);
    CHECK(m.overall_accuracy ==
          doctest::Approx(static_cast<double>(trace) / static_cast<double>(total)).epsilon(1e-12));
}

TEST_CASE("metrics json exposes the headline numbers") {
    Metrics m = metrics_from_confusion({{2, 0, 0}, {1, 1, 0}, {0, 0, 2}});
    const std::string js = metrics_to_json(m);
    CHECK(js.find("\"balanced_accuracy\"") != std::string::npos);
    CHECK(js.find("\"overall_accuracy\"") != std::string::npos);
    CHECK(js.find("\"macro_f1\"") != std::string::npos);
    CHECK(js.find("\"confusion\"") != std::string::npos);
}

TEST_CASE("evaluate is invariant to sample order") {
    auto samples = toy_samples(12, 3, 5);
    ModelParams p = init_model(toy_model_config(), samples[0].seg.tokens.extent(1), 7);
    Metrics a = evaluate(p, samples);
    std::reverse(samples.begin(), samples.end());
    Metrics b = evaluate(p, samples);
    CHECK(a.confusion == b.confusion);
    CHECK(a.overall_accuracy == b.overall_accuracy);
}

TEST_CASE("a tiny learning rate cannot increase the batch loss much") {
    auto samples = toy_samples(6, 3, 9);
    ModelParams p = init_model(toy_model_config(), samples[0].seg.tokens.extent(1), 3);
    TrainConfig cfg;
    cfg.base_lr = 1e-6;
    cfg.min_lr = 1e-7;
    cfg.epochs_total = 3;
    cfg.epochs_warmup = 1;
    cfg.epochs_cooldown = 1;
    cfg.batch_size = 6;
    cfg.weight_decay = 0.0;
    TrainResult r = train(p, samples, samples, cfg);
    REQUIRE(r.history.size() == 3);
    CHECK(r.history.back().train_loss <= r.history.front().train_loss + 1e-3);
}

TEST_CASE("training writes one history record per epoch and is seed deterministic") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "seglat_test_train";
    fs::remove_all(dir);
    fs::create_directories(dir);

    auto run = [&](const std::string& name) {
        auto samples = toy_samples(9, 3, 2);
        ModelParams p = init_model(toy_model_config(), samples[0].seg.tokens.extent(1), 5);
        TrainConfig cfg;
        cfg.base_lr = 1e-4;
        cfg.epochs_total = 2;
        cfg.epochs_warmup = 1;
        cfg.epochs_cooldown = 0;
        cfg.batch_size = 4;
        cfg.seed = 123;
        return std::make_pair(train(p, samples, samples, cfg, (dir / name).string()), p);
    };
    auto [r1, p1] = run("h1.jsonl");
    auto [r2, p2] = run("h2.jsonl");

    std::ifstream f1(dir / "h1.jsonl"), f2(dir / "h2.jsonl");
    std::string l1, l2;
    std::size_t lines = 0;
    while (std::getline(f1, l1)) {
        REQUIRE(std::getline(f2, l2));
        CHECK(l1 == l2);
        CHECK(l1.find("\"epoch\"") != std::string::npos);
        CHECK(l1.find("\"train_loss\"") != std::string::npos);
        CHECK(l1.find("\"lr\"") != std::string::npos);
        ++lines;
    }
    CHECK(lines == 2);
    CHECK(r1.best_epoch == r2.best_epoch);
    CHECK(r1.best_val_macro_f1 == r2.best_val_macro_f1);
    auto n1 = p1.named_parameters(), n2 = p2.named_parameters();
    for (std::size_t i = 0; i < n1.size(); ++i) {
        for (std::size_t j = 0; j < n1[i].second.numel(); ++j) {
            CHECK(n1[i].second.values()[j] == n2[i].second.values()[j]);
        }
    }
}
