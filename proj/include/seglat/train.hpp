#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "seglat/model.hpp"
#include "seglat/tensor.hpp"
#include "seglat/tokenizer.hpp"

namespace seglat {

struct TrainConfig {
    double base_lr = 2e-5;
    double weight_decay = 0.1;
    std::size_t epochs_total = 200;
    std::size_t epochs_warmup = 20;
    std::size_t epochs_cooldown = 10;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    double min_lr = 1e-6;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

// Linear warmup to base_lr, cosine to min_lr, then a constant cooldown
// plateau at min_lr. Epoch-granular.
double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

struct OptState {
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;
    std::size_t step = 0;
};

// Decoupled weight decay; norm gains/biases, rank-1 tensors, and the latent
// seed are excluded from decay.
bool decay_excluded(const std::string& name, const Tensor& t);

void adamw_step(const std::vector<std::pair<std::string, Tensor>>& params, OptState& state,
                double lr, const TrainConfig& cfg);

struct Metrics {
    std::vector<std::vector<std::size_t>> confusion;  // [true][pred]
    double overall_accuracy = 0.0;
    std::vector<double> precision, recall, f1;
    double macro_precision = 0.0;
    double macro_recall = 0.0;  // balanced accuracy
    double macro_f1 = 0.0;
};

Metrics metrics_from_confusion(const std::vector<std::vector<std::size_t>>& confusion);

struct PreparedSample {
    SegmentedTokens seg;
    std::size_t label = 0;
};

Metrics evaluate(const ModelParams& params, const std::vector<PreparedSample>& samples);

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    Metrics val;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_macro_f1 = 0.0;
    // Parameter values at the best-val-macro-F1 epoch, index-aligned with
    // named_parameters().
    std::vector<std::vector<double>> best_param_values;
};

// Full training loop; mutates params in place. history_path, when nonempty,
// receives one JSON record per epoch (JSON-lines).
TrainResult train(ModelParams& params, const std::vector<PreparedSample>& train_set,
                  const std::vector<PreparedSample>& val_set, const TrainConfig& cfg,
                  const std::string& history_path = "");

std::string metrics_to_json(const Metrics& m);

}  // namespace seglat
