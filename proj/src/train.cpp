#include "seglat/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "seglat/errors.hpp"
#include "seglat/rng.hpp"

namespace seglat {

void TrainConfig::validate() const {
    if (base_lr <= 0.0 || min_lr < 0.0) throw config_error("train: learning rates must be positive");
    if (epochs_total == 0 || batch_size == 0) throw config_error("train: counts must be positive");
    if (epochs_warmup + epochs_cooldown > epochs_total) {
        throw config_error("train: warmup + cooldown exceeds total epochs");
    }
}

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
    if (epoch >= cfg.epochs_total) {
        throw usage_error("lr_at_epoch: epoch " + std::to_string(epoch) + " outside [0," +
                          std::to_string(cfg.epochs_total) + ")");
    }
    if (epoch < cfg.epochs_warmup) {
        return cfg.base_lr * static_cast<double>(epoch + 1) /
               static_cast<double>(cfg.epochs_warmup);
    }
    const std::size_t cosine_end = cfg.epochs_total - cfg.epochs_cooldown;
    if (epoch >= cosine_end) return cfg.min_lr;
    const std::size_t span = cosine_end - cfg.epochs_warmup;
    const double progress =
        span == 0 ? 1.0
                  : static_cast<double>(epoch - cfg.epochs_warmup) / static_cast<double>(span);
    return cfg.min_lr + (cfg.base_lr - cfg.min_lr) * 0.5 * (1.0 + std::cos(M_PI * progress));
}

bool decay_excluded(const std::string& name, const Tensor& t) {
    if (name == "latent_seed") return true;
    return t.rank() < 2;  // biases and norm gains
}

void adamw_step(const std::vector<std::pair<std::string, Tensor>>& params, OptState& state,
                double lr, const TrainConfig& cfg) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (const auto& [name, t] : params) {
        Tensor param = t;
        const std::vector<double>& g = param.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!std::isfinite(g[i])) {
                throw numeric_error("adamw_step: non-finite gradient in parameter '" + name + "'");
            }
        }
        auto& [m, v] = state.moments[name];
        if (m.empty()) {
            m.assign(g.size(), 0.0);
            v.assign(g.size(), 0.0);
        }
        const bool decay = !decay_excluded(name, param);
        std::vector<double>& w = param.mutable_values();
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            double update = mhat / (std::sqrt(vhat) + cfg.adam_eps);
            if (decay) update += cfg.weight_decay * w[i];
            w[i] -= lr * update;
        }
    }
}

Metrics metrics_from_confusion(const std::vector<std::vector<std::size_t>>& confusion) {
    const std::size_t k = confusion.size();
    Metrics m;
    m.confusion = confusion;
    m.precision.assign(k, 0.0);
    m.recall.assign(k, 0.0);
    m.f1.assign(k, 0.0);
    std::size_t total = 0, correct = 0;
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) total += confusion[i][j];
        correct += confusion[i][i];
    }
    m.overall_accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t tp = confusion[c][c], pred = 0, actual = 0;
        for (std::size_t i = 0; i < k; ++i) {
            pred += confusion[i][c];
            actual += confusion[c][i];
        }
        m.precision[c] = pred ? static_cast<double>(tp) / static_cast<double>(pred) : 0.0;
        m.recall[c] = actual ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
        const double pr = m.precision[c] + m.recall[c];
        m.f1[c] = pr > 0.0 ? 2.0 * m.precision[c] * m.recall[c] / pr : 0.0;
    }
    m.macro_precision = std::accumulate(m.precision.begin(), m.precision.end(), 0.0) / k;
    m.macro_recall = std::accumulate(m.recall.begin(), m.recall.end(), 0.0) / k;
    m.macro_f1 = std::accumulate(m.f1.begin(), m.f1.end(), 0.0) / k;
    return m;
}

Metrics evaluate(const ModelParams& params, const std::vector<PreparedSample>& samples) {
    const std::size_t k = params.cfg.n_classes;
    std::vector<std::vector<std::size_t>> confusion(k, std::vector<std::size_t>(k, 0));
    for (const auto& s : samples) {
        Tensor logits = forward(params, s.seg);
        const auto& v = logits.values();
        std::size_t pred = 0;
        for (std::size_t j = 1; j < v.size(); ++j) {
            if (v[j] > v[pred]) pred = j;  // ties keep the lowest index
        }
        confusion[s.label][pred] += 1;
    }
    return metrics_from_confusion(confusion);
}

std::string metrics_to_json(const Metrics& m) {
    nlohmann::ordered_json j;
    j["overall_accuracy"] = m.overall_accuracy;
    j["balanced_accuracy"] = m.macro_recall;
    j["macro_precision"] = m.macro_precision;
    j["macro_f1"] = m.macro_f1;
    j["precision"] = m.precision;
    j["recall"] = m.recall;
    j["f1"] = m.f1;
    j["confusion"] = m.confusion;
    return j.dump();
}

TrainResult train(ModelParams& params, const std::vector<PreparedSample>& train_set,
                  const std::vector<PreparedSample>& val_set, const TrainConfig& cfg,
                  const std::string& history_path) {
    cfg.validate();
    if (train_set.empty() || val_set.empty()) {
        throw config_error("train: train and val splits must be nonempty");
    }
    auto named = params.named_parameters();
    OptState opt;
    Rng root(cfg.seed);

    std::ofstream history;
    if (!history_path.empty()) {
        history.open(history_path, std::ios::binary);
        if (!history) throw io_error("train: cannot open history file " + history_path);
    }

    TrainResult result;
    result.best_val_macro_f1 = -1.0;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs_total; ++epoch) {
        const double lr = lr_at_epoch(cfg, epoch);
        Rng shuffle_rng = root.fork("shuffle_" + std::to_string(epoch));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);
        }

        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, order.size());
            const double inv_batch = 1.0 / static_cast<double>(end - start);
            for (auto& [name, t] : named) t.zero_grad();
            for (std::size_t i = start; i < end; ++i) {
                const PreparedSample& s = train_set[order[i]];
                Tensor logits = forward(params, s.seg);
                Tensor loss = cross_entropy(logits, {s.label});
                epoch_loss += loss.item();
                backward(scale(loss, inv_batch));
            }
            adamw_step(named, opt, lr, cfg);
        }
        epoch_loss /= static_cast<double>(order.size());

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss = epoch_loss;
        rec.val = evaluate(params, val_set);
        if (history.is_open()) {
            nlohmann::ordered_json j;
            j["epoch"] = rec.epoch;
            j["lr"] = rec.lr;
            j["train_loss"] = rec.train_loss;
            j["val"] = nlohmann::ordered_json::parse(metrics_to_json(rec.val));
            history << j.dump() << "\n";
        }
        if (rec.val.macro_f1 > result.best_val_macro_f1) {
            result.best_val_macro_f1 = rec.val.macro_f1;
            result.best_epoch = epoch;
            result.best_param_values.clear();
            for (const auto& [name, t] : named) result.best_param_values.push_back(t.values());
        }
        result.history.push_back(std::move(rec));
    }
    return result;
}

}  // namespace seglat
