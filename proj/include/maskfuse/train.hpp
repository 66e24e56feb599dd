#pragma once

#include <chrono>
#include <cstdint>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "maskfuse/adam.hpp"
#include "maskfuse/dataset.hpp"
#include "maskfuse/errors.hpp"
#include "maskfuse/loss.hpp"
#include "maskfuse/metrics.hpp"
#include "maskfuse/model.hpp"
#include "maskfuse/rng.hpp"

namespace maskfuse {

struct TrainConfig {
    std::size_t epochs = 100;
    double lr = 1e-3;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    double gamma = 2.0;
    bool acb_enabled = true;
    bool aff_enabled = true;

    void validate() const {
        if (epochs < 1) throw DataError("train config: epochs must be at least 1");
        if (batch_size < 1) throw DataError("train config: batch_size must be at least 1");
        if (!(lr > 0.0)) throw DataError("train config: lr must be positive");
        if (!(gamma >= 0.0)) throw DataError("train config: gamma must be non-negative");
    }
};

struct TrainHistory {
    std::vector<double> epoch_loss;
    std::uint64_t clamp_events = 0;
    double wall_seconds = 0.0;
};

/// Loss configuration for a training split: frequency-ratio weights and the
/// focal factor when adaptive balancing is on, plain unweighted cross-entropy
/// when it is off.
inline LossConfig make_loss_config(const Dataset& train_split, const TrainConfig& cfg) {
    LossConfig loss;
    if (cfg.acb_enabled) {
        loss.mode = LossMode::AdaptiveFocal;
        loss.gamma = cfg.gamma;
        loss.alpha = class_weights(class_counts(train_split));
    } else {
        loss.mode = LossMode::CrossEntropy;
        loss.gamma = 0.0;
        loss.alpha = {1.0, 1.0, 1.0};
    }
    return loss;
}

/// Full training run: seeded init, per-epoch Fisher-Yates shuffling, Adam on
/// mini-batches of the batch-mean loss. Deterministic in (dataset, arch, cfg);
/// the shuffle stream is derived from cfg.seed and independent of the
/// parameter-init stream.
inline std::pair<ModelParams, TrainHistory> train(const Dataset& dataset, ArchConfig arch,
                                                  const TrainConfig& cfg) {
    cfg.validate();
    if (dataset.samples.empty()) {
        throw DataError("train: empty dataset");
    }
    if (dataset.d != arch.d || dataset.S != arch.S) {
        throw ShapeError("train: dataset shape d=" + std::to_string(dataset.d) + ", S=" +
                         std::to_string(dataset.S) + " does not match arch d=" +
                         std::to_string(arch.d) + ", S=" + std::to_string(arch.S));
    }
    arch.aff_enabled = cfg.aff_enabled;

    const auto started = std::chrono::steady_clock::now();
    const LossConfig loss_cfg = make_loss_config(dataset, cfg);

    ModelParams params = init_params(arch, cfg.seed);
    Vector flat = flatten(params);
    AdamState adam = AdamState::create(flat.size(), cfg.lr);
    SplitMix64 shuffle_rng(derive_seed(cfg.seed, 2));

    TrainHistory history;
    history.epoch_loss.reserve(cfg.epochs);
    const std::size_t n = dataset.samples.size();
    std::vector<std::size_t> order(n);
    std::vector<SubjectSample> batch;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        fisher_yates(order, shuffle_rng);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t stop = std::min(start + cfg.batch_size, n);
            batch.clear();
            for (std::size_t i = start; i < stop; ++i) {
                batch.push_back(dataset.samples[order[i]]);
            }
            const BackwardResult result = backward(batch, params, loss_cfg);
            history.clamp_events += result.clamp_events;
            loss_sum += result.mean_loss * static_cast<double>(batch.size());

            adam_step(flat, flatten(result.grads), adam);
            unflatten(params, flat);
        }
        history.epoch_loss.push_back(loss_sum / static_cast<double>(n));
    }
    history.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return {std::move(params), history};
}

/// Trains on one split and scores the other with the full metric suite.
inline MetricsReport fit_fold(const Dataset& train_split, const Dataset& eval_split,
                              const ArchConfig& arch, const TrainConfig& cfg) {
    for (const auto& sample : eval_split.samples) {
        for (const auto& train_sample : train_split.samples) {
            if (sample.subject_id == train_sample.subject_id) {
                throw DataError("fit_fold: subject \"" + sample.subject_id +
                                "\" appears in both splits");
            }
        }
    }
    auto [params, history] = train(train_split, arch, cfg);
    std::vector<ClassLabel> y_true;
    std::vector<Vector> probs;
    y_true.reserve(eval_split.samples.size());
    probs.reserve(eval_split.samples.size());
    for (const auto& sample : eval_split.samples) {
        y_true.push_back(sample.label);
        probs.push_back(forward(sample, params));
    }
    return evaluate(y_true, probs);
}

struct CvResult {
    std::vector<MetricsReport> folds;
    MetricsReport mean;
};

/// Stratified k-fold cross-validation. Fold f trains with a seed derived from
/// (cfg.seed, f), so folds are independent and the whole run is reproducible.
/// Folds run concurrently up to max_threads (1 = serial); results land in
/// fold order either way.
inline CvResult cross_validate(const Dataset& dataset, const ArchConfig& arch,
                               const TrainConfig& cfg, std::size_t k,
                               std::size_t max_threads = 1) {
    std::vector<ClassLabel> labels;
    labels.reserve(dataset.samples.size());
    for (const auto& sample : dataset.samples) labels.push_back(sample.label);
    const FoldSplit split = stratified_kfold(labels, k, cfg.seed);

    CvResult result;
    result.folds.resize(k);
    std::vector<std::string> failures(k);

    auto run_fold = [&](std::size_t fold) {
        try {
            const Dataset train_split = subset(dataset, split.complement_indices(fold));
            const Dataset eval_split = subset(dataset, split.fold_indices(fold));
            TrainConfig fold_cfg = cfg;
            fold_cfg.seed = derive_seed(cfg.seed, 16 + fold);
            result.folds[fold] = fit_fold(train_split, eval_split, arch, fold_cfg);
        } catch (const std::exception& e) {
            failures[fold] = e.what();
        }
    };

    if (max_threads <= 1) {
        for (std::size_t fold = 0; fold < k; ++fold) run_fold(fold);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t fold = 0; fold < k; ++fold) {
            pool.emplace_back(run_fold, fold);
            if (pool.size() == max_threads) {
                for (auto& t : pool) t.join();
                pool.clear();
            }
        }
        for (auto& t : pool) t.join();
    }
    for (std::size_t fold = 0; fold < k; ++fold) {
        if (!failures[fold].empty()) {
            throw DataError("cross_validate: fold " + std::to_string(fold) + " failed: " +
                            failures[fold]);
        }
    }
    result.mean = cv_aggregate(result.folds);
    return result;
}

} // namespace maskfuse
