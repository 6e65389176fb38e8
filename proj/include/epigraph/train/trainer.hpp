#pragma once

#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "epigraph/core/adam.hpp"
#include "epigraph/model/checkpoint.hpp"
#include "epigraph/train/config.hpp"

namespace epigraph::train {

// Samples `indices` of ds, in that order.
inline data::WindowedDataset subset(const data::WindowedDataset& ds, const std::vector<std::size_t>& indices) {
    data::WindowedDataset out;
    out.window = ds.window;
    out.horizon = ds.horizon;
    out.num_features = ds.num_features;
    const std::size_t w = ds.window, H = ds.horizon, M = ds.num_features;
    for (auto n : indices) {
        if (n >= ds.size()) throw ContractError("subset: sample index out of range");
        const auto in = ds.inputs.begin() + static_cast<std::ptrdiff_t>(n * w * M);
        out.inputs.insert(out.inputs.end(), in, in + static_cast<std::ptrdiff_t>(w * M));
        const auto dec = ds.decoder_inputs.begin() + static_cast<std::ptrdiff_t>(n * w);
        out.decoder_inputs.insert(out.decoder_inputs.end(), dec, dec + static_cast<std::ptrdiff_t>(w));
        const auto tg = ds.targets.begin() + static_cast<std::ptrdiff_t>(n * H);
        out.targets.insert(out.targets.end(), tg, tg + static_cast<std::ptrdiff_t>(H));
        out.origins.push_back(ds.origins[n]);
        out.origin_index.push_back(ds.origin_index[n]);
        out.origin_rows.push_back(ds.origin_rows[n]);
        out.last_observed.push_back(ds.last_observed[n]);
    }
    return out;
}

struct Split {
    data::WindowedDataset train, validation;
};

// Windows whose targets all lie at or before train_end_week, split
// chronologically: the last `fraction` of them validate.
inline Split split_training(const data::WindowedDataset& ds, std::size_t train_end_week, double fraction) {
    std::vector<std::size_t> usable;
    for (std::size_t n = 0; n < ds.size(); ++n)
        if (ds.origin_index[n] + ds.horizon - 1 <= train_end_week) usable.push_back(n);
    const auto n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(usable.size())));
    if (n_val == 0 || n_val >= usable.size())
        throw ContractError("validation split is empty: " + std::to_string(usable.size()) +
                            " training windows end by week " + std::to_string(train_end_week));
    const std::vector<std::size_t> tr(usable.begin(), usable.end() - static_cast<std::ptrdiff_t>(n_val));
    const std::vector<std::size_t> va(usable.end() - static_cast<std::ptrdiff_t>(n_val), usable.end());
    return {subset(ds, tr), subset(ds, va)};
}

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double validation_loss = 0.0;
    std::size_t steps = 0;
    bool improved = false;
};

struct TrainResult {
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    double best_validation_loss = std::numeric_limits<double>::infinity();
    double final_validation_loss = 0.0;
    std::size_t steps = 0;
    bool stopped_early = false;
};

// Mean squared error over all samples and steps, evaluation mode.
inline double evaluate_loss(model::EpiGraphModel& model, const data::WindowedDataset& ds, std::size_t batch_size) {
    NoGradScope no_grad;
    double total = 0.0;
    for (std::size_t start = 0; start < ds.size(); start += batch_size) {
        std::vector<std::size_t> idx(std::min(batch_size, ds.size() - start));
        std::iota(idx.begin(), idx.end(), start);
        const auto batch = model::make_batch(ds, idx);
        const Tensor pred = model(batch.inputs, batch.history, {});
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double e = pred[i] - batch.targets[i];
            total += e * e;
        }
    }
    return total / static_cast<double>(ds.size() * ds.horizon);
}

// One optimizer step on the given samples; returns the batch loss.
inline double train_step(model::EpiGraphModel& model, const data::WindowedDataset& ds,
                         const std::vector<std::size_t>& samples, AdamState& adam, Rng& dropout_rng) {
    auto params = model.params().tensors();
    zero_grads(params);
    const auto batch = model::make_batch(ds, samples);
    Tape tape;
    const Tensor loss = mse_loss(model(batch.inputs, batch.history, {true, &dropout_rng}), batch.targets);
    tape.backward(loss);
    adam_step(params, adam);
    return loss.item();
}

// Adam on shuffled minibatches; validation MSE after every epoch; stops after
// `patience` epochs without an improvement above min_delta (or at the step
// cap). The model is left holding the best-validation parameters.
inline TrainResult fit(model::EpiGraphModel& model, const data::WindowedDataset& train,
                       const data::WindowedDataset& validation, const TrainConfig& cfg) {
    if (validation.size() == 0) throw ContractError("validation split is empty");
    if (train.size() == 0) throw ContractError("training split is empty");
    const Rng root(cfg.seed);
    Rng order_rng = root.fork(1);
    Rng dropout_rng = root.fork(2);
    AdamState adam;
    adam.config.learning_rate = cfg.learning_rate;
    auto params = model.params().tensors();

    TrainResult result;
    std::vector<std::vector<double>> best(params.size());
    auto snapshot = [&] {
        for (std::size_t i = 0; i < params.size(); ++i) best[i] = params[i].vec();
    };
    snapshot();
    std::size_t since_best = 0;
    std::vector<std::size_t> order(train.size());
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        order_rng.shuffle(std::span<std::size_t>(order));
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            if (cfg.max_steps && result.steps >= cfg.max_steps) break;
            const std::vector<std::size_t> idx(
                order.begin() + static_cast<std::ptrdiff_t>(start),
                order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
            loss_sum += train_step(model, train, idx, adam, dropout_rng);
            ++batches;
            ++result.steps;
        }
        EpochLog entry{epoch, batches ? loss_sum / static_cast<double>(batches) : 0.0,
                       evaluate_loss(model, validation, cfg.batch_size), result.steps, false};
        if (entry.validation_loss < result.best_validation_loss - cfg.min_delta) {
            result.best_validation_loss = entry.validation_loss;
            result.best_epoch = epoch;
            entry.improved = true;
            since_best = 0;
            snapshot();
        } else {
            ++since_best;
        }
        result.final_validation_loss = entry.validation_loss;
        result.log.push_back(entry);
        if (since_best >= cfg.patience) {
            result.stopped_early = true;
            break;
        }
        if (cfg.max_steps && result.steps >= cfg.max_steps) break;
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto v = params[i].mutable_values();
        std::copy(best[i].begin(), best[i].end(), v.begin());
    }
    return result;
}

}  // namespace epigraph::train
