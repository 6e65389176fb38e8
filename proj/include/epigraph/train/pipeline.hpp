#pragma once

#include <optional>
#include <string>
#include <vector>

#include "epigraph/train/metrics.hpp"
#include "epigraph/train/trainer.hpp"

namespace epigraph::train {

// Lagged, scaled frame plus the correlation graph over its training rows.
struct Prepared {
    data::ModelFrame frame;
    graph::VariableGraph graph;
};

inline Prepared prepare(const data::SeriesTable& table, const TrainConfig& cfg) {
    Prepared p;
    p.frame = data::prepare_frame(table, cfg.frame_options());
    const auto rho = graph::pearson_matrix(p.frame, cfg.train_end_week);
    p.graph = graph::build_graph(rho, p.frame.feature_names, cfg.edge_threshold);
    return p;
}

struct TrainedModel {
    model::EpiGraphModel model;
    data::ModelFrame frame;
    TrainResult result;
    std::size_t train_samples = 0, validation_samples = 0;

    model::Checkpoint checkpoint(const TrainConfig& cfg) const {
        auto c = model::capture(model, cfg.frame_options(), cfg.seed, frame.feature_scaler, frame.target_scaler);
        c.metadata["best_epoch"] = std::to_string(result.best_epoch);
        c.metadata["epochs_run"] = std::to_string(result.log.size());
        c.metadata["optimizer_steps"] = std::to_string(result.steps);
        c.metadata["best_validation_mse"] = model::hex_double(result.best_validation_loss);
        c.metadata["train_samples"] = std::to_string(train_samples);
        c.metadata["validation_samples"] = std::to_string(validation_samples);
        return c;
    }
};

inline TrainedModel train_model(const data::SeriesTable& table, const TrainConfig& cfg) {
    cfg.validate();
    Prepared p = prepare(table, cfg);
    const auto all = data::window(p.frame, cfg.effective_window(), cfg.horizon);
    const auto split = split_training(all, cfg.train_end_week, cfg.validation_fraction);
    model::EpiGraphModel model(std::move(p.graph), cfg.model_config(), cfg.seed);
    auto result = fit(model, split.train, split.validation, cfg);
    return {std::move(model), std::move(p.frame), std::move(result), split.train.size(), split.validation.size()};
}

// Frame rebuilt from a checkpoint's options and fitted scalers.
inline data::ModelFrame frame_for(const data::SeriesTable& table, const model::Checkpoint& c) {
    const data::FittedScalers fitted{c.feature_scaler, c.target_scaler};
    return data::prepare_frame(table, c.frame, &fitted);
}

struct ForecastRow {
    std::size_t origin_index = 0;
    data::MmwrWeek origin;
    std::size_t step = 0;  // 1-based
    std::size_t horizon = 0;
    double y_true = 0.0;
    double y_pred = 0.0;
};

struct ForecastReport {
    std::size_t horizon = 0;
    std::vector<ForecastRow> rows;
    std::vector<std::size_t> skipped_origins;

    MetricsReport metrics() const {
        std::vector<double> p, y;
        for (const auto& r : rows) {
            p.push_back(r.y_pred);
            y.push_back(r.y_true);
        }
        return compute_metrics(p, y);
    }

    // Metrics restricted to each forecast step 1..H.
    std::vector<MetricsReport> per_step() const {
        std::vector<MetricsReport> out;
        for (std::size_t h = 1; h <= horizon; ++h) {
            std::vector<double> p, y;
            for (const auto& r : rows)
                if (r.step == h) {
                    p.push_back(r.y_pred);
                    y.push_back(r.y_true);
                }
            if (!p.empty()) out.push_back(compute_metrics(p, y));
        }
        return out;
    }
};

// Fixed-weight forecasts for every origin in [test_start, test_end] at
// stride 1. Origins whose last target falls after test_end (or after the
// data) are skipped, or truncated to their in-range steps when `truncate`.
inline ForecastReport walk_forward(model::EpiGraphModel& model, const data::ModelFrame& frame,
                                   std::size_t test_start, std::size_t test_end, bool truncate = false,
                                   std::size_t batch_size = 32) {
    const std::size_t w = model.config().window, H = model.config().horizon;
    if (frame.num_features() != model.spatial().graph().size())
        throw ContractError("frame has " + std::to_string(frame.num_features()) + " features, model expects " +
                            std::to_string(model.spatial().graph().size()));
    ForecastReport report;
    report.horizon = H;
    auto ds = data::empty_dataset(frame, w, H);
    std::vector<std::size_t> steps_kept;
    for (std::size_t t = test_start; t <= test_end; ++t) {
        const auto row = frame.row_of(t);
        if (!row) throw ContractError("test origin " + std::to_string(t) + " lies outside the data");
        if (*row < w)
            throw ContractError("test origin " + std::to_string(t) + " has only " + std::to_string(*row) +
                                " preceding weeks, window needs " + std::to_string(w));
        const std::size_t last_known = std::min(test_end, frame.index.back());
        const std::size_t available = last_known >= t ? last_known - t + 1 : 0;
        if (available < H && !(truncate && available > 0)) {
            report.skipped_origins.push_back(t);
            continue;
        }
        data::append_sample(ds, frame, *row);
        steps_kept.push_back(std::min(available, H));
    }
    for (std::size_t start = 0; start < ds.size(); start += batch_size) {
        std::vector<std::size_t> idx(std::min(batch_size, ds.size() - start));
        std::iota(idx.begin(), idx.end(), start);
        const auto levels = model::forecast(model, ds, idx, frame.target_scaler);
        for (std::size_t b = 0; b < idx.size(); ++b) {
            const std::size_t n = idx[b];
            for (std::size_t h = 0; h < steps_kept[n]; ++h)
                report.rows.push_back({ds.origin_index[n], ds.origins[n], h + 1, H,
                                       frame.raw_target[ds.origin_rows[n] + h], levels[b][h]});
        }
    }
    return report;
}

// Forecast from the most recent origin: the week after the last row.
inline std::vector<double> forecast_latest(model::EpiGraphModel& model, const data::ModelFrame& frame,
                                           data::MmwrWeek* origin = nullptr) {
    auto ds = data::empty_dataset(frame, model.config().window, model.config().horizon);
    data::append_sample(ds, frame, frame.rows());
    if (origin) *origin = ds.origins[0];
    return model::forecast(model, ds, {0}, frame.target_scaler)[0];
}

}  // namespace epigraph::train
