#pragma once

#include <algorithm>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "epigraph/core/errors.hpp"
#include "epigraph/data/series_table.hpp"

namespace epigraph::data {

// Affine map of one variable onto [0, 1] using training-split extremes.
// A constant training series (max == min) maps to 0 everywhere.
struct MinMax {
    double min = 0.0;
    double max = 1.0;

    bool degenerate() const { return !(max > min); }
    double apply(double x) const { return degenerate() ? 0.0 : (x - min) / (max - min); }
    double invert(double s) const { return degenerate() ? min : s * (max - min) + min; }
};

struct ScalerState {
    std::vector<std::string> names;
    std::vector<MinMax> ranges;
    std::vector<std::string> warnings;

    const MinMax& range(std::string_view name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return ranges[i];
        throw ContractError("scaler has no entry for '" + std::string(name) + "'");
    }
};

inline MinMax fit_range(std::span<const double> values) {
    if (values.empty()) throw ContractError("cannot fit a scaler on an empty training split");
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    return {*lo, *hi};
}

// Number of leading rows of `table` whose epi-week index is <= train_end_week.
inline std::size_t training_rows(const SeriesTable& table, std::size_t train_end_week) {
    if (train_end_week < table.first_index) return 0;
    return std::min(table.rows(), train_end_week - table.first_index + 1);
}

inline ScalerState fit_scaler(const SeriesTable& table, std::size_t train_end_week) {
    const std::size_t n = training_rows(table, train_end_week);
    if (n == 0)
        throw ContractError("empty training split: train_end_week " + std::to_string(train_end_week) +
                            " precedes the first row (index " + std::to_string(table.first_index) + ")");
    ScalerState state;
    for (std::size_t m = 0; m < table.cols(); ++m) {
        const auto col = table.column(m);
        const MinMax r = fit_range(std::span<const double>(col.data(), n));
        if (r.degenerate())
            state.warnings.push_back("variable '" + table.variables[m].name +
                                     "' is constant on the training split; scaled to 0");
        state.names.push_back(table.variables[m].name);
        state.ranges.push_back(r);
    }
    return state;
}

// Test-period values may fall outside [0, 1]; nothing is clipped.
inline SeriesTable apply_scaler(const SeriesTable& table, const ScalerState& state) {
    SeriesTable out = table;
    for (std::size_t m = 0; m < table.cols(); ++m) {
        const MinMax& r = state.range(table.variables[m].name);
        for (std::size_t t = 0; t < table.rows(); ++t) out.at(t, m) = r.apply(table.at(t, m));
    }
    return out;
}

// delta[i] = y[i + 1] - y[i]
inline std::vector<double> difference(std::span<const double> y) {
    if (y.size() < 2) throw ContractError("difference needs at least 2 values, got " + std::to_string(y.size()));
    std::vector<double> d(y.size() - 1);
    for (std::size_t i = 0; i + 1 < y.size(); ++i) d[i] = y[i + 1] - y[i];
    return d;
}

// Rebuilds levels from increments anchored at the last observed value; each
// reconstructed value anchors the next step.
inline std::vector<double> inverse_difference(std::span<const double> deltas, double last_observed) {
    std::vector<double> y(deltas.size());
    double prev = last_observed;
    for (std::size_t h = 0; h < deltas.size(); ++h) {
        y[h] = deltas[h] + prev;
        prev = y[h];
    }
    return y;
}

inline std::string lag_name(const std::string& base, std::size_t lag) {
    return base + " (" + (lag == 0 ? std::string("0") : "-" + std::to_string(lag)) + ")";
}

// Expands every variable not listed in `passthrough` into columns at offsets
// 0, -1, ..., -max_lag named "Name (-k)". Pass-through variables keep their
// name and come last. The first max_lag rows are dropped.
inline SeriesTable build_lags(const SeriesTable& table, std::size_t max_lag,
                              const std::set<std::string>& passthrough = {}) {
    if (max_lag >= table.rows())
        throw ContractError("max_lag " + std::to_string(max_lag) + " must be shorter than the table (" +
                            std::to_string(table.rows()) + " rows)");
    if (table.has_missing()) throw ContractError("build_lags requires a gap-free table; run impute first");
    struct Source {
        std::size_t column;
        std::size_t lag;
    };
    std::vector<Source> plan;
    std::vector<Variable> vars;
    for (std::size_t m = 0; m < table.cols(); ++m) {
        if (passthrough.count(table.variables[m].name)) continue;
        for (std::size_t k = 0; k <= max_lag; ++k) {
            plan.push_back({m, k});
            Variable v = table.variables[m];
            v.name = lag_name(v.name, k);
            vars.push_back(v);
        }
    }
    for (std::size_t m = 0; m < table.cols(); ++m)
        if (passthrough.count(table.variables[m].name)) {
            plan.push_back({m, 0});
            vars.push_back(table.variables[m]);
        }
    std::vector<MmwrWeek> weeks(table.weeks.begin() + static_cast<std::ptrdiff_t>(max_lag), table.weeks.end());
    SeriesTable out = SeriesTable::empty_like(std::move(weeks), std::move(vars));
    out.first_index = table.first_index + max_lag;
    for (std::size_t t = 0; t < out.rows(); ++t)
        for (std::size_t c = 0; c < plan.size(); ++c) {
            const std::size_t src_row = t + max_lag - plan[c].lag;
            out.at(t, c) = table.at(src_row, plan[c].column);
            out.imputed[t * out.cols() + c] = table.imputed.empty() ? 0 : table.imputed[src_row * table.cols() + plan[c].column];
        }
    return out;
}

// Model-ready view of a table: scaled lag-expanded predictors plus the
// differenced, scaled target. Row r covers epi-week index `index[r]`.
struct ModelFrame {
    std::vector<MmwrWeek> weeks;
    std::vector<std::size_t> index;
    std::vector<std::string> feature_names;
    std::vector<double> features;    // rows x features, scaled
    std::vector<double> delta;       // scaled first difference of the target
    std::vector<double> raw_target;  // target in original units
    ScalerState feature_scaler;
    MinMax target_scaler;            // fitted on the differenced target

    std::size_t rows() const { return weeks.size(); }
    std::size_t num_features() const { return feature_names.size(); }
    double feature(std::size_t r, std::size_t m) const { return features[r * num_features() + m]; }

    // Row holding epi-week index `idx`, if inside the frame.
    std::optional<std::size_t> row_of(std::size_t idx) const {
        if (index.empty() || idx < index.front() || idx > index.back()) return std::nullopt;
        return idx - index.front();
    }
};

struct FrameOptions {
    std::string target = "cases";
    std::size_t max_lag = 6;
    std::size_t train_end_week = 850;
};

struct FittedScalers {
    ScalerState features;
    MinMax target;
};

// Lags the predictors, differences the target, and scales both with
// statistics from rows at or before train_end_week (or with `fitted`, when
// reusing a trained model's scalers).
inline ModelFrame prepare_frame(const SeriesTable& table, const FrameOptions& options,
                                const FittedScalers* fitted = nullptr) {
    const std::size_t target_col = table.require(options.target);
    if (table.cols() < 2) throw ContractError("table needs at least one predictor besides the target");
    const std::size_t drop = std::max<std::size_t>(options.max_lag, 1);
    if (drop + 1 >= table.rows()) throw ContractError("table too short for max_lag " + std::to_string(options.max_lag));
    const SeriesTable lagged = build_lags(table, options.max_lag, {options.target});
    const auto raw = table.column(target_col);
    const auto deltas = difference(raw);  // deltas[i] belongs to row i + 1

    // skip the leading row(s) without a difference when max_lag == 0
    const std::size_t skip = drop - options.max_lag;
    ModelFrame frame;
    const std::size_t M = lagged.cols() - 1;
    for (std::size_t m = 0; m < M; ++m) frame.feature_names.push_back(lagged.variables[m].name);
    for (std::size_t t = skip; t < lagged.rows(); ++t) {
        const std::size_t src = t + options.max_lag;
        frame.weeks.push_back(lagged.weeks[t]);
        frame.index.push_back(lagged.index_of_row(t));
        for (std::size_t m = 0; m < M; ++m) frame.features.push_back(lagged.at(t, m));
        frame.delta.push_back(deltas[src - 1]);
        frame.raw_target.push_back(raw[src]);
    }

    if (fitted) {
        frame.feature_scaler = fitted->features;
        frame.target_scaler = fitted->target;
        if (frame.feature_scaler.names != frame.feature_names)
            throw ContractError("fitted scaler features do not match the table's lagged predictors");
    } else {
        SeriesTable features = SeriesTable::empty_like(frame.weeks, std::vector<Variable>(lagged.variables.begin(),
                                                                                          lagged.variables.begin() + M));
        features.values = frame.features;
        features.first_index = frame.index.front();
        frame.feature_scaler = fit_scaler(features, options.train_end_week);
        const std::size_t n = training_rows(features, options.train_end_week);
        frame.target_scaler = fit_range(std::span<const double>(frame.delta.data(), n));
        if (frame.target_scaler.degenerate())
            frame.feature_scaler.warnings.push_back("differenced target is constant on the training split");
    }
    for (std::size_t r = 0; r < frame.rows(); ++r)
        for (std::size_t m = 0; m < M; ++m)
            frame.features[r * M + m] = frame.feature_scaler.ranges[m].apply(frame.features[r * M + m]);
    for (auto& d : frame.delta) d = frame.target_scaler.apply(d);
    return frame;
}

// Input-output pairs. Sample n has origin row t: encoder inputs cover rows
// t-w .. t-1, targets cover rows t .. t+H-1.
struct WindowedDataset {
    std::size_t window = 0, horizon = 0, num_features = 0;
    std::vector<double> inputs;          // N x w x M
    std::vector<double> decoder_inputs;  // N x w
    std::vector<double> targets;         // N x H
    std::vector<MmwrWeek> origins;
    std::vector<std::size_t> origin_index;  // epi-week index of each origin
    std::vector<std::size_t> origin_rows;   // frame row of each origin
    std::vector<double> last_observed;      // raw y at t-1

    std::size_t size() const { return origins.size(); }
};

// Appends the sample with origin row t. Targets past the frame end are NaN.
inline void append_sample(WindowedDataset& ds, const ModelFrame& frame, std::size_t t) {
    const std::size_t w = ds.window, H = ds.horizon, M = frame.num_features();
    if (t < w || t > frame.rows()) throw ContractError("origin row " + std::to_string(t) + " lacks " +
                                                       std::to_string(w) + " rows of history");
    for (std::size_t r = t - w; r < t; ++r) {
        ds.inputs.insert(ds.inputs.end(), frame.features.begin() + static_cast<std::ptrdiff_t>(r * M),
                         frame.features.begin() + static_cast<std::ptrdiff_t>((r + 1) * M));
        ds.decoder_inputs.push_back(frame.delta[r]);
    }
    for (std::size_t h = 0; h < H; ++h) ds.targets.push_back(t + h < frame.rows() ? frame.delta[t + h] : kMissing);
    if (t < frame.rows()) {
        ds.origins.push_back(frame.weeks[t]);
    } else {
        MmwrWeek w_next = frame.weeks.back();
        for (std::size_t k = frame.rows() - 1; k < t; ++k) w_next = w_next.next();
        ds.origins.push_back(w_next);
    }
    ds.origin_index.push_back(frame.index.front() + t);
    ds.origin_rows.push_back(t);
    ds.last_observed.push_back(frame.raw_target[t - 1]);
}

inline WindowedDataset empty_dataset(const ModelFrame& frame, std::size_t w, std::size_t H) {
    if (w < 1 || H < 1) throw ContractError("window and horizon must be >= 1");
    WindowedDataset ds;
    ds.window = w;
    ds.horizon = H;
    ds.num_features = frame.num_features();
    return ds;
}

// Every complete sample at the given stride: N = (T - w - H) / stride + 1.
inline WindowedDataset window(const ModelFrame& frame, std::size_t w, std::size_t H, std::size_t stride = 1) {
    if (stride < 1) throw ContractError("stride must be >= 1");
    if (frame.rows() < w + H)
        throw ContractError("series of length " + std::to_string(frame.rows()) + " too short for window " +
                            std::to_string(w) + " + horizon " + std::to_string(H));
    WindowedDataset ds = empty_dataset(frame, w, H);
    for (std::size_t t = w; t + H <= frame.rows(); t += stride) append_sample(ds, frame, t);
    return ds;
}

}  // namespace epigraph::data
