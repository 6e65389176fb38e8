#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "epigraph/core/errors.hpp"

namespace epigraph::train {

struct MetricsReport {
    double mape = 0.0;
    double mae = 0.0;
    double mse = 0.0;
    double rse = 0.0;
    double rse_numerator = 0.0;    // sum of squared errors
    double rse_denominator = 0.0;  // sum of squared deviations of actuals from their mean
    std::size_t count = 0;
    std::size_t mape_count = 0;    // terms with a non-zero actual
    std::size_t zero_actuals = 0;  // terms left out of MAPE
};

// MAPE = mean |p - y| / |y| over y != 0; MAE, MSE over all terms;
// RSE = sqrt(sum (p - y)^2 / sum (y - mean y)^2).
inline MetricsReport compute_metrics(std::span<const double> predicted, std::span<const double> actual) {
    if (predicted.size() != actual.size())
        throw ContractError("metrics: " + std::to_string(predicted.size()) + " predictions vs " +
                            std::to_string(actual.size()) + " actuals");
    if (actual.empty()) throw ContractError("metrics: no forecasts to score");
    MetricsReport r;
    r.count = actual.size();
    double mean_y = 0.0;
    for (double y : actual) mean_y += y;
    mean_y /= static_cast<double>(r.count);
    double ape = 0.0, ae = 0.0, se = 0.0, dev = 0.0;
    for (std::size_t i = 0; i < r.count; ++i) {
        const double e = predicted[i] - actual[i];
        ae += std::abs(e);
        se += e * e;
        dev += (actual[i] - mean_y) * (actual[i] - mean_y);
        if (actual[i] == 0.0) {
            ++r.zero_actuals;
        } else {
            ape += std::abs(e) / std::abs(actual[i]);
            ++r.mape_count;
        }
    }
    const auto n = static_cast<double>(r.count);
    r.mae = ae / n;
    r.mse = se / n;
    r.mape = r.mape_count ? ape / static_cast<double>(r.mape_count) : std::numeric_limits<double>::quiet_NaN();
    r.rse_numerator = se;
    r.rse_denominator = dev;
    if (dev > 0.0)
        r.rse = std::sqrt(se / dev);
    else
        r.rse = se == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return r;
}

}  // namespace epigraph::train
